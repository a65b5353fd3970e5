"""Config-driven experiment runner: data preparation, training grid, result files."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import data as data_mod
from .data import DomainDataset, MissingSpec, derive_seed
from .errors import ConfigError
from .metrics import EvalReport, evaluate
from .networks import Widths, build_model, save_checkpoint
from .trainer import VARIANTS, TrainConfig, TrainHistory, build_variant, train

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

METRICS = ("acc", "auc", "precision", "recall", "f1")


@dataclass(frozen=True)
class DataConfig:
    source_csv: str | None = None
    target_csv: str | None = None
    n_per_class: int = 500
    n_classes: int = 3
    d_s: int = 20
    d_t: int = 16
    separation: float = 3.0
    noise: float = 1.0
    shift: bool = True
    data_seed: int = 0
    missing_rate: float = 0.4
    exact_per_instance: bool = False
    shuffle_channels: bool = True
    labeled_per_class: int = 10
    train_fraction: float = 0.5


@dataclass(frozen=True)
class ModelConfig:
    d_s: int | None = None
    d_t: int | None = None
    n_classes: int | None = None
    widths: Widths = field(default_factory=Widths)


@dataclass(frozen=True)
class RunConfig:
    name: str = "experiment"
    variants: tuple[str, ...] = ("full",)
    repeats: int = 5
    base_seed: int = 0
    eval_seed: int = 0
    output_dir: str = "results"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["run"]["variants"] = list(self.run.variants)
        d["train"]["lambda"] = d["train"].pop("lam")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _build(cls, section: str, raw: dict):
    if not isinstance(raw, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        name = "lam" if (cls is TrainConfig and key == "lambda") else key
        if name not in known:
            raise ConfigError(f"{section}.{key}: unknown field")
        if name == "widths":
            value = _widths(section, value)
        elif name == "variants":
            if isinstance(value, str):
                value = [value]
            for v in value:
                if v not in VARIANTS:
                    raise ConfigError(f"{section}.variants: unknown variant {v!r}")
            value = tuple(value)
        else:
            value = _coerce(f"{section}.{key}", known[name], value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"[{section}] {exc}") from None


def _coerce(where: str, f, value):
    kind = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
    if value is None:
        return value
    if kind.startswith("bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
    elif kind.startswith("int"):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
    elif kind.startswith("float"):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        value = float(value)
    elif kind.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
    return value


def _widths(section: str, value) -> Widths:
    if value == "published":
        return Widths()
    if value == "desk":
        return Widths.desk()
    if isinstance(value, int) and not isinstance(value, bool):
        return Widths.uniform(value)
    if isinstance(value, dict):
        known = {f.name for f in fields(Widths)}
        for key, v in value.items():
            if key not in known:
                raise ConfigError(f"{section}.widths.{key}: unknown field")
            if isinstance(v, bool) or not isinstance(v, int) or v < 1:
                raise ConfigError(f"{section}.widths.{key}: expected a positive integer")
        return Widths(**value)
    raise ConfigError(f"{section}.widths: expected 'published', 'desk', an integer or a table")


def config_from_dict(raw: dict) -> ExperimentConfig:
    unknown = set(raw) - {"data", "model", "train", "run"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {', '.join(sorted(unknown))}")
    cfg = ExperimentConfig(
        data=_build(DataConfig, "data", raw.get("data", {})),
        model=_build(ModelConfig, "model", raw.get("model", {})),
        train=_build(TrainConfig, "train", raw.get("train", {})),
        run=_build(RunConfig, "run", raw.get("run", {})),
    )
    validate(cfg)
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw)


def validate(cfg: ExperimentConfig) -> None:
    d, t, r = cfg.data, cfg.train, cfg.run
    if not 0.0 <= d.missing_rate < 1.0:
        raise ConfigError(f"data.missing_rate: must lie in [0, 1), got {d.missing_rate}")
    if not 0.0 < d.train_fraction < 1.0:
        raise ConfigError(f"data.train_fraction: must lie in (0, 1), got {d.train_fraction}")
    if d.labeled_per_class < 1:
        raise ConfigError("data.labeled_per_class: must be >= 1")
    if (d.source_csv is None) != (d.target_csv is None):
        raise ConfigError("data.source_csv and data.target_csv must be given together")
    if d.source_csv is None and min(d.d_s, d.d_t) < d.n_classes:
        raise ConfigError("data.d_s / data.d_t: must be at least data.n_classes")
    if t.eta <= 0:
        raise ConfigError(f"train.eta: must be > 0, got {t.eta}")
    if t.epochs < 1:
        raise ConfigError(f"train.epochs: must be >= 1, got {t.epochs}")
    if r.repeats < 1:
        raise ConfigError("run.repeats: must be >= 1")
    if not r.variants:
        raise ConfigError("run.variants: at least one variant is required")


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, variant: str | None = None,
                   out: str | None = None, missing_rate: float | None = None) -> ExperimentConfig:
    run, data = cfg.run, cfg.data
    if seed is not None:
        run = replace(run, base_seed=seed)
    if variant is not None:
        if variant not in VARIANTS:
            raise ConfigError(f"--variant: unknown variant {variant!r}")
        run = replace(run, variants=(variant,))
    if out is not None:
        run = replace(run, output_dir=out)
    if missing_rate is not None:
        data = replace(data, missing_rate=missing_rate)
    new = replace(cfg, run=run, data=data)
    validate(new)
    return new


# --- data -----------------------------------------------------------------


@dataclass
class PreparedData:
    source: DomainDataset
    target: DomainDataset  # training split, labeled rows first
    target_labeled: DomainDataset
    test: DomainDataset
    permutation: np.ndarray


def load_domains(cfg: ExperimentConfig) -> tuple[DomainDataset, DomainDataset]:
    d = cfg.data
    if d.source_csv is not None:
        n_c = cfg.model.n_classes or d.n_classes
        source = data_mod.load_csv(d.source_csv, "source", n_c)
        target = data_mod.load_csv(d.target_csv, "target", n_c)
        return source, target
    return data_mod.make_synthetic(d.n_per_class, d.n_classes, d.d_s, d.d_t, d.data_seed,
                                   separation=d.separation, noise=d.noise, shift=d.shift)


def prepare_data(cfg: ExperimentConfig, seed: int) -> PreparedData:
    """Split, scale, mask, reorder channels and pick labeled rows for one repeat.

    Missingness covers the whole target domain (train and test); scaling is
    fitted on the training split.
    """
    d = cfg.data
    source, target = load_domains(cfg)
    if not source.fully_observed:
        raise ConfigError("source data must be fully observed")
    if np.any(target.labels == data_mod.UNLABELED):
        raise ConfigError("target data must be fully labeled before the labeled subset is drawn")
    source, _ = data_mod.minmax_normalize(source)
    train_t, test_t = data_mod.split_rows(target, d.train_fraction, derive_seed(seed, "split"))
    pre_masked = not target.fully_observed
    train_t, scaler = data_mod.minmax_normalize(train_t)
    test_t = scaler.transform(test_t)
    if d.missing_rate > 0 and not pre_masked:
        spec = dict(rate=d.missing_rate, exact_per_instance=d.exact_per_instance)
        train_t = data_mod.simulate_missing(train_t, MissingSpec(seed=derive_seed(seed, "mask/train"), **spec))
        test_t = data_mod.simulate_missing(test_t, MissingSpec(seed=derive_seed(seed, "mask/test"), **spec))
    perm = data_mod.channel_permutation(train_t.dim, derive_seed(seed, "channels") if d.shuffle_channels else None)
    train_t = data_mod.permute_channels(train_t, perm)
    test_t = data_mod.permute_channels(test_t, perm)
    train_t = data_mod.select_labeled(train_t, d.labeled_per_class, derive_seed(seed, "labeled"))
    labeled = train_t.subset(np.arange(train_t.labeled_count))
    return PreparedData(source, train_t, labeled, test_t, perm)


# --- runs -----------------------------------------------------------------


@dataclass
class ResultRecord:
    variant: str
    seed: int
    eval: EvalReport
    final_losses: dict | None
    config_hash: str
    runtime_seconds: float
    skipped_steps: int = 0

    def to_json(self, cfg: ExperimentConfig, train_config: TrainConfig) -> dict:
        return {
            "variant": self.variant,
            "seed": self.seed,
            "eval": self.eval.as_dict(),
            "final_losses": self.final_losses,
            "config_hash": self.config_hash,
            "runtime_seconds": self.runtime_seconds,
            "skipped_steps": self.skipped_steps,
            "config": cfg.as_dict(),
            "train_config": train_config.as_dict(),
        }


def run_single(cfg: ExperimentConfig, variant: str, seed: int, prepared: PreparedData | None = None):
    """Train and evaluate one (variant, seed); returns (record, history, model, train config)."""
    prepared = prepared or prepare_data(cfg, seed)
    tcfg = build_variant(replace(cfg.train, master_seed=seed), variant)
    m = cfg.model
    model = build_model(m.d_s or prepared.source.dim, m.d_t or prepared.target.dim,
                        m.n_classes or prepared.source.n_classes, derive_seed(seed, "init"), m.widths)
    started = time.perf_counter()
    model, history = train(model, prepared.source, prepared.target, tcfg)
    report = evaluate(model, prepared.test, cfg.run.eval_seed, tcfg.imputation)
    runtime = time.perf_counter() - started
    final = history.final.as_dict() if history.final else None
    record = ResultRecord(variant, seed, report, final, cfg.hash(), runtime, history.skipped_steps)
    return record, history, model, tcfg


def write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True))
    os.replace(tmp, path)


HISTORY_FIELDS = ["variant", "seed", "epoch", "step", "l_cls", "l_ae", "l_cont", "l_adv", "l_total"]


def history_rows(variant: str, seed: int, history: TrainHistory):
    for s in history.steps:
        yield {"variant": variant, "seed": seed, "epoch": s.epoch, "step": s.step, **s.losses.as_dict()}


def write_csv_rows(path, fieldnames, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames)
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


def summarize(records: list[dict]) -> list[dict]:
    """Mean and sample std of each metric per variant, in first-seen variant order."""
    by_variant: dict[str, list[dict]] = {}
    for r in records:
        by_variant.setdefault(r["variant"], []).append(r)
    rows = []
    for variant, recs in by_variant.items():
        row = {"variant": variant, "n_runs": len(recs)}
        for metric in METRICS:
            vals = [r["eval"][metric] for r in recs if r["eval"][metric] is not None]
            if vals:
                row[f"{metric}_mean"] = float(np.mean(vals))
                row[f"{metric}_std"] = float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0
            else:
                row[f"{metric}_mean"] = row[f"{metric}_std"] = ""
        rows.append(row)
    return rows


SUMMARY_FIELDS = ["variant", "n_runs"] + [f"{m}_{s}" for m in METRICS for s in ("mean", "std")]


def summarize_dir(exp_dir) -> list[dict]:
    """Rebuild the summary from the per-run JSON files (variant order from config.json if present)."""
    exp_dir = Path(exp_dir)
    records = []
    for variant_dir in sorted(p for p in exp_dir.iterdir() if p.is_dir()):
        for f in sorted(variant_dir.glob("seed*.json"), key=lambda p: int(p.stem[4:])):
            records.append(json.loads(f.read_text()))
    order = {}
    saved = exp_dir / "config.json"
    if saved.exists():
        for v in json.loads(saved.read_text())["config"]["run"]["variants"]:
            order.setdefault(v, len(order))
    for r in records:
        order.setdefault(r["variant"], len(order))
    records.sort(key=lambda r: (order[r["variant"]], r["seed"]))
    return summarize(records)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> Path:
    """Every (variant, repeat) pair; writes per-run JSON, summary.csv and history.csv.

    Returns the experiment directory.
    """
    exp_dir = Path(out_dir or cfg.run.output_dir) / cfg.run.name
    exp_dir.mkdir(parents=True, exist_ok=True)
    records, history = [], []
    seeds = [cfg.run.base_seed + k for k in range(cfg.run.repeats)]
    for seed in seeds:
        prepared = prepare_data(cfg, seed)
        for variant in cfg.run.variants:
            record, hist, _, tcfg = run_single(cfg, variant, seed, prepared)
            payload = record.to_json(cfg, tcfg)
            write_json(exp_dir / variant / f"seed{seed}.json", payload)
            records.append(payload)
            history.extend(history_rows(variant, seed, hist))
            log.info("%s seed %d: acc=%.4f (%.1fs)", variant, seed, record.eval.acc, record.runtime_seconds)
    order = {v: i for i, v in enumerate(cfg.run.variants)}
    records.sort(key=lambda r: (order[r["variant"]], r["seed"]))
    write_csv_rows(exp_dir / "summary.csv", SUMMARY_FIELDS, summarize(records))
    history.sort(key=lambda r: (order[r["variant"]], r["seed"], r["step"]))
    write_csv_rows(exp_dir / "history.csv", HISTORY_FIELDS, history)
    write_json(exp_dir / "config.json", {"config": cfg.as_dict(), "config_hash": cfg.hash()})
    return exp_dir


def run_train(cfg: ExperimentConfig, variant: str, seed: int, out_dir) -> Path:
    """One run with its checkpoint, result JSON and loss history."""
    out = Path(out_dir)
    record, hist, model, tcfg = run_single(cfg, variant, seed)
    write_json(out / f"seed{seed}.json", record.to_json(cfg, tcfg))
    write_csv_rows(out / "history.csv", HISTORY_FIELDS, history_rows(variant, seed, hist))
    save_checkpoint(model, out / "model.npz", seed, cfg.hash(),
                    extra={"variant": variant, "imputation": tcfg.imputation, "eval_seed": cfg.run.eval_seed})
    return out


def run_prepare(cfg: ExperimentConfig, seed: int, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    p = prepare_data(cfg, seed)
    data_mod.write_csv(p.source, out / "source.csv")
    data_mod.write_csv(p.target, out / "target_train.csv")
    data_mod.write_csv(p.test, out / "target_test.csv")
    data_mod.write_mask_csv(p.target, out / "target_train_mask.csv")
    data_mod.write_mask_csv(p.test, out / "target_test_mask.csv")
    write_json(out / "prepare.json", {"seed": seed, "channel_permutation": p.permutation.tolist(),
                                      "labeled_count": p.target.labeled_count, "config": cfg.as_dict()})
    return out
