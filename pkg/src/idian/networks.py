"""The eight component networks, masked imputation and domain embeddings."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .core import Mlp, Tape, Tensor
from .errors import ConfigError, DataError

CHECKPOINT_VERSION = 1
NETWORK_NAMES = ("g_i_hat", "g_s", "g_t", "de_s", "de_t", "g", "d", "f")


@dataclass(frozen=True)
class Widths:
    """Hidden sizes; the defaults are the published architecture.

    ``desk()`` divides every width by 8 so a 20-epoch run takes seconds on
    one core; ``uniform`` is for gradient checks and quick tests.
    """

    impute_hidden: int = 512
    extract_hidden: int = 2048
    unified: int = 1024
    decode_hidden: int = 2048
    common_hidden: int = 512
    common: int = 256
    disc_hidden: int = 512

    @classmethod
    def uniform(cls, n: int) -> "Widths":
        return cls(n, n, n, n, n, n, n)

    @classmethod
    def desk(cls) -> "Widths":
        return cls(64, 256, 128, 256, 64, 32, 64)


@dataclass
class IdianModel:
    g_i_hat: Mlp
    g_s: Mlp
    g_t: Mlp
    de_s: Mlp
    de_t: Mlp
    g: Mlp
    d: Mlp
    f: Mlp
    d_s: int
    d_t: int
    n_classes: int
    widths: Widths = field(default_factory=Widths)
    init_seed: int = 0

    def networks(self) -> dict[str, Mlp]:
        return {name: getattr(self, name) for name in NETWORK_NAMES}

    def parameters(self, names=NETWORK_NAMES) -> dict[core.ParamKey, np.ndarray]:
        params = {}
        for name in names:
            params.update(getattr(self, name).parameters())
        return params

    def copy(self) -> "IdianModel":
        return load_state(self.state(), self.descriptor())

    def descriptor(self) -> dict:
        return {
            "d_s": self.d_s,
            "d_t": self.d_t,
            "n_classes": self.n_classes,
            "widths": asdict(self.widths),
            "init_seed": self.init_seed,
            "networks": {name: {"dims": m.dims, "activations": [l.activation for l in m.layers]}
                         for name, m in self.networks().items()},
        }

    def state(self) -> dict[str, np.ndarray]:
        return {f"{n}/{k}/{kind}": a.copy() for (n, k, kind), a in self.parameters().items()}


def build_model(d_s: int, d_t: int, n_classes: int, init_seed: int = 0,
                widths: Widths | None = None) -> IdianModel:
    for name, v in (("d_s", d_s), ("d_t", d_t), ("n_classes", n_classes)):
        if v < 1:
            raise ConfigError(f"{name} must be >= 1, got {v}")
    w = widths or Widths()
    # one child stream per network so changing one width leaves the others' init alone
    children = np.random.SeedSequence(init_seed).spawn(len(NETWORK_NAMES))
    rng = {name: np.random.default_rng(s) for name, s in zip(NETWORK_NAMES, children)}
    spec = {
        "g_i_hat": ([d_t, w.impute_hidden, w.impute_hidden, w.impute_hidden, d_t],
                    ["relu", "relu", "relu", "sigmoid"]),
        "g_s": ([d_s, w.extract_hidden, w.unified], ["relu", "identity"]),
        "g_t": ([d_t, w.extract_hidden, w.unified], ["relu", "identity"]),
        "de_s": ([w.unified, w.decode_hidden, d_s], ["relu", "identity"]),
        "de_t": ([w.unified, w.decode_hidden, d_t], ["relu", "identity"]),
        "g": ([w.unified, w.common_hidden, w.common], ["relu", "identity"]),
        "d": ([w.common, w.disc_hidden, 1], ["relu", "sigmoid"]),
        "f": ([w.common, n_classes], ["softmax"]),
    }
    nets = {name: Mlp.build(name, dims, acts, rng[name]) for name, (dims, acts) in spec.items()}
    return IdianModel(**nets, d_s=d_s, d_t=d_t, n_classes=n_classes, widths=w, init_seed=init_seed)


class NoiseSource:
    """Standard-normal noise for the imputer.

    ``draw`` consumes a sequential stream (training); ``for_rows`` gives each
    row index its own independent draw so evaluation does not depend on
    iteration order.
    """

    def __init__(self, seed: int):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def draw(self, shape) -> np.ndarray:
        return self._rng.standard_normal(shape)

    def for_rows(self, rows, dim: int) -> np.ndarray:
        out = np.empty((len(rows), dim))
        for i, r in enumerate(rows):
            out[i] = np.random.default_rng([self.seed, int(r)]).standard_normal(dim)
        return out


def impute(model: IdianModel, x, m, noise, tape: Tape | None = None) -> Tensor:
    """Fill the missing entries of ``x`` (``m == 0``) with the imputer output.

    ``noise`` is a :class:`NoiseSource` or a pre-drawn array shaped like ``x``.
    Observed entries pass through unchanged, bit for bit.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    m = np.atleast_2d(np.asarray(m, dtype=np.float64))
    if x.shape != m.shape or x.shape[1] != model.d_t:
        raise ConfigError(f"features {x.shape} and mask {m.shape} must both have {model.d_t} columns")
    eps = noise.draw(x.shape) if isinstance(noise, NoiseSource) else np.asarray(noise, dtype=np.float64)
    if eps.shape != x.shape:
        raise ConfigError(f"noise shape {eps.shape} does not match features {x.shape}")
    missing = 1.0 - m
    observed = x * m
    filled = core.forward(model.g_i_hat, observed + eps * missing, tape)
    # adding the zero-masked generator output leaves observed entries exact
    return core.add(observed, core.mul(filled, missing))


@dataclass
class Embeddings:
    f_s: Tensor | None
    f_t_labeled: Tensor
    f_t_unlabeled: Tensor
    x_t_labeled: Tensor
    x_t_unlabeled: Tensor


def embed(model: IdianModel, batch, noise, tape: Tape | None = None,
          use_imputation: bool = True, use_source: bool = True) -> Embeddings:
    """Unified-space features for every block of ``batch``.

    ``noise`` is a :class:`NoiseSource` or a pair of arrays for the labeled
    and unlabeled target blocks. Without imputation the zero placeholders are
    fed to the target extractor directly.
    """
    if isinstance(noise, NoiseSource):
        eps_l = noise.draw(batch.target_labeled_x.shape)
        eps_u = noise.draw(batch.target_unlabeled_x.shape)
    else:
        eps_l, eps_u = noise
    if use_imputation:
        x_l = impute(model, batch.target_labeled_x, batch.target_labeled_m, eps_l, tape)
        x_u = impute(model, batch.target_unlabeled_x, batch.target_unlabeled_m, eps_u, tape)
    else:
        x_l = Tensor(batch.target_labeled_x * batch.target_labeled_m)
        x_u = Tensor(batch.target_unlabeled_x * batch.target_unlabeled_m)
    f_s = core.forward(model.g_s, batch.source_x, tape) if use_source else None
    n_l = batch.target_labeled_x.shape[0]
    f_t = core.forward(model.g_t, core.concat([x_l, x_u]), tape)
    f_tl, f_tu = core.rows(f_t, 0, n_l), core.rows(f_t, n_l, f_t.shape[0])
    return Embeddings(f_s, f_tl, f_tu, x_l, x_u)


def predict_proba(model: IdianModel, x, m, eval_seed: int, rows=None, use_imputation: bool = True) -> np.ndarray:
    """Class probabilities for target rows, with per-row fixed noise."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    if use_imputation:
        rows = np.arange(len(x)) if rows is None else rows
        eps = NoiseSource(eval_seed).for_rows(rows, model.d_t)
        x_hat = impute(model, x, m, eps)
    else:
        x_hat = Tensor(x * m)
    h = core.forward(model.g, core.forward(model.g_t, x_hat))
    return core.forward(model.f, h).value


# --- checkpoints ----------------------------------------------------------


def save_checkpoint(model: IdianModel, path, master_seed: int | None = None,
                    config_hash: str = "", extra: dict | None = None) -> None:
    header = {
        "version": CHECKPOINT_VERSION,
        "architecture": model.descriptor(),
        "master_seed": master_seed,
        "config_hash": config_hash,
        "extra": extra or {},
    }
    arrays = {f"param:{k}": v for k, v in model.state().items()}
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        np.savez(fh, header=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)
    tmp.replace(path)


def load_checkpoint(path) -> tuple[IdianModel, dict]:
    try:
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            state = {k[len("param:"):]: z[k].copy() for k in z.files if k.startswith("param:")}
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if header.get("version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version {header.get('version')}")
    return load_state(state, header["architecture"]), header


def load_state(state: dict[str, np.ndarray], descriptor: dict) -> IdianModel:
    widths = Widths(**descriptor["widths"])
    model = build_model(descriptor["d_s"], descriptor["d_t"], descriptor["n_classes"],
                        descriptor.get("init_seed", 0), widths)
    params = model.parameters()
    for (name, k, kind), array in params.items():
        stored = state[f"{name}/{k}/{kind}"]
        if stored.shape != array.shape:
            raise DataError(f"checkpoint array {name}/{k}/{kind} has shape {stored.shape}, expected {array.shape}")
        array[...] = stored
    return model
