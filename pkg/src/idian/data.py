"""Datasets with observation masks: CSV I/O, missingness, scaling, batching.

Missing feature entries are stored as 0 with mask 0. Unlabeled rows carry
label -1 internally.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, UsageError

UNLABELED = -1


def derive_seed(master_seed: int, purpose: str) -> int:
    """Independent, reproducible seed for one consumer of randomness."""
    ss = np.random.SeedSequence([int(master_seed), zlib.crc32(purpose.encode())])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass(frozen=True)
class Instance:
    features: np.ndarray
    mask: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class DomainDataset:
    """Rows of one domain. Arrays are read-only after construction."""

    domain: str
    features: np.ndarray
    masks: np.ndarray
    labels: np.ndarray
    n_classes: int
    labeled_count: int | None = None

    def __post_init__(self):
        if self.domain not in ("source", "target"):
            raise ConfigError(f"domain must be 'source' or 'target', got {self.domain!r}")
        x = np.array(self.features, dtype=np.float64, ndmin=2)
        m = np.array(self.masks, dtype=np.float64, ndmin=2)
        y = np.array(self.labels, dtype=np.int64).reshape(-1)
        if x.shape != m.shape:
            raise ConfigError(f"features {x.shape} and masks {m.shape} differ in shape")
        if y.shape[0] != x.shape[0]:
            raise ConfigError(f"{y.shape[0]} labels for {x.shape[0]} rows")
        if not np.isin(m, (0.0, 1.0)).all():
            raise ConfigError("masks must be 0/1")
        if np.any(x * (1.0 - m) != 0.0):
            raise ConfigError("missing entries must hold the 0 placeholder")
        if np.any((y != UNLABELED) & ((y < 0) | (y >= self.n_classes))):
            raise ConfigError(f"labels must lie in [0, {self.n_classes})")
        if self.domain == "source":
            if not (m == 1.0).all():
                raise ConfigError("source instances must be fully observed")
            if np.any(y == UNLABELED):
                raise ConfigError("source instances must all be labeled")
        for a in (x, m, y):
            a.setflags(write=False)
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "masks", m)
        object.__setattr__(self, "labels", y)
        if self.labeled_count is None:
            object.__setattr__(self, "labeled_count", int(np.sum(y != UNLABELED)))

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def instances(self) -> list[Instance]:
        return [
            Instance(self.features[i], self.masks[i], None if self.labels[i] == UNLABELED else int(self.labels[i]))
            for i in range(len(self))
        ]

    @property
    def fully_observed(self) -> bool:
        return bool((self.masks == 1.0).all())

    def replace(self, **changes) -> "DomainDataset":
        fields = dict(domain=self.domain, features=self.features, masks=self.masks,
                      labels=self.labels, n_classes=self.n_classes, labeled_count=self.labeled_count)
        fields.update(changes)
        return DomainDataset(**fields)

    def subset(self, rows) -> "DomainDataset":
        rows = np.asarray(rows, dtype=np.int64)
        return DomainDataset(self.domain, self.features[rows], self.masks[rows], self.labels[rows],
                             self.n_classes)

    @classmethod
    def from_instances(cls, domain: str, instances, n_classes: int, dim: int | None = None) -> "DomainDataset":
        instances = list(instances)
        if instances:
            x = np.stack([i.features for i in instances])
            m = np.stack([i.mask for i in instances])
        else:
            x = m = np.zeros((0, dim or 0))
        y = [UNLABELED if i.label is None else i.label for i in instances]
        return cls(domain, x, m, np.asarray(y, dtype=np.int64), n_classes)


# --- CSV ------------------------------------------------------------------


def load_csv(path, domain: str, n_classes: int) -> DomainDataset:
    """Read ``label,f0,...,f{d-1}``; empty fields mean missing / unlabeled."""
    path = Path(path)
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "label" or len(header) < 2:
            raise DataError(f"{path}: header must be 'label,f0,...'")
        d = len(header) - 1
        xs, ms, ys = [], [], []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 1:
                raise DataError(f"{path}: row {rownum} has {len(row) - 1} feature fields, header has {d}")
            label = row[0].strip()
            if label == "":
                ys.append(UNLABELED)
            else:
                try:
                    y = int(label)
                except ValueError:
                    raise DataError(f"{path}: row {rownum} label {label!r} is not an integer") from None
                if not 0 <= y < n_classes:
                    raise DataError(f"{path}: row {rownum} label {y} outside [0, {n_classes})")
                ys.append(y)
            x = np.zeros(d)
            m = np.zeros(d)
            for k, field_ in enumerate(row[1:]):
                field_ = field_.strip()
                if field_ == "":
                    continue
                try:
                    x[k] = float(field_)
                except ValueError:
                    raise DataError(f"{path}: row {rownum} field f{k} {field_!r} is not numeric") from None
                if not np.isfinite(x[k]):
                    raise DataError(f"{path}: row {rownum} field f{k} is not finite")
                m[k] = 1.0
            xs.append(x)
            ms.append(m)
    x = np.array(xs).reshape(len(xs), d)
    m = np.array(ms).reshape(len(ms), d)
    try:
        return DomainDataset(domain, x, m, np.array(ys, dtype=np.int64), n_classes)
    except ConfigError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_csv(ds: DomainDataset, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"f{k}" for k in range(ds.dim)])
        for x, m, y in zip(ds.features, ds.masks, ds.labels):
            cells = [repr(float(v)) if o else "" for v, o in zip(x, m)]
            w.writerow(["" if y == UNLABELED else str(int(y))] + cells)
    tmp.replace(path)


def write_mask_csv(ds: DomainDataset, path) -> None:
    """0/1 audit file with the same shape as the feature block."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"f{k}" for k in range(ds.dim)])
        w.writerows(ds.masks.astype(int).tolist())
    tmp.replace(path)


# --- transformations ------------------------------------------------------


@dataclass(frozen=True)
class MissingSpec:
    rate: float
    seed: int = 0
    mechanism: str = "MCAR"
    exact_per_instance: bool = False

    def __post_init__(self):
        if not 0.0 <= self.rate < 1.0:
            raise ConfigError(f"missing rate must lie in [0, 1), got {self.rate}")
        if self.mechanism != "MCAR":
            raise ConfigError(f"only MCAR missingness is supported, got {self.mechanism!r}")


def simulate_missing(ds: DomainDataset, spec: MissingSpec) -> DomainDataset:
    """Hide entries at random and zero them.

    By default each entry is dropped independently with probability
    ``spec.rate``; ``exact_per_instance`` drops ``round(rate * d)`` entries
    from every row instead.
    """
    if not ds.fully_observed:
        raise UsageError("dataset already has missing entries; masking twice is not allowed")
    rng = np.random.default_rng(spec.seed)
    n, d = ds.features.shape
    if spec.exact_per_instance:
        k = int(round(spec.rate * d))
        order = rng.random((n, d)).argsort(axis=1)
        mask = np.ones((n, d))
        np.put_along_axis(mask, order[:, :k], 0.0, axis=1)
    else:
        mask = (rng.random((n, d)) >= spec.rate).astype(np.float64)
    return ds.replace(features=ds.features * mask, masks=mask)


def channel_permutation(dim: int, seed: int | None) -> np.ndarray:
    if seed is None:
        return np.arange(dim)
    return np.random.default_rng(seed).permutation(dim)


def permute_channels(ds: DomainDataset, perm) -> DomainDataset:
    """Column ``k`` of the result is column ``perm[k]`` of ``ds``."""
    perm = np.asarray(perm, dtype=np.int64)
    if sorted(perm.tolist()) != list(range(ds.dim)):
        raise ConfigError(f"not a permutation of {ds.dim} channels")
    return ds.replace(features=ds.features[:, perm], masks=ds.masks[:, perm])


def shuffle_channels(ds: DomainDataset, seed: int | None) -> DomainDataset:
    """One global feature reordering shared by every row; ``seed=None`` keeps the order."""
    return permute_channels(ds, channel_permutation(ds.dim, seed))


@dataclass(frozen=True)
class MinMaxScaler:
    low: np.ndarray
    span: np.ndarray  # 0 marks a constant (or never observed) dimension

    def transform(self, ds: DomainDataset, clip: bool = True) -> DomainDataset:
        x = ds.features
        safe = np.where(self.span > 0, self.span, 1.0)
        scaled = np.where(self.span > 0, (x - self.low) / safe, 0.5)
        if clip:
            scaled = np.clip(scaled, 0.0, 1.0)
        return ds.replace(features=scaled * ds.masks)


def minmax_normalize(train: DomainDataset) -> tuple[DomainDataset, MinMaxScaler]:
    """Fit per-dimension min/max on observed entries and map them to [0, 1]."""
    if len(train) == 0:
        raise UsageError("cannot normalise an empty dataset")
    observed = train.masks == 1.0
    low = np.where(observed, train.features, np.inf).min(axis=0)
    high = np.where(observed, train.features, -np.inf).max(axis=0)
    seen = np.isfinite(low)
    low = np.where(seen, low, 0.0)
    span = np.where(seen, high - low, 0.0)
    scaler = MinMaxScaler(low, span)
    return scaler.transform(train), scaler


def select_labeled(ds: DomainDataset, per_class: int, seed: int) -> DomainDataset:
    """Keep labels on ``per_class`` random rows of each class, placed first.

    All other rows become unlabeled. Requires every row of ``ds`` labeled.
    """
    if np.any(ds.labels == UNLABELED):
        raise UsageError("labeled selection needs a fully labeled dataset")
    rng = np.random.default_rng(seed)
    chosen = []
    for c in range(ds.n_classes):
        rows = np.flatnonzero(ds.labels == c)
        if len(rows) < per_class:
            raise ConfigError(f"class {c} has {len(rows)} target instances, fewer than {per_class} requested")
        chosen.append(rng.choice(rows, size=per_class, replace=False))
    labeled = np.sort(np.concatenate(chosen)) if chosen else np.zeros(0, dtype=np.int64)
    rest = np.setdiff1d(np.arange(len(ds)), labeled)
    order = np.concatenate([labeled, rest])
    labels = ds.labels[order].copy()
    labels[len(labeled):] = UNLABELED
    return DomainDataset(ds.domain, ds.features[order], ds.masks[order], labels, ds.n_classes,
                         labeled_count=len(labeled))


def split_rows(ds: DomainDataset, fraction: float, seed: int) -> tuple[DomainDataset, DomainDataset]:
    """Random split into (first ``fraction`` of rows, remainder)."""
    if not 0.0 < fraction < 1.0:
        raise ConfigError(f"split fraction must lie in (0, 1), got {fraction}")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = int(round(fraction * len(ds)))
    return ds.subset(np.sort(order[:cut])), ds.subset(np.sort(order[cut:]))


# --- batches --------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    source_x: np.ndarray
    source_y: np.ndarray
    target_labeled_x: np.ndarray
    target_labeled_m: np.ndarray
    target_labeled_y: np.ndarray
    target_unlabeled_x: np.ndarray
    target_unlabeled_m: np.ndarray
    source_rows: np.ndarray = field(default=None, repr=False)

    @property
    def size(self) -> int:
        return self.source_x.shape[0]


def _draw(pool: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    return rng.choice(pool, size=n, replace=len(pool) < n)


def compose_batches(source: DomainDataset, target: DomainDataset, batch_size: int,
                    epoch_seed: int) -> list[Batch]:
    """One epoch of composite batches.

    The source is reshuffled into ``len(source) // batch_size`` disjoint
    blocks (the remainder is dropped); each is joined by a labeled-target
    block (the first ``target.labeled_count`` rows) and an unlabeled-target
    block, both sampled with replacement only when their pool is too small.
    """
    if batch_size < 1:
        raise ConfigError(f"batch size must be >= 1, got {batch_size}")
    if len(source) < batch_size:
        raise ConfigError(f"source has {len(source)} rows, fewer than batch size {batch_size}")
    n_l = target.labeled_count
    if n_l < 1:
        raise ConfigError("the labeled target pool is empty; at least one labeled target row is required")
    labeled_pool = np.arange(n_l)
    unlabeled_pool = np.arange(n_l, len(target))
    if len(unlabeled_pool) == 0:
        unlabeled_pool = np.arange(len(target))
    rng = np.random.default_rng(epoch_seed)
    order = rng.permutation(len(source))
    batches = []
    for j in range(len(source) // batch_size):
        s = order[j * batch_size:(j + 1) * batch_size]
        lab = _draw(labeled_pool, batch_size, rng)
        unl = _draw(unlabeled_pool, batch_size, rng)
        batches.append(Batch(
            source_x=source.features[s],
            source_y=source.labels[s],
            target_labeled_x=target.features[lab],
            target_labeled_m=target.masks[lab],
            target_labeled_y=target.labels[lab],
            target_unlabeled_x=target.features[unl],
            target_unlabeled_m=target.masks[unl],
            source_rows=s,
        ))
    return batches


# --- synthetic domains ----------------------------------------------------


def _rotation(k: int, rng: np.random.Generator) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def make_synthetic(n_per_class: int, n_classes: int, d_s: int, d_t: int, shift_seed: int,
                   separation: float = 3.0, noise: float = 1.0, shift: bool = True,
                   sample_seed: int | None = None) -> tuple[DomainDataset, DomainDataset]:
    """Two domains sharing class structure in a latent space of dim ``min(d_s, d_t) // 2``.

    Class centres sit at ``separation`` times random unit directions and
    points scatter around them with isotropic ``noise``. The source is a
    random linear image of the latent; the target applies a random rotation
    and a different linear map, then squashes values through a sigmoid.
    With ``shift=False`` both domains use the source map and nothing is
    squashed, so they are identically distributed (requires ``d_s == d_t``).
    """
    if min(d_s, d_t) < n_classes:
        raise ConfigError("d_s and d_t must be at least n_classes")
    if not shift and d_s != d_t:
        raise ConfigError("an unshifted task needs d_s == d_t")
    k = max(1, min(d_s, d_t) // 2)
    geo = np.random.default_rng(shift_seed)
    centres = geo.standard_normal((n_classes, k))
    centres *= separation / np.linalg.norm(centres, axis=1, keepdims=True)
    map_s = geo.standard_normal((k, d_s)) / np.sqrt(k)
    rot = _rotation(k, geo)
    map_t = geo.standard_normal((k, d_t)) / np.sqrt(k)

    sampler = np.random.default_rng(shift_seed if sample_seed is None else sample_seed)
    labels = np.repeat(np.arange(n_classes), n_per_class)

    def latent():
        return centres[labels] + noise * sampler.standard_normal((len(labels), k))

    xs = latent() @ map_s
    z_t = latent()
    if shift:
        xt = 1.0 / (1.0 + np.exp(-(z_t @ rot @ map_t)))
    else:
        xt = z_t @ map_s
    source = DomainDataset("source", xs, np.ones_like(xs), labels, n_classes)
    target = DomainDataset("target", xt, np.ones_like(xt), labels, n_classes)
    return source, target
