"""The min-max training loop with per-network gradient routing."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from . import core, losses
from .core import GradientSet, Tape, Tensor
from .data import Batch, DomainDataset, compose_batches, derive_seed
from .errors import ConfigError, NumericError, UsageError
from .losses import LossReport
from .networks import IdianModel, NoiseSource, embed

log = logging.getLogger(__name__)

VARIANTS = ("full", "target_only", "dann", "no_imputation", "no_ae", "no_contrastive")


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 1.0
    beta: float = 10.0
    gamma: float = 10.0
    lam: float = 10.0
    rho: float = 1.0
    eta: float = 0.01
    batch_size: int = 128
    epochs: int = 20
    master_seed: int = 0
    imputation: bool = True
    ae_loss: bool = True
    contrastive_loss: bool = True
    adversarial_loss: bool = True
    use_source: bool = True
    pairs: str = "union"
    # "descend": D minimises the adversarial loss (the min-max objective);
    # "ascend": D follows the literal "+" sign of the published update rule.
    discriminator_direction: str = "descend"

    def __post_init__(self):
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("alpha", "beta", "gamma", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.rho <= 0:
            raise ConfigError(f"rho must be > 0, got {self.rho}")
        if self.pairs not in ("union", "cross-only"):
            raise ConfigError(f"pairs must be 'union' or 'cross-only', got {self.pairs!r}")
        if self.discriminator_direction not in ("descend", "ascend"):
            raise ConfigError("discriminator_direction must be 'descend' or 'ascend'")
        if not self.use_source and self.adversarial_loss:
            raise ConfigError("the adversarial loss needs source data")

    def as_dict(self) -> dict:
        return asdict(self)


def build_variant(config: TrainConfig, variant: str) -> TrainConfig:
    if variant == "full":
        return config
    if variant == "target_only":
        return replace(config, alpha=0.0, beta=0.0, gamma=0.0, lam=0.0, imputation=False,
                       ae_loss=False, contrastive_loss=False, adversarial_loss=False, use_source=False)
    if variant == "dann":
        return replace(config, beta=0.0, gamma=0.0, imputation=False, ae_loss=False, contrastive_loss=False)
    if variant == "no_imputation":
        return replace(config, imputation=False)
    if variant == "no_ae":
        return replace(config, beta=0.0, ae_loss=False)
    if variant == "no_contrastive":
        return replace(config, gamma=0.0, contrastive_loss=False)
    raise UsageError(f"unknown variant {variant!r}; expected one of {', '.join(VARIANTS)}")


@dataclass
class BatchLosses:
    l_cls: Tensor
    l_ae: Tensor
    l_cont: Tensor
    l_adv: Tensor
    total: Tensor

    def report(self) -> LossReport:
        return LossReport(float(self.l_cls), float(self.l_ae), float(self.l_cont),
                          float(self.l_adv), float(self.total))


_ZERO = Tensor(0.0)


def batch_losses(model: IdianModel, batch: Batch, config: TrainConfig, noise,
                 tape: Tape | None = None) -> BatchLosses:
    """Every loss term for one composite batch, switched-off terms as constant 0."""
    emb = embed(model, batch, noise, tape, use_imputation=config.imputation, use_source=config.use_source)
    n_s = batch.source_x.shape[0] if config.use_source else 0
    n_l = batch.target_labeled_x.shape[0]

    l_ae = _ZERO
    if config.ae_loss:
        f_t = core.concat([emb.f_t_labeled, emb.f_t_unlabeled])
        x_t = core.concat([emb.x_t_labeled, emb.x_t_unlabeled])
        recon_t = core.forward(model.de_t, f_t, tape)
        if config.use_source:
            recon_s = core.forward(model.de_s, emb.f_s, tape)
            l_ae = losses.loss_ae(recon_s, batch.source_x, recon_t, x_t)
        else:
            l_ae = losses.reconstruction_error(recon_t, x_t)

    l_cont = _ZERO
    if config.contrastive_loss:
        if config.use_source:
            f = core.concat([emb.f_s, emb.f_t_labeled])
            labels = np.concatenate([batch.source_y, batch.target_labeled_y])
            domains = np.concatenate([np.zeros(n_s), np.ones(n_l)])
        else:
            f, labels, domains = emb.f_t_labeled, batch.target_labeled_y, np.ones(n_l)
        l_cont = losses.loss_contrastive(f, labels, config.rho, domains, config.pairs)

    blocks = [emb.f_t_labeled]
    if config.use_source:
        blocks.insert(0, emb.f_s)
    if config.adversarial_loss:
        blocks.append(emb.f_t_unlabeled)
    h = core.forward(model.g, core.concat(blocks), tape)
    h_s = core.rows(h, 0, n_s)
    h_tl = core.rows(h, n_s, n_s + n_l)

    l_adv = _ZERO
    if config.adversarial_loss:
        d_s = core.forward(model.d, h_s, tape)
        d_t = core.forward(model.d, core.rows(h, n_s, h.shape[0]), tape)
        l_adv = losses.loss_adv(d_s, d_t)

    if config.use_source and config.alpha:
        probs = core.forward(model.f, core.rows(h, 0, n_s + n_l), tape)
        l_cls = losses.loss_cls(core.rows(probs, n_s, n_s + n_l), batch.target_labeled_y,
                                core.rows(probs, 0, n_s), batch.source_y, config.alpha)
    else:
        l_cls = losses.loss_cls(core.forward(model.f, h_tl, tape), batch.target_labeled_y)

    total = losses.loss_total(l_cls, l_ae, l_cont, l_adv, config.beta, config.gamma, config.lam)
    return BatchLosses(l_cls, l_ae, l_cont, l_adv, total)


def route(grads: GradientSet, config: TrainConfig) -> GradientSet:
    """Turn gradients of the full objective into each network's descent direction.

    Every network but D only reaches the terms it is assigned (imputer and
    extractors: the full objective; decoders: beta*L_AE; G: L_cls +
    gamma*L_cont - lam*L_adv; F: L_cls), so the full gradient is already
    its routed gradient. D only sees -lam*L_adv: negating it makes D descend
    on lam*L_adv; the literal variant keeps the sign.
    """
    flip = config.discriminator_direction == "descend"
    return GradientSet({k: (-g if flip and k[0] == "d" else g) for k, g in grads.items()})


def routed_gradients(model: IdianModel, batch: Batch, config: TrainConfig,
                     noise) -> tuple[BatchLosses, GradientSet]:
    tape = Tape()
    terms = batch_losses(model, batch, config, noise, tape)
    grads = tape.backward(terms.total, model.parameters())
    return terms, route(grads, config)


def update_step(model: IdianModel, batch: Batch, config: TrainConfig, noise) -> LossReport:
    """One simultaneous update: all routed gradients first, then every SGD step.

    Raises :class:`NumericError` (parameters untouched) if the loss or any
    gradient is not finite.
    """
    terms, grads = routed_gradients(model, batch, config, noise)
    report = terms.report()
    if not np.isfinite(report.l_total) or not grads.all_finite():
        bad = sorted({k[0] for k, g in grads.items() if not np.all(np.isfinite(g))})
        raise NumericError(f"non-finite step: losses={report.as_dict()} non-finite grads in {bad}")
    core.sgd_step(model.parameters(), grads, config.eta, "descend")
    return report


@dataclass
class StepRecord:
    epoch: int
    step: int
    losses: LossReport


@dataclass
class TrainHistory:
    steps: list[StepRecord] = field(default_factory=list)
    epoch_metrics: list[dict] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    skipped_steps: int = 0

    def epoch_mean(self, epoch: int, name: str = "l_cls") -> float:
        vals = [getattr(s.losses, name) for s in self.steps if s.epoch == epoch]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def final(self) -> LossReport | None:
        return self.steps[-1].losses if self.steps else None


def train(model: IdianModel, source: DomainDataset, target: DomainDataset, config: TrainConfig,
          evaluate: Callable[[IdianModel], dict] | None = None) -> tuple[IdianModel, TrainHistory]:
    """Train ``model`` in place for ``config.epochs`` epochs.

    ``target`` holds the labeled rows first (``target.labeled_count`` of
    them), then the unlabeled ones. ``evaluate`` runs after every epoch.
    """
    if source.dim != model.d_s or target.dim != model.d_t:
        raise ConfigError(f"data dims ({source.dim}, {target.dim}) do not match model ({model.d_s}, {model.d_t})")
    if target.labeled_count < 1:
        raise ConfigError("training needs at least one labeled target instance")
    noise = NoiseSource(derive_seed(config.master_seed, "noise"))
    history = TrainHistory()
    step = 0
    for epoch in range(config.epochs):
        started = time.perf_counter()
        batches = compose_batches(source, target, config.batch_size,
                                  derive_seed(config.master_seed, f"batches/{epoch}"))
        for batch in batches:
            try:
                report = update_step(model, batch, config, noise)
            except NumericError as exc:
                history.skipped_steps += 1
                log.warning("epoch %d step %d skipped: %s", epoch, step, exc)
            else:
                history.steps.append(StepRecord(epoch, step, report))
            step += 1
        history.epoch_seconds.append(time.perf_counter() - started)
        if evaluate is not None:
            history.epoch_metrics.append(evaluate(model))
        log.info("epoch %d: l_cls=%.4f (%.1fs)", epoch, history.epoch_mean(epoch), history.epoch_seconds[-1])
    return model, history
