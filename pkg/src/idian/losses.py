"""Reconstruction, contrastive, adversarial and classification losses.

All functions accept tensors (so gradients flow when they are on a tape) or
plain arrays, and return a scalar :class:`~idian.core.Tensor`.
"""

from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import core
from .core import Tensor, as_tensor


class DegenerateLossWarning(UserWarning):
    """A loss had nothing to average over and was reported as 0."""


@dataclass(frozen=True)
class LossReport:
    l_cls: float
    l_ae: float
    l_cont: float
    l_adv: float
    l_total: float

    def as_dict(self) -> dict:
        return asdict(self)


def reconstruction_error(recon, x) -> Tensor:
    """Mean over rows of the squared Euclidean residual."""
    return core.mean(core.sum(core.square(core.sub(recon, x)), axis=1))


def loss_ae(recon_s, x_s, recon_t, x_t) -> Tensor:
    """Source plus target autoencoder error, each averaged over its own rows.

    ``x_t`` is the imputed target block; it also receives gradient as the
    reconstruction target.
    """
    return core.add(reconstruction_error(recon_s, x_s), reconstruction_error(recon_t, x_t))


def pair_mask(labels, domains=None, pairs: str = "union") -> np.ndarray:
    """Upper-triangular 0/1 matrix selecting the pairs that enter the contrastive mean."""
    n = len(labels)
    mask = np.triu(np.ones((n, n)), k=1)
    if pairs == "cross-only":
        if domains is None:
            raise ValueError("cross-only pairs need per-row domain ids")
        domains = np.asarray(domains)
        mask *= domains[:, None] != domains[None, :]
    elif pairs != "union":
        raise ValueError(f"pairs must be 'union' or 'cross-only', got {pairs!r}")
    return mask


def loss_contrastive(f, labels, rho: float = 1.0, domains=None, pairs: str = "union") -> Tensor:
    """Mean pairwise contrastive distance over the selected row pairs.

    Same-class pairs cost their squared distance; different-class pairs cost
    ``max(0, rho - squared distance)``.
    """
    if rho <= 0:
        raise ValueError(f"margin must be positive, got {rho}")
    f = as_tensor(f)
    labels = np.asarray(labels)
    mask = pair_mask(labels, domains, pairs)
    n_pairs = mask.sum()
    if n_pairs == 0:
        warnings.warn("contrastive loss has no pairs; returning 0", DegenerateLossWarning, stacklevel=2)
        return core.mul(core.sum(f), 0.0)
    same = (labels[:, None] == labels[None, :]).astype(np.float64)
    dist = core.pairwise_sq_dists(f)
    hinge = core.relu(core.sub(rho, dist))
    per_pair = core.add(core.mul(dist, same * mask), core.mul(hinge, (1.0 - same) * mask))
    return core.mul(core.sum(per_pair), 1.0 / n_pairs)


def loss_adv(d_source, d_target) -> Tensor:
    """Domain cross-entropy: the discriminator should say 1 on source, 0 on target."""
    src = core.mean(core.log(d_source))
    tgt = core.mean(core.log(core.sub(1.0, d_target)))
    return core.mul(core.add(src, tgt), -1.0)


def cross_entropy(probs, labels) -> Tensor:
    """Mean negative log-probability of the true class (probabilities clamped at 1e-12)."""
    probs = as_tensor(probs)
    onehot = np.eye(probs.shape[1])[np.asarray(labels, dtype=np.int64)]
    return core.mul(core.mean(core.sum(core.mul(core.log(probs), onehot), axis=1)), -1.0)


def loss_cls(probs_target, y_target, probs_source=None, y_source=None, alpha: float = 1.0) -> Tensor:
    """Target cross-entropy plus ``alpha`` times source cross-entropy."""
    loss = cross_entropy(probs_target, y_target)
    if probs_source is not None and alpha:
        loss = core.add(loss, core.mul(cross_entropy(probs_source, y_source), alpha))
    return loss


def loss_total(l_cls, l_ae, l_cont, l_adv, beta: float, gamma: float, lam: float):
    """``l_cls + beta*l_ae + gamma*l_cont - lam*l_adv``; works on floats or tensors."""
    return l_cls + beta * l_ae + gamma * l_cont - lam * l_adv
