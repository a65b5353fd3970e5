"""Finite-difference checks of every loss and every routed network update.

Runs on tiny random models so central differences over all parameters stay
cheap. Used by the ``gradcheck`` CLI verb and the test-suite.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from . import core, losses
from .core import Tape, grad_check, numeric_jacobian, relative_error
from .data import Batch
from .networks import NETWORK_NAMES, IdianModel, Widths, build_model
from .trainer import TrainConfig, batch_losses, routed_gradients

TOLERANCE = 1e-4

TERMS = ("l_cls", "l_ae", "l_cont", "l_adv")

# each network's descent objective as weights on TERMS
ROUTES = {
    "g_i_hat": lambda c: (1.0, c.beta, c.gamma, -c.lam),
    "g_s": lambda c: (1.0, c.beta, c.gamma, -c.lam),
    "g_t": lambda c: (1.0, c.beta, c.gamma, -c.lam),
    "de_s": lambda c: (0.0, c.beta, 0.0, 0.0),
    "de_t": lambda c: (0.0, c.beta, 0.0, 0.0),
    "g": lambda c: (1.0, 0.0, c.gamma, -c.lam),
    "d": lambda c: (0.0, 0.0, 0.0, c.lam),
    "f": lambda c: (1.0, 0.0, 0.0, 0.0),
}


def random_problem(seed: int = 0, d_s: int = 5, d_t: int = 4, n_classes: int = 3, n_b: int = 4,
                   width: int = 6) -> tuple[IdianModel, Batch, tuple[np.ndarray, np.ndarray]]:
    """A small model, a composite batch with some missing entries, and fixed noise."""
    rng = np.random.default_rng(seed)
    model = build_model(d_s, d_t, n_classes, seed, Widths.uniform(width))
    # random non-zero biases move pre-activations off exact relu kinks
    for layer_params in model.parameters().values():
        if layer_params.ndim == 1:
            layer_params[...] = rng.uniform(-0.3, 0.3, layer_params.shape)
    m_l = (rng.random((n_b, d_t)) > 0.4).astype(float)
    m_u = (rng.random((n_b, d_t)) > 0.4).astype(float)
    batch = Batch(
        source_x=rng.random((n_b, d_s)),
        source_y=rng.integers(0, n_classes, n_b),
        target_labeled_x=rng.random((n_b, d_t)) * m_l,
        target_labeled_m=m_l,
        target_labeled_y=rng.integers(0, n_classes, n_b),
        target_unlabeled_x=rng.random((n_b, d_t)) * m_u,
        target_unlabeled_m=m_u,
    )
    noise = (rng.standard_normal((n_b, d_t)), rng.standard_normal((n_b, d_t)))
    return model, batch, noise


def term_jacobian(model: IdianModel, batch: Batch, config: TrainConfig, noise,
                  epsilon: float = 1e-6) -> dict:
    """Central differences of every loss term, from one sweep over the parameters.

    Any weighted sum of the terms has the same weighted sum of these columns
    as its finite-difference gradient.
    """
    def values():
        terms = batch_losses(model, batch, config, noise)
        return [float(getattr(terms, t).value) for t in TERMS]

    return numeric_jacobian(values, model.parameters(), epsilon)


def _max_error(analytic, jac, weights, keys) -> float:
    w = np.asarray(weights, dtype=np.float64)
    return max(float(relative_error(analytic[k], jac[k] @ w).max()) for k in keys)


def _loss_errors(model, batch, config, noise, jac) -> dict[str, float]:
    params = model.parameters()
    out = {}
    totals = (1.0, config.beta, config.gamma, -config.lam)
    for name, weights in [(t, np.eye(len(TERMS))[i]) for i, t in enumerate(TERMS)] + [("total", totals)]:
        tape = Tape()
        terms = batch_losses(model, batch, config, noise, tape)
        grads = tape.backward(getattr(terms, name), params)
        out[name] = _max_error(grads, jac, weights, params)
    return out


def _route_errors(model, batch, config, noise, jac) -> dict[str, float]:
    _, routed = routed_gradients(model, batch, config, noise)
    return {name: _max_error(routed, jac, ROUTES[name](config), getattr(model, name).parameters())
            for name in NETWORK_NAMES}


def _config(config: TrainConfig | None) -> TrainConfig:
    # a margin around the typical squared distance keeps some hinges active
    return config or TrainConfig(rho=2.0)


def check_losses(seed: int = 0, epsilon: float = 1e-6, config: TrainConfig | None = None) -> dict[str, float]:
    """Max relative error of each loss term (and the total) w.r.t. all model parameters."""
    model, batch, noise = random_problem(seed)
    config = _config(config)
    return _loss_errors(model, batch, config, noise, term_jacobian(model, batch, config, noise, epsilon))


def check_routes(seed: int = 0, epsilon: float = 1e-6, config: TrainConfig | None = None) -> dict[str, float]:
    """Compare each network's routed descent direction with finite differences of its objective."""
    model, batch, noise = random_problem(seed)
    config = _config(config)
    return _route_errors(model, batch, config, noise, term_jacobian(model, batch, config, noise, epsilon))


def check_primitives(seed: int = 0, epsilon: float = 1e-6) -> dict[str, float]:
    """Softmax cross-entropy and a two-layer relu net on raw tensors."""
    rng = np.random.default_rng(seed)
    mlp = core.Mlp.build("net", [5, 7, 3], ["relu", "softmax"], rng)
    for layer in mlp.layers:
        layer.bias[...] = rng.uniform(-0.3, 0.3, layer.bias.shape)
    x = rng.standard_normal((4, 5))
    y = rng.integers(0, 3, 4)
    quad = {("q", 0, "weights"): rng.standard_normal((3, 2))}

    def quadratic(tape: Tape):
        w = tape.param(("q", 0, "weights"), quad[("q", 0, "weights")])
        return core.sum(core.square(w))

    return {
        "quadratic": grad_check(quadratic, quad, epsilon),
        "relu_softmax_ce": grad_check(lambda tape: losses.cross_entropy(core.forward(mlp, x, tape), y),
                                      mlp.parameters(), epsilon),
    }


def run_all(seed: int = 0, epsilon: float = 1e-6) -> dict[str, float]:
    results = {f"primitive/{k}": v for k, v in check_primitives(seed, epsilon).items()}
    model, batch, noise = random_problem(seed)
    config = _config(None)
    jac = term_jacobian(model, batch, config, noise, epsilon)
    results.update({f"loss/{k}": v for k, v in _loss_errors(model, batch, config, noise, jac).items()})
    results.update({f"route/{k}": v for k, v in _route_errors(model, batch, config, noise, jac).items()})
    # under the literal update D's descent direction is the gradient of -lam*L_adv
    literal = replace(config, discriminator_direction="ascend")
    _, routed = routed_gradients(model, batch, literal, noise)
    results["route/d_literal_sign"] = _max_error(routed, jac, (0.0, 0.0, 0.0, -config.lam),
                                                 model.d.parameters())
    return results
