"""Loss-balancing strategies: dynamic scaling, its gradient variant, SoftAdapt,
GradNorm and equal weights.

Every strategy returns one weight per loss component and region.  The total
loss is ``sum_k w_k^2 ||l_k||^2``, so weights act on residuals, not on squares.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .residuals import coefficient_vectors

log = logging.getLogger(__name__)

STRATEGIES = ("dynscl", "dynscl-grad", "softadapt", "gradnorm", "equal")
EXCLUDE_BELOW = 1e-30


def _exponent(x, eta=1.0):
    """Nearest-integer order of magnitude in base 10**eta; NaN for excluded values."""
    x = np.abs(np.asarray(x, dtype=float))
    with np.errstate(divide="ignore"):
        e = np.rint(np.log10(x) / eta)
    return np.where(x < EXCLUDE_BELOW, np.nan, e)


def _nanmean(a, axis):
    ok = ~np.isnan(a)
    count = ok.sum(axis=axis)
    total = np.where(ok, a, 0.0).sum(axis=axis)
    return np.where(count > 0, total / np.maximum(count, 1), np.nan)


def _finish(beta, eta):
    empty = np.isnan(beta)
    if np.any(empty):
        log.warning("components %s have no usable terms; weight set to 1",
                    np.nonzero(empty)[0].tolist())
    return np.where(empty, 1.0, 10.0 ** (-eta * np.nan_to_num(beta)))


def dynscl_from_scales(coefficients, data_scales, eta: float = 1.0) -> np.ndarray:
    """DynScl weights from coefficient values f_kl and mean data magnitudes <|D_kl|>."""
    e = _exponent(coefficients, eta) + _exponent(data_scales, eta)
    return _finish(_nanmean(e, axis=-1), eta)


def dynscl_weights(theta, table, cache, eta: float = 1.0) -> np.ndarray:
    """Weights that bring the average term scale of each component to O(1).

    ``cache`` needs ``mean_abs`` and ``densities``; a ``GramStack`` together
    with stacked ``theta`` gives the weights of all regions at once.
    """
    f, _ = coefficient_vectors(theta, table, cache.densities)
    return dynscl_from_scales(f, cache.mean_abs, eta)


def dynscl_gradient_weights(theta, table, cache, eta: float = 1.0) -> np.ndarray:
    """Weights from the average scale of each component's parameter derivative.

    For term ``l`` the inner average is over all six parameters; pairs with a
    vanishing derivative contribute nothing to the sum but still count in
    the divisor.
    """
    theta = np.asarray(theta, dtype=float)
    _, df = coefficient_vectors(theta, table, cache.densities)  # (..., 6, 7, 6)
    return dynscl_gradient_from_scales(df, theta, cache.mean_abs, eta)


def dynscl_gradient_from_scales(derivatives, theta, data_scales, eta: float = 1.0) -> np.ndarray:
    """Gradient-branch weights from df_kl/dtheta_n (..., 6, 7, 6), theta and <|D_kl|>."""
    theta = np.asarray(theta, dtype=float)
    n_params = theta.shape[-1]
    inner = _exponent(derivatives, eta) + _exponent(theta, eta)[..., None, None, :]
    inner = np.where(np.isnan(inner), 0.0, inner).sum(axis=-1) / n_params
    e = _exponent(data_scales, eta) + inner
    return _finish(_nanmean(e, axis=-1), eta)


def softadapt_weights(previous, current, eta: float = 0.1) -> np.ndarray:
    """Softmax of the per-component rate of change; equal weights without history."""
    current = np.asarray(current, dtype=float)
    if previous is None:
        return np.full(current.shape, 1.0 / current.shape[-1])
    s = current - np.asarray(previous, dtype=float)
    z = np.maximum(eta * (s - s.max(axis=-1, keepdims=True)), -700.0)
    ez = np.exp(z)
    return ez / ez.sum(axis=-1, keepdims=True)


def equal_weights(n: int = 6) -> np.ndarray:
    return np.ones(n)


@dataclass
class GradNormState:
    weights: np.ndarray  # (6,)
    initial: np.ndarray | None = None  # component values at the first epoch
    eta_tilde: float = 1.5
    lr: float = 0.025
    floor: float = 1e-6
    last_inner_loss: float = 0.0


def gradnorm_update(state: GradNormState, trunk_grads, components) -> np.ndarray:
    """One descent step on the gradient-norm matching objective.

    ``trunk_grads`` has shape (6, P): the gradient of each unweighted
    component with respect to the shared trunk parameters.  The weighted
    component is ``w_k^2 l_k`` so its trunk gradient norm is ``w_k^2 g_k``.
    The target norms are held fixed during the step.
    """
    comps = np.asarray(components, dtype=float)
    if state.initial is None:
        state.initial = np.where(comps > 0, comps, 1.0)
    g = np.linalg.norm(np.asarray(trunk_grads, dtype=float), axis=-1)
    w = state.weights
    n = len(w)
    if not np.any(g > 0):
        log.info("all component gradients vanish on the shared layer; weights unchanged")
        return w.copy()
    G = w**2 * g
    # Relative inverse training rates, normalized to mean one so that r = 1
    # for every component when all train at the same pace.
    ratio = comps / state.initial
    total = ratio.mean()
    r = ratio / total if total > 0 else np.ones(n)
    target = G.mean() * r**state.eta_tilde
    diff = G - target
    scale = target.mean() if target.mean() > 0 else G.mean()
    state.last_inner_loss = float(np.abs(diff).sum() / scale)
    grad = np.sign(diff) * 2.0 * w * g / scale
    w_new = np.maximum(w - state.lr * grad, state.floor)
    state.weights = n * w_new / w_new.sum()
    return state.weights.copy()


@dataclass
class WeightState:
    """Per-run balancing state: current weights and strategy internals per region."""

    strategy: str
    n_regions: int
    eta: float = 0.1  # SoftAdapt temperature
    eta_tilde: float = 1.5  # GradNorm restoring strength
    gradnorm_lr: float = 0.025
    base_eta: float = 1.0  # DynScl exponent base is 10**base_eta
    weights: np.ndarray = None
    previous: np.ndarray = None
    gradnorm: list = field(default_factory=list)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown balancing strategy {self.strategy!r}; "
                             f"choose from {', '.join(STRATEGIES)}")
        if self.weights is None:
            self.weights = np.ones((self.n_regions, 6))
        if self.strategy == "gradnorm" and not self.gradnorm:
            self.gradnorm = [GradNormState(np.ones(6), eta_tilde=self.eta_tilde,
                                           lr=self.gradnorm_lr)
                             for _ in range(self.n_regions)]

    @property
    def needs_trunk_gradients(self) -> bool:
        return self.strategy == "gradnorm"

    def update(self, theta, table, stack, components, trunk_grads=None) -> np.ndarray:
        """Weights for the coming step, shape (n_regions, 6).

        ``stack`` is the regions' ``GramStack``; ``trunk_grads`` (n_regions,
        6, P) is needed only by GradNorm.
        """
        s = self.strategy
        if s == "dynscl":
            out = dynscl_weights(theta, table, stack, self.base_eta)
        elif s == "dynscl-grad":
            out = dynscl_gradient_weights(theta, table, stack, self.base_eta)
        elif s == "softadapt":
            out = softadapt_weights(self.previous, components, self.eta)
        elif s == "gradnorm":
            out = np.array([gradnorm_update(self.gradnorm[i], trunk_grads[i], components[i])
                            for i in range(self.n_regions)])
        else:
            out = np.ones((self.n_regions, 6))
        self.previous = np.array(components, dtype=float)
        self.weights = out
        return out
