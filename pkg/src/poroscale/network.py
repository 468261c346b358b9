"""Scaled MLP property map with hand-written backpropagation and Adam.

Layout: a one-hot region code feeds a shared tanh trunk; six towers (one per
parameter) each have a tanh hidden layer and an affine head.  The head output
``z`` becomes a unit-scale value ``r`` (identity, or softplus for porosity and
permeability) which the scaling layer multiplies by the region's assigned
scale.  Heads carry a per-region bias so a scale reassignment in one region
can be compensated without touching the others.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .biot import PARAM_NAMES

log = logging.getLogger(__name__)

DEFAULT_SCALE_SETS = {
    "mu": (1.0,),
    "lambda": (1.0,),
    "M": (1.0,),
    "alpha": (1.0,),
    "phi": (0.1,),
    "kappa": (1e-5, 1e-6, 1e-7, 1e-8),
}
POSITIVE = ("phi", "kappa")
_SOFTPLUS_ONE = float(np.log(np.e - 1.0))  # softplus^{-1}(1)


def softplus(z):
    return np.logaddexp(0.0, z)


def softplus_inv(r):
    r = np.asarray(r, dtype=float)
    return np.where(r > 30, r, np.log(np.expm1(np.minimum(r, 30))))


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class ScaleSet:
    """Candidate scales per parameter and the current choice per region."""

    def __init__(self, candidates: dict, n_regions: int, initial: dict | None = None):
        self.candidates = {name: tuple(float(s) for s in candidates[name]) for name in PARAM_NAMES}
        self.selection = np.zeros((n_regions, len(PARAM_NAMES)), dtype=int)
        for name, value in (initial or {}).items():
            j = PARAM_NAMES.index(name)
            values = np.broadcast_to(value, (n_regions,))
            for i, v in enumerate(values):
                self.selection[i, j] = self.candidates[name].index(float(v))

    def scales(self) -> np.ndarray:
        out = np.empty(self.selection.shape)
        for j, name in enumerate(PARAM_NAMES):
            out[:, j] = np.take(self.candidates[name], self.selection[:, j])
        return out

    def to_dict(self) -> dict:
        return {"candidates": {k: list(v) for k, v in self.candidates.items()},
                "selection": self.selection.tolist()}


LAYOUT_KEYS = ("W1", "b1", "V", "c", "A", "d")


def _layout(n_regions, hidden, tower, n_out=len(PARAM_NAMES)):
    return {
        "W1": (hidden, n_regions), "b1": (hidden,),
        "V": (n_out, tower, hidden), "c": (n_out, tower),
        "A": (n_out, tower), "d": (n_out, n_regions),
    }


def _views(flat, layout):
    out, pos = {}, 0
    for key in LAYOUT_KEYS:
        shape = layout[key]
        size = int(np.prod(shape))
        out[key] = flat[pos:pos + size].reshape(shape)
        pos += size
    return out


class ScaledMLP:
    """Network state.  ``params`` holds named views into the flat vector ``flat``."""

    def __init__(self, n_regions: int, scale_set: ScaleSet, params: dict,
                 positive=POSITIVE, hidden: int = 32, tower: int = 16):
        self.n_regions, self.scale_set = n_regions, scale_set
        self.positive, self.hidden, self.tower = tuple(positive), hidden, tower
        self.layout = _layout(n_regions, hidden, tower)
        self.flat = np.concatenate([np.asarray(params[k], dtype=float).ravel()
                                    for k in LAYOUT_KEYS])
        self.params = _views(self.flat, self.layout)

    @property
    def positive_mask(self) -> np.ndarray:
        return np.array([n in self.positive for n in PARAM_NAMES])

    def grad_buffer(self):
        """A zeroed flat gradient vector and its named views."""
        flat = np.zeros_like(self.flat)
        return flat, _views(flat, self.layout)

    def copy(self) -> "ScaledMLP":
        ss = ScaleSet(self.scale_set.candidates, self.n_regions)
        ss.selection = self.scale_set.selection.copy()
        return ScaledMLP(self.n_regions, ss, self.params, self.positive, self.hidden, self.tower)

    def to_dict(self) -> dict:
        return {
            "n_regions": self.n_regions, "hidden": self.hidden, "tower": self.tower,
            "positive": list(self.positive), "scale_set": self.scale_set.to_dict(),
            "params": {k: v.tolist() for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScaledMLP":
        ss = ScaleSet(data["scale_set"]["candidates"], data["n_regions"])
        ss.selection = np.array(data["scale_set"]["selection"], dtype=int)
        params = {k: np.array(v, dtype=float) for k, v in data["params"].items()}
        return cls(data["n_regions"], ss, params, tuple(data["positive"]),
                   data["hidden"], data["tower"])


def init_network(n_regions: int = 2, hidden: int = 32, tower: int = 16, seed: int = 0,
                 scale_sets: dict | None = None, initial_scales: dict | None = None,
                 scaled: bool = True) -> ScaledMLP:
    """Fresh network whose epoch-0 predictions equal the assigned scales.

    With ``scaled=False`` every scale is 1 and all heads are plain affine maps,
    i.e. an ordinary MLP output layer.
    """
    rng = np.random.default_rng(seed)
    n_out = len(PARAM_NAMES)
    if scaled:
        sets = dict(DEFAULT_SCALE_SETS, **(scale_sets or {}))
        init = {"kappa": max(sets["kappa"])}
        init.update(initial_scales or {})
        positive = POSITIVE
    else:
        sets = {name: (1.0,) for name in PARAM_NAMES}
        init = {}
        positive = ()
    ss = ScaleSet(sets, n_regions, init)
    lim_t = min(1.0, np.sqrt(6.0 / (hidden + tower)))
    params = {
        "W1": rng.uniform(-1, 1, (hidden, n_regions)),
        "b1": rng.uniform(-1, 1, hidden),
        "V": rng.uniform(-lim_t, lim_t, (n_out, tower, hidden)),
        "c": rng.uniform(-lim_t, lim_t, (n_out, tower)),
        "A": np.zeros((n_out, tower)),
        "d": np.ones((n_out, n_regions)),
    }
    net = ScaledMLP(n_regions, ss, params, positive, hidden, tower)
    net.params["d"][net.positive_mask] = _SOFTPLUS_ONE
    return net


@dataclass
class ForwardCache:
    H: np.ndarray
    G: np.ndarray
    Z: np.ndarray
    R: np.ndarray
    scales: np.ndarray


def forward(net: ScaledMLP, regions=None):
    """Scaled predictions theta* with shape (len(regions), 6)."""
    p = net.params
    regions = np.arange(net.n_regions) if regions is None else np.atleast_1d(regions)
    if np.any(regions >= net.n_regions) or np.any(regions < 0):
        raise IndexError(f"region index out of range for {net.n_regions} regions")
    H = np.tanh(p["W1"][:, regions].T + p["b1"])  # (B, hidden)
    G = np.tanh(np.einsum("njk,bk->bnj", p["V"], H) + p["c"])  # (B, 6, tower)
    Z = np.einsum("bnj,nj->bn", G, p["A"]) + p["d"][:, regions].T
    pos = net.positive_mask
    R = np.where(pos, softplus(Z), Z)
    scales = net.scale_set.scales()[regions]
    return scales * R, ForwardCache(H, G, Z, R, scales), regions


def backward(net: ScaledMLP, cache: ForwardCache, regions, dtheta, flat: bool = False):
    """Gradients of a scalar objective given d(objective)/d(theta*).

    Returns a dict keyed like ``net.params``, or the flat gradient vector when
    ``flat`` is set.
    """
    p = net.params
    out, grads = net.grad_buffer()
    dR = np.asarray(dtheta) * cache.scales
    dZ = np.where(net.positive_mask, dR * sigmoid(cache.Z), dR)
    grads["A"][:] = np.einsum("bn,bnj->nj", dZ, cache.G)
    np.add.at(grads["d"].T, regions, dZ)
    dpre = dZ[..., None] * p["A"] * (1.0 - cache.G**2)  # (B, 6, tower)
    grads["V"][:] = np.einsum("bnj,bk->njk", dpre, cache.H)
    grads["c"][:] = dpre.sum(axis=0)
    dH = np.einsum("bnj,njk->bk", dpre, p["V"])
    dpre1 = dH * (1.0 - cache.H**2)
    np.add.at(grads["W1"].T, regions, dpre1)
    grads["b1"][:] = dpre1.sum(axis=0)
    return out if flat else grads


TRUNK = ("W1", "b1")


def trunk_jacobian(net: ScaledMLP, cache: ForwardCache, regions) -> np.ndarray:
    """d theta*[b, n] / d (W1, b1) flattened in storage order, shape (B, 6, P)."""
    p = net.params
    dz = cache.scales * np.where(net.positive_mask, sigmoid(cache.Z), 1.0)  # (B, 6)
    # d z_n / d H_k through the tower hidden layer
    dzdh = np.einsum("nj,bnj,njk->bnk", p["A"], 1.0 - cache.G**2, p["V"])
    dpre = dz[..., None] * dzdh * (1.0 - cache.H**2)[:, None, :]  # (B, 6, hidden)
    B, n_out, hidden = dpre.shape
    jw = np.zeros((B, n_out, hidden, net.n_regions))
    jw[np.arange(B), :, :, regions] = dpre
    return np.concatenate([jw.reshape(B, n_out, -1), dpre], axis=-1)


def output_jacobian(net: ScaledMLP, cache: ForwardCache, regions, keys=TRUNK) -> np.ndarray:
    """d theta*[b, n] / d (flattened ``keys`` parameters), shape (B, 6, P)."""
    B, n_out = cache.Z.shape
    rows = np.zeros((B, n_out, sum(net.params[k].size for k in keys)))
    for b in range(B):
        for n in range(n_out):
            seed = np.zeros((B, n_out))
            seed[b, n] = 1.0
            g = backward(net, cache, regions, seed)
            rows[b, n] = np.concatenate([g[k].ravel() for k in keys])
    return rows


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps,
                "step": self.step, "m": {k: a.tolist() for k, a in self.m.items()},
                "v": {k: a.tolist() for k, a in self.v.items()}}

    @classmethod
    def from_dict(cls, data: dict) -> "AdamState":
        st = cls(data["lr"], data["beta1"], data["beta2"], data["eps"], data["step"])
        st.m = {k: np.array(a) for k, a in data["m"].items()}
        st.v = {k: np.array(a) for k, a in data["v"].items()}
        return st


def adam_step(state: AdamState, params, grads):
    """Bias-corrected Adam update, in place.

    ``params`` and ``grads`` are either matching dicts of arrays or two flat
    arrays.  A non-finite gradient aborts the step before anything changes.
    """
    single = isinstance(params, np.ndarray)
    pairs = [("flat", params, grads)] if single else [(k, params[k], g) for k, g in grads.items()]
    for k, _, g in pairs:
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient in {k}; step aborted")
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1**t
    c2 = 1 - state.beta2**t
    for k, p, g in pairs:
        m = state.m.setdefault(k, np.zeros_like(g))
        v = state.v.setdefault(k, np.zeros_like(g))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


def scale_snap(net: ScaledMLP, param: int, region: int, trigger=(0.1, 10.0),
               target=(10**-0.5, 10**0.5)):
    """Reassign one region's scale when its unit-scale output drifts out of band.

    Returns ``(new_scale, saturated)`` where ``new_scale`` is None if nothing
    changed.  The region's head bias is shifted so the prediction is preserved.
    """
    name = PARAM_NAMES[param]
    cands = np.array(net.scale_set.candidates[name])
    if len(cands) < 2:
        return None, False
    theta, cache, _ = forward(net, region)
    r = float(cache.R[0, param])
    if trigger[0] <= r <= trigger[1]:
        return None, False
    value = float(theta[0, param])
    ratio = value / cands
    inside = (ratio >= target[0]) & (ratio <= target[1])
    saturated = not inside.any()
    if saturated:
        j = int(np.argmin(np.abs(np.log10(np.abs(ratio) + 1e-300))))
        log.debug("scale for %s in region %d saturated at %g (raw %g)",
                    name, region, cands[j], r)
    else:
        j = int(np.argmax(inside))
    if j == net.scale_set.selection[region, param]:
        return None, saturated
    r_new = ratio[j]
    z_old = float(cache.Z[0, param])
    if net.positive_mask[param]:
        if r_new <= 0:
            return None, saturated
        z_new = float(softplus_inv(r_new))
    else:
        z_new = r_new
    net.params["d"][param, region] += z_new - z_old
    net.scale_set.selection[region, param] = j
    return float(cands[j]), saturated


def canonical_snap(net: ScaledMLP, param: int, region: int):
    """Snap to the candidate placing the unit-scale output in [10^-0.5, 10^0.5]."""
    return scale_snap(net, param, region, trigger=(1.0, 1.0))


def weight_sup_norm(net: ScaledMLP) -> float:
    return max(float(np.abs(v).max()) for v in net.params.values())


def save_checkpoint(path, net: ScaledMLP, adam: AdamState | None = None, extra=None):
    doc = {"network": net.to_dict(), "adam": adam.to_dict() if adam else None,
           "extra": extra or {}}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    adam = AdamState.from_dict(doc["adam"]) if doc.get("adam") else None
    return ScaledMLP.from_dict(doc["network"]), adam, doc.get("extra", {})
