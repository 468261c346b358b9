"""Factorized loss components l_k = sum_l f_kl(theta, omega) * D_kl(data).

The six real components are the real and imaginary parts of the x and y
momentum balances and of the mass balance.  Each carries seven terms; the
elastic operator is grouped as ``mu * lap(u) + (lam + mu) * grad(div u)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np


COMPONENT_NAMES = ("Re Pi1_x", "Im Pi1_x", "Re Pi1_y", "Im Pi1_y", "Re Pi2", "Im Pi2")

# Coefficient symbols; each is a function of theta and omega.
SYMBOLS = ("mu", "lam+mu", "Re a", "Im a", "w2 Re b", "w2 Im b",
           "Re c/w2", "Im c/w2", "1/M", "1")
_SYM = {s: i for i, s in enumerate(SYMBOLS)}


@dataclass(frozen=True)
class Term:
    sign: int
    symbol: str
    # (sign, field, part, derivative) pieces summed into the data term
    data: tuple

    def describe(self) -> str:
        coef = ("-" if self.sign < 0 else "") + self.symbol
        pieces = " ".join(f"{'+' if s > 0 else '-'}{part}({f}){'_' + d if d else ''}"
                          for s, f, part, d in self.data)
        return f"{coef} * [{pieces}]"


def _elastic(part, a, b):
    """Terms of the x (a='x') or y momentum balance for one real part."""
    o = "im" if part == "re" else "re"
    ua, ub = f"u{a}", f"u{b}"
    aa, ab = a + a, "xy"
    sgn = 1 if part == "re" else -1
    return [
        Term(1, "mu", ((1, ua, part, "xx"), (1, ua, part, "yy"))),
        Term(1, "lam+mu", ((1, ua, part, aa), (1, ub, part, ab))),
        Term(-1, "Re a", ((1, "p", part, a),)),
        Term(sgn, "Im a", ((1, "p", o, a),)),
        Term(1, "w2 Re b", ((1, ua, part, ""),)),
        Term(-sgn, "w2 Im b", ((1, ua, o, ""),)),
        Term(1, "1", ((-1, f"fu{a}", part, ""),)),
    ]


def _mass(part):
    o = "im" if part == "re" else "re"
    sgn = 1 if part == "re" else -1
    return [
        Term(1, "Re a", ((1, "ux", part, "x"), (1, "uy", part, "y"))),
        Term(-sgn, "Im a", ((1, "ux", o, "x"), (1, "uy", o, "y"))),
        Term(1, "Re c/w2", ((1, "p", part, "xx"), (1, "p", part, "yy"))),
        Term(-sgn, "Im c/w2", ((1, "p", o, "xx"), (1, "p", o, "yy"))),
        Term(1, "1/M", ((1, "p", part, ""),)),
        Term(1, "Re c/w2", ((1, "fp", part, ""),)),
        Term(-sgn, "Im c/w2", ((1, "fp", o, ""),)),
    ]


@dataclass(frozen=True)
class FactorTable:
    omega: float
    components: tuple  # six tuples of Term

    @property
    def n_terms(self) -> tuple:
        return tuple(len(c) for c in self.components)

    def sign_matrix(self) -> np.ndarray:
        return np.array([[t.sign for t in comp] for comp in self.components], dtype=float)

    def symbol_index(self) -> np.ndarray:
        return np.array([[_SYM[t.symbol] for t in comp] for comp in self.components])

    @cached_property
    def index_and_sign(self):
        return self.symbol_index(), self.sign_matrix()


def build_factor_table(omega: float) -> FactorTable:
    comps = (
        _elastic("re", "x", "y"), _elastic("im", "x", "y"),
        _elastic("re", "y", "x"), _elastic("im", "y", "x"),
        _mass("re"), _mass("im"),
    )
    return FactorTable(omega=float(omega), components=tuple(tuple(c) for c in comps))


def symbol_values(theta, omega, densities=(2.27, 1.0, 0.117)):
    """Symbol values (..., 10) and their derivatives (..., 10, 6) w.r.t. theta."""
    theta = np.asarray(theta, dtype=float)
    rho, rho_f, rho_a = densities
    mu, lam, M, alpha, phi, kappa = np.moveaxis(theta, -1, 0)
    w2 = omega**2
    gamma = rho_a / phi**2 + rho_f / phi + 1j / (omega * kappa)
    inv = 1.0 / gamma
    a = alpha - rho_f * inv
    b = rho - rho_f**2 * inv
    vals = np.stack([
        mu, mu + lam, a.real, a.imag, w2 * b.real, w2 * b.imag,
        inv.real / w2, inv.imag / w2, 1.0 / M, np.ones_like(mu),
    ], axis=-1)
    # d(1/gamma)/d(phi, kappa); a, b and c are affine in 1/gamma
    dinv_dphi = inv**2 * (2 * rho_a / phi**3 + rho_f / phi**2)
    dinv_dkappa = inv**2 * (1j / (omega * kappa**2))
    dv = np.zeros(theta.shape[:-1] + (10, 6))
    dv[..., 0, 0] = 1.0
    dv[..., 1, 0] = 1.0
    dv[..., 1, 1] = 1.0
    dv[..., 2, 3] = 1.0
    for col, d in ((4, dinv_dphi), (5, dinv_dkappa)):
        dv[..., 2, col] = -rho_f * d.real
        dv[..., 3, col] = -rho_f * d.imag
        dv[..., 4, col] = -w2 * rho_f**2 * d.real
        dv[..., 5, col] = -w2 * rho_f**2 * d.imag
        dv[..., 6, col] = d.real / w2
        dv[..., 7, col] = d.imag / w2
    dv[..., 8, 2] = -1.0 / M**2
    return vals, dv


def coefficient_vectors(theta, table: FactorTable, densities=(2.27, 1.0, 0.117)):
    """f_kl (..., 6, 7) and df_kl/dtheta (..., 6, 7, 6)."""
    vals, dv = symbol_values(theta, table.omega, densities)
    idx, sgn = table.index_and_sign
    return sgn * vals[..., idx], sgn[..., None] * dv[..., idx, :]


def data_terms(bundle, table: FactorTable) -> np.ndarray:
    """Data terms d_kl over the sample points, shape (6, 7, N_p)."""
    out = np.zeros((6, max(table.n_terms), np.prod(bundle.shape)))
    for k, comp in enumerate(table.components):
        for l, term in enumerate(comp):
            acc = 0.0
            for s, name, part, deriv in term.data:
                acc = acc + s * bundle.get(name, part, deriv)
            out[k, l] = np.ravel(acc)
    return out


@dataclass
class GramCache:
    """Per-component Gram matrices of the data terms of one focal region.

    The loss is evaluated through the triangular factor ``R`` (``G = R^T R``),
    which gives the same value as ``f^T G f`` without squaring the data.
    """

    R: np.ndarray  # (6, 7, 7)
    mean_abs: np.ndarray  # (6, 7) mean |D_kl| over the focal samples
    n_points: int
    densities: tuple = (2.27, 1.0, 0.117)

    @property
    def G(self) -> np.ndarray:
        return np.einsum("kml,kmn->kln", self.R, self.R)


def precompute_gram(bundle, table: FactorTable, densities=(2.27, 1.0, 0.117)) -> GramCache:
    d = data_terms(bundle, table)
    R = np.zeros((6, d.shape[1], d.shape[1]))
    for k in range(6):
        # QR of the (N_p x 7) design matrix; R^T R equals the Gram matrix.
        r = np.linalg.qr(d[k].T, mode="r")
        R[k, : r.shape[0]] = r
    return GramCache(R=R, mean_abs=np.abs(d).mean(axis=-1), n_points=d.shape[-1],
                     densities=tuple(densities))


def loss_components(theta, table: FactorTable, cache: GramCache) -> np.ndarray:
    """||l_k||^2 summed over the focal samples, for k = 1..6."""
    f, _ = coefficient_vectors(theta, table, cache.densities)
    r = np.einsum("kml,kl->km", cache.R, f)
    return np.sum(r**2, axis=-1)


def loss_and_gradient(theta, table: FactorTable, cache: GramCache, weights):
    """Weighted loss sum_k w_k^2 ||l_k||^2, its components and d/dtheta."""
    f, df = coefficient_vectors(theta, table, cache.densities)
    r = np.einsum("kml,kl->km", cache.R, f)
    comps = np.sum(r**2, axis=-1)
    w2 = np.asarray(weights, dtype=float) ** 2
    # d||R f||^2 / dtheta = 2 (R f)^T (R df)
    rdf = np.einsum("kml,kln->kmn", cache.R, df)
    per_comp = 2 * np.einsum("km,kmn->kn", r, rdf)
    grad = w2 @ per_comp
    return float(w2 @ comps), comps, grad, per_comp


def loss_gradient(theta, table, cache, weights) -> np.ndarray:
    return loss_and_gradient(theta, table, cache, weights)[2]


def pointwise_components(theta, table: FactorTable, bundle) -> np.ndarray:
    """Brute-force ||l_k||^2 from the pointwise residual (verification path)."""
    f, _ = coefficient_vectors(theta, table)
    d = data_terms(bundle, table)
    res = np.einsum("kl,klj->kj", f, d)
    return np.sum(res**2, axis=-1)


@dataclass
class GramStack:
    """Triangular factors and term scales of several regions, stacked."""

    R: np.ndarray  # (n_regions, 6, 7, 7)
    mean_abs: np.ndarray  # (n_regions, 6, 7)
    densities: tuple

    @classmethod
    def from_caches(cls, caches) -> "GramStack":
        dens = {c.densities for c in caches}
        if len(dens) != 1:
            raise ValueError("regions with different fixed densities cannot be stacked")
        return cls(np.stack([c.R for c in caches]), np.stack([c.mean_abs for c in caches]),
                   dens.pop())


def stacked_components(theta, table: FactorTable, stack: GramStack):
    """Unweighted components (n_regions, 6) and their theta-gradients (n_regions, 6, 6)."""
    f, df = coefficient_vectors(theta, table, stack.densities)
    r = np.einsum("ikml,ikl->ikm", stack.R, f)
    rdf = np.einsum("ikml,ikln->ikmn", stack.R, df)
    return np.sum(r**2, axis=-1), 2 * np.einsum("ikm,ikmn->ikn", r, rdf)
