"""Biot poroelastic parameter sets, derived coefficients and their Jacobians.

All quantities are dimensionless unless stated otherwise.  The six unknowns are
always ordered ``(mu, lambda, M, alpha, phi, kappa)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

PARAM_NAMES = ("mu", "lambda", "M", "alpha", "phi", "kappa")

# Reference calibration.  The permeability and frequency values of the reference
# sandstone data are not reproduced by plain dimensional analysis, so the extra factors
# are stored rather than rederived.
KAPPA_UNIT = 1e-12  # mm^4/N -> m^4/N
KAPPA_CALIBRATION = 1.5407e-5 / (503 * KAPPA_UNIT * np.sqrt(1e3 * 5.85e9) / 0.14)
OMEGA_CALIBRATION = 391.0 / (1.2e6 * 0.14 * np.sqrt(1e3 / 5.85e9))


@dataclass(frozen=True)
class PoroelasticParams:
    """The six unknowns of one focal region plus the three fixed densities."""

    mu: float
    lam: float
    M: float
    alpha: float
    phi: float
    kappa: float
    rho: float = 2.27
    rho_f: float = 1.0
    rho_a: float = 0.117

    def __post_init__(self):
        problems = []
        if not self.mu > 0:
            problems.append("mu must be positive")
        if not self.M > 0:
            problems.append("M must be positive")
        if not self.kappa > 0:
            problems.append("kappa must be positive")
        if not 0 < self.phi < 1:
            problems.append("phi must lie in (0, 1)")
        if not 0 < self.alpha <= 1:
            problems.append("alpha must lie in (0, 1]")
        if not (self.rho > 0 and self.rho_f > 0 and self.rho_a >= 0):
            problems.append("densities must be positive (rho_a >= 0)")
        if problems:
            raise ValueError("invalid poroelastic parameters: " + "; ".join(problems))

    @property
    def unknowns(self) -> np.ndarray:
        return np.array([self.mu, self.lam, self.M, self.alpha, self.phi, self.kappa])

    def with_unknowns(self, values) -> "PoroelasticParams":
        mu, lam, M, alpha, phi, kappa = (float(v) for v in values)
        return replace(self, mu=mu, lam=lam, M=M, alpha=alpha, phi=phi, kappa=kappa)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "PoroelasticParams":
        data = dict(data)
        if "lambda" in data:
            data["lam"] = data.pop("lambda")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class FrequencySpec:
    omega: float

    def __post_init__(self):
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")


@dataclass(frozen=True)
class ReferenceScales:
    rho_r: float = 1e3  # kg/m^3
    ell_r: float = 0.14  # m
    mu_r: float = 5.85e9  # Pa

    def __post_init__(self):
        if min(self.rho_r, self.ell_r, self.mu_r) <= 0:
            raise ValueError("reference scales must be strictly positive")


@dataclass(frozen=True)
class BiotCoefficients:
    gamma: complex
    a: complex
    b: complex
    c: complex


def reference_region(index: int) -> PoroelasticParams:
    """Ground-truth parameters of focal region 1 (high permeability) or 2 (low)."""
    kappa = {1: 1.5407e-5, 2: 2.45e-8}[index]
    return PoroelasticParams(mu=1.0, lam=0.47, M=1.66, alpha=0.83, phi=0.195, kappa=kappa)


REFERENCE_OMEGA = 391.0


def _gamma(phi, kappa, rho_f, rho_a, omega):
    return rho_a / phi**2 + rho_f / phi + 1j / (omega * kappa)


def compute_coefficients(params: PoroelasticParams, freq: FrequencySpec) -> BiotCoefficients:
    if params.kappa <= 0 or params.phi <= 0:
        raise ValueError("kappa and phi must be positive to evaluate gamma")
    gamma = _gamma(params.phi, params.kappa, params.rho_f, params.rho_a, freq.omega)
    return BiotCoefficients(
        gamma=gamma,
        a=params.alpha - params.rho_f / gamma,
        b=params.rho - params.rho_f**2 / gamma,
        c=1.0 / gamma,
    )


def coefficients_from_values(theta, omega, rho=2.27, rho_f=1.0, rho_a=0.117):
    """Vectorised (a, b, c) for raw parameter vectors; no validation.

    ``theta`` has trailing dimension 6.  Used on the training hot path where
    the network may transiently propose values outside the physical range.
    """
    theta = np.asarray(theta, dtype=float)
    alpha, phi, kappa = theta[..., 3], theta[..., 4], theta[..., 5]
    gamma = _gamma(phi, kappa, rho_f, rho_a, omega)
    inv = 1.0 / gamma
    return alpha - rho_f * inv, rho - rho_f**2 * inv, inv


COEFFICIENT_ROWS = ("Re a", "Im a", "Re b", "Im b", "Re c", "Im c", "1/M")


def coefficient_jacobian(params: PoroelasticParams, freq: FrequencySpec) -> np.ndarray:
    """d{Re a, Im a, Re b, Im b, Re c, Im c, 1/M} / d(mu, lambda, M, alpha, phi, kappa).

    Returns a 7x6 real matrix.  The mu and lambda columns are identically zero.
    """
    if params.kappa <= 0 or params.phi <= 0:
        raise ValueError("kappa and phi must be positive to evaluate gamma")
    return _jacobian_values(params.unknowns, freq.omega, params.rho_f, params.rho_a)


def _jacobian_values(theta, omega, rho_f=1.0, rho_a=0.117):
    theta = np.asarray(theta, dtype=float)
    M, phi, kappa = theta[..., 2], theta[..., 4], theta[..., 5]
    gamma = _gamma(phi, kappa, rho_f, rho_a, omega)
    dg_dphi = -2 * rho_a / phi**3 - rho_f / phi**2
    dg_dkappa = -1j / (omega * kappa**2)
    inv_g2 = 1.0 / gamma**2
    da_dg = rho_f * inv_g2
    db_dg = rho_f**2 * inv_g2
    dc_dg = -inv_g2

    jac = np.zeros(theta.shape[:-1] + (7, 6))
    for row, dq_dg in ((0, da_dg), (2, db_dg), (4, dc_dg)):
        for col, dg in ((4, dg_dphi), (5, dg_dkappa)):
            d = dq_dg * dg
            jac[..., row, col] = d.real
            jac[..., row + 1, col] = d.imag
    jac[..., 0, 3] = 1.0  # d Re(a) / d alpha
    jac[..., 6, 2] = -1.0 / M**2
    return jac


def nondimensionalize(physical: PoroelasticParams, omega_physical: float,
                      scales: ReferenceScales = ReferenceScales()):
    """Map SI-unit parameters to the dimensionless platform.

    ``physical`` holds moduli in Pa, densities in kg/m^3 and kappa in mm^4/N
    (the unit of the reference data); ``omega_physical`` is in s^-1 as quoted
    there.  Stresses scale by ``mu_r``, densities by ``rho_r``.  Permeability
    and frequency follow the dimensional groups ``sqrt(rho_r mu_r)/ell_r`` and
    ``ell_r sqrt(rho_r/mu_r)`` times the stored calibration factors.
    """
    s = scales
    kappa = physical.kappa * KAPPA_UNIT * np.sqrt(s.rho_r * s.mu_r) / s.ell_r * KAPPA_CALIBRATION
    omega = omega_physical * s.ell_r * np.sqrt(s.rho_r / s.mu_r) * OMEGA_CALIBRATION
    params = PoroelasticParams(
        mu=physical.mu / s.mu_r,
        lam=physical.lam / s.mu_r,
        M=physical.M / s.mu_r,
        alpha=physical.alpha,
        phi=physical.phi,
        kappa=kappa,
        rho=physical.rho / s.rho_r,
        rho_f=physical.rho_f / s.rho_r,
        rho_a=physical.rho_a / s.rho_r,
    )
    return params, FrequencySpec(omega)
