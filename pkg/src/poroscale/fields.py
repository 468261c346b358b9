"""Spectral differentiation, measurement noise, ensemble averaging and misfit."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .forward import FocalField, GridSpec, dominant_wavelength

DERIVATIVES = {"": (0, 0), "x": (1, 0), "y": (0, 1), "xx": (2, 0), "yy": (0, 2), "xy": (1, 1)}


@dataclass
class DerivativeBundle:
    """Fields and their derivatives sampled on the focal window.

    ``data[(name, deriv)]`` is a complex array over the sample points, with
    ``name`` in ``ux, uy, p`` and ``deriv`` a key of ``DERIVATIVES``.  Source
    arrays are stored under ``("fux", "")``, ``("fuy", "")`` and ``("fp", "")``.
    """

    xs: np.ndarray
    ys: np.ndarray
    data: dict
    omega: float

    def get(self, name: str, part: str, deriv: str = "") -> np.ndarray:
        try:
            arr = self.data[name, deriv]
        except KeyError:
            raise KeyError(f"derivative bundle lacks {name}_{deriv or '0'}") from None
        return arr.real if part == "re" else arr.imag

    @property
    def shape(self):
        return (len(self.xs), len(self.ys))


@dataclass(frozen=True)
class NoiseSpec:
    level: float = 0.05
    n_realizations: int = 1
    seed: int = 0
    distribution: str = "uniform"

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be non-negative")
        if self.n_realizations < 1:
            raise ValueError("ensemble size must be at least 1")
        if self.distribution not in ("uniform", "normal"):
            raise ValueError(f"unknown noise distribution {self.distribution!r}")


def window_samples(fld: FocalField, n_samples: int = 64):
    c, h = fld.center, fld.half_width
    xs = np.linspace(c[0] - h, c[0] + h, n_samples)
    ys = np.linspace(c[1] - h, c[1] + h, n_samples)
    return xs, ys


def _interp_matrix(grid: GridSpec, pts: np.ndarray) -> np.ndarray:
    # Trigonometric interpolant of the periodic grid data, evaluated off-grid.
    k = grid.wavenumbers
    return np.exp(1j * np.outer(pts - grid.coords[0], k)) / grid.n


def lowpass(hat: np.ndarray, grid: GridSpec, cutoff: float | None) -> np.ndarray:
    if cutoff is None:
        return hat
    k = grid.wavenumbers
    K = np.hypot(*np.meshgrid(k, k, indexing="ij"))
    return np.where(K <= cutoff, hat, 0.0)


def spectral_derivatives(fld: FocalField, cutoff: float | None = None,
                         n_samples: int = 64) -> DerivativeBundle:
    """Differentiate on the full periodic grid, then sample the focal window.

    Sampling uses the exact trigonometric interpolant, so the window sub-grid
    need not align with the computational grid.  With ``cutoff`` set, modes of
    the measured fields with ``|k| > cutoff`` are removed first; the known
    source terms are never filtered.
    """
    g = fld.grid
    xs, ys = window_samples(fld, n_samples)
    Ex, Ey = _interp_matrix(g, xs), _interp_matrix(g, ys)
    k = g.wavenumbers
    ikx, iky = (1j * k)[:, None], (1j * k)[None, :]

    def sample(hat):
        return (Ex @ hat @ Ey.T).real

    def sample_complex(arr, ax=0, ay=0):
        # Real and imaginary parts are interpolated separately; taking the real
        # part splits the Nyquist mode symmetrically, so real data stays real.
        op = ikx**ax * iky**ay
        re = sample(op * lowpass(np.fft.fft2(arr.real), g, cutoff))
        im = sample(op * lowpass(np.fft.fft2(arr.imag), g, cutoff))
        return re + 1j * im

    data = {}
    for name in FocalField.FIELDS:
        arr = getattr(fld, name)
        for key, (ax, ay) in DERIVATIVES.items():
            data[name, key] = sample_complex(arr, ax, ay)
    for name in ("fux", "fp"):
        arr = getattr(fld, name)
        data[name, ""] = sample(np.fft.fft2(arr.real)) + 1j * sample(np.fft.fft2(arr.imag))
    data["fuy", ""] = np.zeros_like(data["fux", ""])
    return DerivativeBundle(xs=xs, ys=ys, data=data, omega=fld.omega)


def _noise(rng, shape, distribution):
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=(2,) + shape)
    return rng.standard_normal(size=(2,) + shape)


def add_noise(fld: FocalField, spec: NoiseSpec, realization: int = 0,
              stream: int = 0) -> FocalField:
    """One noisy realization: Z + level * max|Z| * (N1 + i N2) per field.

    The generator is keyed on ``(seed, stream, realization)`` so realizations
    can be produced in any order or in parallel; ``stream`` separates the
    measurements of different regions.
    """
    if spec.level == 0:
        return fld.replace_fields()
    rng = np.random.default_rng([spec.seed, stream, realization])
    noisy = {}
    for name in FocalField.FIELDS:
        z = getattr(fld, name)
        n1, n2 = _noise(rng, z.shape, spec.distribution)
        noisy[name] = z + spec.level * np.abs(z).max() * (n1 + 1j * n2)
    return fld.replace_fields(**noisy)


def ensemble_average(fields) -> FocalField:
    fields = list(fields)
    if not fields:
        raise ValueError("need at least one field to average")
    first = fields[0]
    sums = {name: np.zeros_like(getattr(first, name)) for name in FocalField.FIELDS}
    for f in fields:
        for name in FocalField.FIELDS:
            arr = getattr(f, name)
            if arr.shape != sums[name].shape:
                raise ValueError("cannot average fields on different grids")
            sums[name] += arr
    return first.replace_fields(**{k: v / len(fields) for k, v in sums.items()})


def noisy_averages(fld: FocalField, spec: NoiseSpec, counts, stream: int = 0) -> dict:
    """Running ensemble averages at each requested ensemble size.

    Realization ``t`` is the same for every requested size, so larger
    ensembles extend smaller ones.
    """
    counts = sorted(set(int(c) for c in counts))
    if spec.level == 0:
        return {c: fld.replace_fields() for c in counts}
    sums = {name: np.zeros_like(getattr(fld, name)) for name in FocalField.FIELDS}
    out = {}
    for t in range(counts[-1]):
        noisy = add_noise(fld, spec, t, stream)
        for name in FocalField.FIELDS:
            sums[name] += getattr(noisy, name)
        if t + 1 in counts:
            out[t + 1] = fld.replace_fields(**{k: v / (t + 1) for k, v in sums.items()})
    return out


COMPONENTS = (("ux", "re"), ("ux", "im"), ("uy", "re"), ("uy", "im"), ("p", "re"), ("p", "im"))


def field_misfit_theta(noisy: FocalField, clean: FocalField) -> dict:
    """Normalized misfit |Z~ - Z| / max|Z| per real component over the focal window.

    Returns ``{"re_ux": (array, max), ...}``.
    """
    if noisy.grid != clean.grid:
        raise ValueError("fields live on different grids")
    out = {}
    for name, part in COMPONENTS:
        z = clean.window(name)
        zt = noisy.window(name)
        z, zt = (z.real, zt.real) if part == "re" else (z.imag, zt.imag)
        peak = np.abs(z).max()
        if peak == 0:
            raise ValueError(f"{part} part of {name} is identically zero; misfit is unnormalizable")
        theta = np.abs(zt - z) / peak
        out[f"{part}_{name}"] = (theta, float(theta.max()))
    return out


def suggest_cutoff(fld: FocalField, factor: float = 4.0, name: str = "ux") -> float:
    """Default denoising cutoff: ``factor`` times the dominant field wavenumber."""
    return factor * 2 * np.pi / dominant_wavelength(fld, name)
