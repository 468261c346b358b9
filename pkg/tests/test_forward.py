import time

import numpy as np
import pytest

from poroscale.biot import FrequencySpec, reference_region
from poroscale.fields import spectral_derivatives
from poroscale.forward import (GridSpec, SolverError, SourceSpec, dominant_wavelength,
                               gaussian_source, pde_residual_check, solve_biot_spectral,
                               synthesize_source)

SRC = SourceSpec(5.97e5, 187.52, (0.0, 0.0))


def test_source_peak_and_half_height():
    grid = GridSpec(8, 512)
    delta = gaussian_source(SRC, grid)
    i0 = np.argmin(np.abs(grid.coords))
    assert delta[i0, i0] == pytest.approx(5.97e5)
    r = np.sqrt(np.log(2) / SRC.varsigma)
    shifted = SourceSpec(SRC.D, SRC.varsigma, (-r, 0.0))
    assert gaussian_source(shifted, grid)[i0, i0] == pytest.approx(SRC.D / 2)


@pytest.mark.parametrize("L", [8.0, 12.0])
def test_source_integral(L):
    grid = GridSpec(L, 1024)
    total = gaussian_source(SRC, grid).sum() * grid.dx**2
    assert total == pytest.approx(SRC.D * np.pi / SRC.varsigma, rel=1e-3)


def test_source_terms():
    p = reference_region(1)
    grid = GridSpec(8, 512)
    delta, fux, fp = synthesize_source(SRC, grid, p, FrequencySpec(30.0))
    k = grid.wavenumbers
    x = grid.coords
    X = np.meshgrid(x, x, indexing="ij")[0]
    assert np.allclose(fp.real, -2 * SRC.varsigma * X * delta, atol=1e-8 * SRC.D)
    assert np.all(fp.imag == 0)
    gamma = p.rho_a / p.phi**2 + p.rho_f / p.phi + 1j / (30.0 * p.kappa)
    assert np.allclose(fux, -(p.rho_f / gamma) * delta)
    assert k.shape == (512,)


def test_under_resolved_source_rejected():
    with pytest.raises(ValueError, match="under-resolves"):
        synthesize_source(SRC, GridSpec(8, 128), reference_region(1), FrequencySpec(30.0))


def test_invalid_specs():
    with pytest.raises(ValueError):
        GridSpec(4.0, 256)
    with pytest.raises(ValueError):
        GridSpec(8.0, 300)
    with pytest.raises(ValueError):
        SourceSpec(0.0, 1.0, (0, 0))
    with pytest.raises(ValueError):
        SourceSpec(1.0, -1.0, (0, 0))


@pytest.mark.parametrize("region", [1, 2])
def test_self_consistency(fields, region):
    check = pde_residual_check(fields[region - 1], reference_region(region))
    assert check["momentum"] < 1e-8
    assert check["mass"] < 1e-8


def test_linearity():
    p = reference_region(1)
    grid = GridSpec(8, 512)
    a = solve_biot_spectral(p, FrequencySpec(30.0), SRC, grid)
    b = solve_biot_spectral(p, FrequencySpec(30.0), SourceSpec(2 * SRC.D, SRC.varsigma, (0, 0)), grid)
    for name in ("ux", "uy", "p"):
        x, y = getattr(a, name), getattr(b, name)
        assert np.abs(y - 2 * x).max() <= 1e-12 * np.abs(x).max()
    # scaling the source to zero scales every field to zero
    zero = a.replace_fields(ux=0 * a.ux, uy=0 * a.uy, p=0 * a.p)
    assert not np.any(zero.ux)


def test_doubled_displacement_breaks_momentum(fields):
    fld = fields[0]
    bad = fld.replace_fields(ux=2 * fld.ux, uy=2 * fld.uy)
    assert pde_residual_check(bad, reference_region(1))["momentum"] > 1e-3


def test_residual_grows_with_parameter_error(fields):
    p = reference_region(1)
    sizes = [0.0, 0.01, 0.1, 0.5, 1.0]
    res = [pde_residual_check(fields[0], p.with_unknowns([p.mu * (1 + s), *p.unknowns[1:]]))["momentum"]
           for s in sizes]
    assert np.all(np.diff(res) > 0)


def test_runtime_256():
    # 256^2 resolves the Gaussian with fewer than four points per e-fold, so
    # the resolution guard is disabled for this timing check only.
    t0 = time.perf_counter()
    fld = solve_biot_spectral(reference_region(1), FrequencySpec(391.0), SRC, GridSpec(8, 256),
                              check_resolution=False)
    assert time.perf_counter() - t0 < 10
    assert pde_residual_check(fld, reference_region(1))["momentum"] < 1e-8


def test_dominant_wavelength_is_shear_wavelength():
    # At omega = 4 the drained shear wavelength is close to one unit.
    p = reference_region(1)
    fld = solve_biot_spectral(p, FrequencySpec(4.0), SRC, GridSpec(8, 512))
    expected = 2 * np.pi * np.sqrt(p.mu / p.rho) / 4.0
    assert dominant_wavelength(fld) == pytest.approx(expected, rel=0.1)
    assert dominant_wavelength(fld) == pytest.approx(1.0, rel=0.1)


def test_resonance_reported():
    # A practically undamped medium driven exactly at a shear mode of the box.
    p = reference_region(1).with_unknowns([1.0, 0.47, 1.66, 0.83, 0.195, 1e12])
    grid = GridSpec(8, 512)
    k = 2 * np.pi / grid.L * 5
    gamma = p.rho_a / p.phi**2 + p.rho_f / p.phi
    omega = k * np.sqrt(p.mu / (p.rho - p.rho_f**2 / gamma))
    with pytest.raises(SolverError, match="resonance"):
        solve_biot_spectral(p, FrequencySpec(omega), SRC, grid)


def _window_change(omega, name):
    p = reference_region(1)
    f8 = solve_biot_spectral(p, FrequencySpec(omega), SRC, GridSpec(8, 512))
    f12 = solve_biot_spectral(p, FrequencySpec(omega), SRC, GridSpec(12, 1024))
    a = spectral_derivatives(f8).data[name, ""]
    b = spectral_derivatives(f12).data[name, ""]
    return np.abs(a - b).max() / np.abs(a).max()


def test_window_independence_pressure():
    assert _window_change(4.0, "p") < 5e-3


@pytest.mark.xfail(strict=True, reason="solid waves are nearly undamped (quality factor ~1e3-1e4), "
                   "so they wrap around the periodic box and the window fields depend on L")
def test_window_independence_displacement():
    assert _window_change(4.0, "ux") < 5e-3
