"""End-to-end acceptance suite.

Each criterion prints one ``criterion N: PASS|FAIL`` line with the measured
numbers, then asserts.  Criteria 5 to 7, 9 and 11 train full-budget models
and dominate the runtime (about half an hour on one core).  Run alone with

    pytest tests/test_acceptance.py -v
"""

from __future__ import annotations

import json
import time

import numpy as np
import pytest

from poroscale.biot import (PARAM_NAMES, FrequencySpec, coefficient_jacobian, reference_region)
from poroscale.config import load_config
from poroscale.fields import (DERIVATIVES, DerivativeBundle, NoiseSpec, add_noise,
                              field_misfit_theta, spectral_derivatives)
from poroscale.forward import GridSpec, SourceSpec, solve_biot_spectral
from poroscale.network import backward, forward, init_network, output_jacobian, softplus_inv
from poroscale.residuals import (build_factor_table, coefficient_vectors, data_terms,
                                 loss_components, loss_gradient, precompute_gram,
                                 stacked_components)
from poroscale.balancing import WeightState
from poroscale.trainer import (build_regions, emit_reports, gram_stack, run_noise_study,
                               run_reconstruction, write_xi_table, _densities)

pytestmark = pytest.mark.acceptance

KAPPA = PARAM_NAMES.index("kappa")
STRATEGIES = ("dynscl", "dynscl-grad", "softadapt", "gradnorm", "equal")


def verdict(capsys, number, passed, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, detail


def pct(x):
    return f"{100 * x:.3g}%"


# ------------------------------------------------------------ shared state

@pytest.fixture(scope="module")
def config():
    return load_config()


@pytest.fixture(scope="module")
def regions(config):
    return build_regions(config)


@pytest.fixture(scope="module")
def stack(regions, config):
    return gram_stack([r.field for r in regions], config.physics.n_samples,
                      densities=_densities(regions))


_RUNS = {}


def trained(regions, strategy="dynscl", scaled=True):
    key = (strategy, scaled)
    if key not in _RUNS:
        overrides = [f'balance.strategy="{strategy}"']
        if not scaled:
            overrides.append("network.scaled=false")
        _RUNS[key] = run_reconstruction(load_config(None, overrides), regions)
    return _RUNS[key]


# ------------------------------------------------------------ oracles

def biot_residual_oracle(fld, p):
    """Independent spectral assembly of both balance laws (relative norms)."""
    n, L, w = fld.grid.n, fld.grid.L, fld.omega
    k = 2 * np.pi * np.fft.fftfreq(n, d=L / n)
    kx, ky = np.meshgrid(k, k, indexing="ij")
    hat = {name: np.fft.fft2(getattr(fld, name)) for name in ("ux", "uy", "p")}

    def d(name, ax, ay):
        return np.fft.ifft2((1j * kx) ** ax * (1j * ky) ** ay * hat[name])

    g = p.rho_a / p.phi**2 + p.rho_f / p.phi + 1j / (w * p.kappa)
    a, b, c = p.alpha - p.rho_f / g, p.rho - p.rho_f**2 / g, 1 / g
    div_x = d("ux", 2, 0) + d("uy", 1, 1)
    div_y = d("ux", 1, 1) + d("uy", 0, 2)
    mx = [p.mu * (d("ux", 2, 0) + d("ux", 0, 2)), (p.lam + p.mu) * div_x,
          -a * d("p", 1, 0), w**2 * b * fld.ux, -fld.fux]
    my = [p.mu * (d("uy", 2, 0) + d("uy", 0, 2)), (p.lam + p.mu) * div_y,
          -a * d("p", 0, 1), w**2 * b * fld.uy]
    ms = [c / w**2 * (d("p", 2, 0) + d("p", 0, 2)), fld.p / p.M,
          a * (d("ux", 1, 0) + d("uy", 0, 1)), c / w**2 * fld.fp]

    def rel(*groups):
        num = np.sqrt(sum(np.sum(np.abs(sum(t)) ** 2) for t in groups))
        return num / max(np.linalg.norm(t) for grp in groups for t in grp)

    return rel(mx, my), rel(ms)


def symbols_ld(th, omega, rho=2.27, rho_f=1.0, rho_a=0.117):
    """Extended-precision coefficient symbols, written out from the formulas."""
    mu, lam, M, alpha, phi, kappa = np.asarray(th, dtype=np.longdouble)
    w = np.longdouble(omega)
    g = np.clongdouble(rho_a / phi**2 + rho_f / phi + 1j / (w * kappa))
    a, b, c = alpha - rho_f / g, rho - rho_f**2 / g, 1 / g
    return np.array([mu, lam + mu, a.real, a.imag, w**2 * b.real, w**2 * b.imag,
                     c.real / w**2, c.imag / w**2, 1 / M, 1], dtype=np.longdouble)


def pointwise_ld(th, table, d, w=None):
    idx, sgn = table.index_and_sign
    f = sgn * symbols_ld(th, table.omega)[idx]
    res = np.einsum("kl,klj->kj", f, d.astype(np.longdouble))
    comps = np.sum(res**2, axis=-1)
    return comps if w is None else np.sum(np.asarray(w, dtype=np.longdouble) ** 2 * comps)


def random_bundle(rng, omega, n=4):
    data = {}
    for name in ("ux", "uy", "p"):
        for key in DERIVATIVES:
            data[name, key] = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    for name in ("fux", "fp"):
        data[name, ""] = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    data["fuy", ""] = np.zeros((n, n), complex)
    return DerivativeBundle(np.arange(n), np.arange(n), data, omega)


# ------------------------------------------------------------ criteria

def test_criterion_01_forward_self_consistency(capsys, regions):
    worst = 0.0
    for r in regions:
        worst = max(worst, *biot_residual_oracle(r.field, r.truth))
    src = SourceSpec(5.97e5, 187.52, (0.0, 0.0))
    times = []
    for i in (1, 2):
        t0 = time.perf_counter()
        fld = solve_biot_spectral(reference_region(i), FrequencySpec(30.0), src, GridSpec(8.0, 256),
                                  check_resolution=False)
        times.append(time.perf_counter() - t0)
        worst = max(worst, *biot_residual_oracle(fld, reference_region(i)))
    ok = worst < 1e-8 and max(times) < 10
    verdict(capsys, 1, ok, f"max relative residual {worst:.2e} (< 1e-8); "
                           f"256^2 solve {max(times):.2f} s (< 10 s)")


def test_criterion_02_gram_equals_pointwise(capsys):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(100):
        bundle = random_bundle(rng, rng.uniform(1, 400))
        table = build_factor_table(bundle.omega)
        th = reference_region(1).unknowns * rng.uniform(0.5, 1.5, 6)
        gram = loss_components(th, table, precompute_gram(bundle, table))
        brute = pointwise_ld(th, table, data_terms(bundle, table))
        worst = max(worst, float(np.max(np.abs(gram - brute) / brute)))
    verdict(capsys, 2, worst < 1e-12, f"max relative difference over 100 trials {worst:.2e} (< 1e-12)")


def test_criterion_03_gradients(capsys, regions, stack):
    rng = np.random.default_rng(3)
    freq = FrequencySpec(391.0)

    # Coefficient Jacobian: parameter-dependent parts only, in longdouble.
    def coeffs(u, p):
        M, phi, kappa = (np.longdouble(v) for v in (u[2], u[4], u[5]))
        g = np.clongdouble(p.rho_a / phi**2 + p.rho_f / phi + 1j / (np.longdouble(freq.omega) * kappa))
        a, b, c = -p.rho_f / g, -p.rho_f**2 / g, 1 / g
        return np.array([a.real, a.imag, b.real, b.imag, c.real, c.imag, 1 / M])

    jac_err = 0.0
    for _ in range(50):
        u = reference_region(1).unknowns * rng.uniform(0.5, 1.5, 6)
        u[3] = min(u[3], 0.95)
        p = reference_region(1).with_unknowns(u)
        J = coefficient_jacobian(p, freq)
        fd = np.zeros((7, 6))
        for n in range(6):
            h = np.longdouble(1e-7) * abs(u[n])
            up, um = u.astype(np.longdouble), u.astype(np.longdouble)
            up[n] += h
            um[n] -= h
            fd[:, n] = (coeffs(up, p) - coeffs(um, p)) / (2 * h)
        fd[0, 3] += 1.0
        for n in range(2, 6):  # the mu and lambda columns vanish identically
            jac_err = max(jac_err, np.linalg.norm(J[:, n] - fd[:, n]) / np.linalg.norm(fd[:, n]))
        assert not np.any(J[:, :2])

    # Network backward pass against central differences of the forward map.
    net_err = 0.0
    for seed in range(50):
        net = init_network(2, seed=seed)
        net.flat[:] = np.random.default_rng(seed + 100).uniform(-1, 1, net.flat.size)
        up_seed = rng.standard_normal((2, 6)) / net.scale_set.scales()
        _, cache, regs = forward(net)
        g = backward(net, cache, regs, up_seed, flat=True)
        base = net.flat.copy()
        fd = np.zeros_like(g)
        for i in range(base.size):
            net.flat[i] = base[i] + 1e-6
            fp = np.sum(up_seed * forward(net)[0])
            net.flat[i] = base[i] - 1e-6
            fm = np.sum(up_seed * forward(net)[0])
            net.flat[i] = base[i]
            fd[i] = (fp - fm) / 2e-6
        net_err = max(net_err, np.linalg.norm(g - fd) / np.linalg.norm(fd))

    # Full weighted loss gradient, log-parameter form, longdouble oracle.
    table, _ = stack
    terms = [data_terms(spectral_derivatives(r.field), table) for r in regions]
    caches = [precompute_gram(spectral_derivatives(r.field), table) for r in regions]
    loss_err = 0.0
    for trial in range(50):
        i = trial % 2
        th = regions[i].truth.unknowns * rng.uniform(0.8, 1.2, 6)
        w = 10.0 ** rng.uniform(-3, 3, 6)
        g = loss_gradient(th, table, caches[i], w)
        fd = np.zeros(6)
        for n in range(6):
            h = 1e-6 * th[n]
            up, um = th.copy(), th.copy()
            up[n] += h
            um[n] -= h
            fd[n] = float((pointwise_ld(up, table, terms[i], w) - pointwise_ld(um, table, terms[i], w)) / (2 * h))
        loss_err = max(loss_err, np.linalg.norm(th * (g - fd)) / np.linalg.norm(th * fd))
    ok = max(jac_err, net_err, loss_err) < 1e-6
    verdict(capsys, 3, ok, f"max relative FD error: coefficient Jacobian {jac_err:.1e}, "
                           f"network backward {net_err:.1e}, loss gradient {loss_err:.1e} (< 1e-6)")


def test_criterion_04_truth_stationarity(capsys, regions, stack):
    table, st = stack
    truth = np.array([r.truth.unknowns for r in regions])
    base, _ = stacked_components(truth, table, st)
    rng = np.random.default_rng(4)
    factors = [np.full((2, 6), 1.1), np.full((2, 6), 0.9)]
    factors += [1 + 0.1 * rng.choice([-1.0, 1.0], size=(2, 6)) for _ in range(20)]
    margin = min(float(np.min(np.log10(stacked_components(truth * f, table, st)[0] / base)))
                 for f in factors)
    verdict(capsys, 4, margin >= 6, f"smallest gap between truth and 10%-perturbed components "
                                    f"{margin:.1f} orders (>= 6)")


def test_criterion_05_dynscl_reconstruction(capsys, regions):
    trace = trained(regions)
    xi = trace.xi
    limits = np.full((2, 6), 0.05)
    limits[1, KAPPA] = 0.25
    scale = trace.scales[1, KAPPA]
    ok = (np.all(xi <= limits) and scale == 1e-8 and trace.runtime < 900
          and trace.status != "diverged")
    verdict(capsys, 5, ok, f"max Xi {pct(xi.max())} ({PARAM_NAMES[int(np.argmax(xi.max(0)))]}), "
                           f"Xi(kappa_2) {pct(xi[1, KAPPA])}, kappa_2 scale {scale:g}, "
                           f"{trace.epochs} epochs in {trace.runtime:.0f} s")


def test_criterion_06_equal_weight_ablation(capsys, regions):
    ds = trained(regions).xi
    ew = trained(regions, "equal").xi
    worst = PARAM_NAMES[int(np.argmax(ew.max(0)))]
    ratio = ew.max() / ds.max()
    ok = ratio >= 10 and worst in ("lambda", "phi", "kappa")
    verdict(capsys, 6, ok, f"equal-weight max Xi {pct(ew.max())} on {worst} vs DynScl {pct(ds.max())} "
                           f"(ratio {ratio:.1f}, needs >= 10)")


def test_criterion_07_unscaled_ablation(capsys, regions):
    xi_k = {s: trained(regions, s, scaled=False).xi[:, KAPPA] for s in STRATEGIES}
    ok = all(np.all(v > 1.0) for v in xi_k.values())
    detail = ", ".join(f"{s} {'/'.join(pct(x) for x in v)}" for s, v in xi_k.items())
    verdict(capsys, 7, ok, f"Xi(kappa_1/kappa_2) without scaling: {detail} (all > 100%)")


def weighted_residual_sup_norms(net, table, st):
    """sup_n of the RMS of d(w_k l_k)/d(network parameter n), per region and component."""
    theta, cache, regs = forward(net)
    comps, _ = stacked_components(theta, table, st)
    w = WeightState("dynscl", len(regs)).update(theta, table, st, comps, None)
    J = output_jacobian(net, cache, regs, keys=tuple(net.params))
    _, df = coefficient_vectors(theta, table, st.densities)
    n_points = 64 * 64
    out = np.zeros((len(regs), 6))
    for i in range(len(regs)):
        for k in range(6):
            col = np.linalg.norm(st.R[i, k] @ (df[i, k] @ J[i]), axis=0) / np.sqrt(n_points)
            out[i, k] = w[i, k] * col.max()
    return out


def test_criterion_08_dynscl_gradient_order_one(capsys, regions, stack):
    table, st = stack
    truth = np.array([r.truth.unknowns for r in regions])
    cfg = load_config()
    logs = []
    for label in ("initial", "truth"):
        net = init_network(2, seed=0, scale_sets={"kappa": cfg.network.kappa_scales})
        net.scale_set.selection[1, KAPPA] = list(cfg.network.kappa_scales).index(1e-8)
        if label == "truth":
            raw = truth / net.scale_set.scales()
            net.params["d"][:] = np.where(net.positive_mask, softplus_inv(raw), raw).T
        logs.append(np.log10(weighted_residual_sup_norms(net, table, st)))
    lo, hi = min(l.min() for l in logs), max(l.max() for l in logs)
    ok = lo >= -3 and hi <= 3
    verdict(capsys, 8, ok, f"log10 sup-norm of d(w_k l_k)/d(weights) spans [{lo:.2f}, {hi:.2f}] "
                           f"(needs [-3, 3]); worst component per region at truth "
                           f"{np.round(logs[1].max(1), 2).tolist()}")


def test_criterion_09_noise_study(capsys, regions, config):
    study = run_noise_study(config, regions)
    counts = study.counts
    k1 = [float(study.xi[n][0, KAPPA]) for n in counts]
    monotone = all(b < a for a, b in zip(k1, k1[1:]))
    ok = monotone and k1[-1] < 0.10
    verdict(capsys, 9, ok, "Xi(kappa_1) at N_T " + ", ".join(f"{n}: {pct(v)}" for n, v in zip(counts, k1))
            + f"; monotone {monotone}; needs < 10% at the largest N_T")


def test_criterion_10_noise_anisotropy(capsys, regions):
    minor, major = [], []
    for i, r in enumerate(regions):
        th = field_misfit_theta(add_noise(r.field, NoiseSpec(0.05, 1, 0), 0, stream=i), r.field)
        minor.append(max(th[f"re_{n}"][1] for n in ("ux", "uy", "p")))
        major.append(max(th[f"im_{n}"][1] for n in ("ux", "uy", "p")))
    ok = min(minor) > 0.25 and max(major) < 0.15
    verdict(capsys, 10, ok, f"max Theta over Re components per region {np.round(minor, 3).tolist()} "
                            f"(> 0.25), over Im components {np.round(major, 3).tolist()} (< 0.15)")


def test_criterion_11_baselines_complete(capsys, regions, tmp_path):
    notes, ok = [], True
    for s in ("softadapt", "gradnorm"):
        trace = trained(regions, s)
        out = tmp_path / s
        paths = emit_reports(trace, out, figures=False)
        table = write_xi_table(trace, out / "xi.csv")
        finite = bool(np.all(np.isfinite(trace.loss)))
        budget = trace.config["training"]["epochs"]
        done = finite and (trace.status == "converged" or
                           (trace.status == "budget" and trace.epochs == budget))
        ok &= done and paths["trace"].exists() and table.exists()
        notes.append(f"{s} {trace.status} after {trace.epochs} epochs, max Xi {pct(trace.xi.max())}")
    verdict(capsys, 11, ok, "; ".join(notes))


def test_criterion_12_determinism(capsys, regions, tmp_path):
    cfg = load_config(None, ["training.epochs=3000", f"out_dir={json.dumps(str(tmp_path))}"])
    blobs = []
    for _ in range(2):
        emit_reports(run_reconstruction(cfg, regions), tmp_path, figures=False)
        doc = json.loads((tmp_path / "summary.json").read_text())
        doc.pop("timestamp"), doc.pop("runtime_seconds")
        blobs.append((json.dumps(doc, sort_keys=True), (tmp_path / "trace.csv").read_bytes()))
    ok = blobs[0] == blobs[1]
    verdict(capsys, 12, ok, "summary.json (timestamps removed) and trace.csv identical across reruns"
            if ok else "reruns differ")


# ------------------------------------------------------------ trace invariants

@pytest.mark.xfail(strict=True, reason="mean-centred DynScl leaves weighted components 6-16 decades apart")
def test_dynscl_spread_after_warmup(regions):
    trace = trained(regions)
    E = trace.epochs
    logs = np.log10(trace.components[E // 10:])
    spread = logs.max(-1) - logs.min(-1)
    assert spread.max() <= 4, np.round(spread.max(0), 2)


@pytest.mark.xfail(strict=True, reason="Adam loss spikes raise some 500-epoch window minima")
def test_dynscl_loss_decreases_per_window(regions):
    trace = trained(regions)
    n = trace.epochs // 500 * 500
    minima = trace.loss[:n].reshape(-1, 500).min(axis=1)
    assert np.all(np.diff(minima) <= 0)
