"""Experiment orchestration: datasets, multi-region training, errors and reports."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .balancing import WeightState
from .biot import PARAM_NAMES, FrequencySpec, PoroelasticParams
from .config import ExperimentConfig
from .fields import (NoiseSpec, field_misfit_theta, noisy_averages, add_noise,
                     spectral_derivatives, suggest_cutoff)
from .forward import FocalField, GridSpec, SourceSpec, solve_biot_spectral
from .io import read_dataset
from .network import (AdamState, NonFiniteGradient, adam_step, backward, canonical_snap,
                      forward, init_network, scale_snap, trunk_jacobian, weight_sup_norm)
from .residuals import (COMPONENT_NAMES, GramStack, build_factor_table, precompute_gram,
                        stacked_components)

log = logging.getLogger(__name__)


@dataclass
class RegionData:
    name: str
    field: FocalField
    truth: PoroelasticParams | None


def region_params(spec: dict) -> PoroelasticParams:
    return PoroelasticParams.from_dict(spec)


def build_regions(config: ExperimentConfig) -> list:
    """Load or synthesize the clean field of every region."""
    ph = config.physics
    grid = GridSpec(ph.L, ph.n)
    out = []
    for rc in config.regions:
        if rc.dataset is not None:
            fld, params, _ = read_dataset(rc.dataset)
            if rc.params is not None:
                params = region_params(rc.params)
        else:
            params = region_params(rc.params)
            source = SourceSpec(ph.D, ph.varsigma, tuple(rc.center))
            fld = solve_biot_spectral(params, FrequencySpec(ph.omega), source, grid, ph.fp_mode)
        fld.half_width = ph.half_width
        out.append(RegionData(rc.name, fld, params))
    omegas = {r.field.omega for r in out}
    if len(omegas) != 1:
        raise ValueError(f"all regions must share one frequency, got {sorted(omegas)}")
    return out


def gram_stack(fields, n_samples=64, cutoff=None, densities=None):
    """Factor table and stacked Gram factors for a list of focal fields."""
    omega = fields[0].omega
    table = build_factor_table(omega)
    caches = []
    for i, fld in enumerate(fields):
        dens = (2.27, 1.0, 0.117) if densities is None else densities[i]
        bundle = spectral_derivatives(fld, cutoff=cutoff, n_samples=n_samples)
        caches.append(precompute_gram(bundle, table, dens))
    return table, GramStack.from_caches(caches)


@dataclass
class TrainTrace:
    region_names: list
    loss: np.ndarray  # (E,) total weighted loss at the start of each epoch
    components: np.ndarray  # (E, R, 6) weighted components w^2 ||l||^2
    weights: np.ndarray  # (E, R, 6)
    theta: np.ndarray  # (E, R, 6) predictions at the start of each epoch
    final_theta: np.ndarray  # (R, 6) after the last update
    scales: np.ndarray  # (R, 6) final scale assignments
    truth: np.ndarray | None
    status: str = "budget"
    seed: int = 0
    snaps: list = field(default_factory=list)
    max_weight_norm: float = 0.0
    runtime: float = 0.0
    config: dict = field(default_factory=dict)

    @property
    def epochs(self) -> int:
        return len(self.loss)

    @property
    def xi(self):
        if self.truth is None:
            return None
        return compute_xi(self.final_theta, self.truth)


def compute_xi(predicted, truth) -> np.ndarray:
    """Componentwise relative error |theta* - theta| / |theta|."""
    if isinstance(predicted, PoroelasticParams):
        predicted = predicted.unknowns
    if isinstance(truth, PoroelasticParams):
        truth = truth.unknowns
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if np.any(truth == 0):
        raise ValueError("relative error is undefined for a zero ground-truth entry")
    return np.abs(predicted - truth) / np.abs(truth)


def train(table, stack: GramStack, config: ExperimentConfig, truth=None,
          region_names=None) -> TrainTrace:
    """Full-batch training of one network over all regions."""
    tc, nc, bc = config.training, config.network, config.balance
    n_regions = stack.R.shape[0]
    net = init_network(n_regions, nc.hidden, nc.tower, seed=config.seed,
                       scale_sets={"kappa": nc.kappa_scales, "phi": nc.phi_scales},
                       scaled=nc.scaled)
    adam = AdamState(lr=tc.lr)
    balance = WeightState(bc.strategy, n_regions, eta=bc.eta, eta_tilde=bc.eta_tilde,
                          gradnorm_lr=bc.gradnorm_lr, base_eta=bc.base_eta)
    E = tc.epochs
    loss = np.zeros(E)
    comps_w = np.zeros((E, n_regions, 6))
    weights = np.zeros((E, n_regions, 6))
    thetas = np.zeros((E, n_regions, 6))
    multi = [j for j, name in enumerate(PARAM_NAMES) if len(net.scale_set.candidates[name]) > 1]
    snaps, status, start, max_w = [], "budget", time.perf_counter(), weight_sup_norm(net)
    reference = None
    saturated = set()
    done = 0
    for ep in range(E):
        theta, fc, regions = forward(net)
        comps, per_comp = stacked_components(theta, table, stack)
        trunk = None
        if balance.needs_trunk_gradients:
            trunk = np.einsum("rkn,rnp->rkp", per_comp, trunk_jacobian(net, fc, regions))
        w = balance.update(theta, table, stack, comps, trunk)
        wc = w**2 * comps
        total = float(wc.sum())
        loss[ep], comps_w[ep], weights[ep], thetas[ep] = total, wc, w, theta
        done = ep + 1
        if reference is None:
            reference = total if np.isfinite(total) and total > 0 else 1.0
        if not np.isfinite(total) or total > tc.divergence * reference:
            status = "diverged"
            log.error("epoch %d: loss %.3e diverged; aborting", ep, total)
            break
        if total < tc.early_stop:
            status = "converged"
            break
        grad = backward(net, fc, regions, np.einsum("rk,rkn->rn", w**2, per_comp), flat=True)
        try:
            adam_step(adam, net.flat, grad)
        except NonFiniteGradient as exc:
            status = "diverged"
            log.error("epoch %d: %s", ep, exc)
            break
        max_w = max(max_w, weight_sup_norm(net))
        if tc.decay_every and (ep + 1) % tc.decay_every == 0:
            adam.lr *= tc.decay_factor
        if tc.snap_every and (ep + 1) % tc.snap_every == 0:
            for i in range(n_regions):
                for j in multi:
                    new, sat = scale_snap(net, j, i)
                    first = sat and (i, j) not in saturated
                    if first:
                        saturated.add((i, j))
                        log.warning("epoch %d: %s scale of region %d saturated at the end "
                                    "of its candidate set", ep + 1, PARAM_NAMES[j], i)
                    if new is not None or first:
                        snaps.append({"epoch": ep + 1, "region": i, "param": PARAM_NAMES[j],
                                      "scale": new, "saturated": sat})
        if tc.log_every and ep % tc.log_every == 0:
            log.info("epoch %d loss %.4e", ep, total)
    # Settle each multi-scale output on the candidate that centres its raw value.
    for i in range(n_regions):
        for j in multi:
            new, _ = canonical_snap(net, j, i)
            if new is not None:
                snaps.append({"epoch": done, "region": i, "param": PARAM_NAMES[j],
                              "scale": new, "saturated": False, "final": True})
    final, _, _ = forward(net)
    return TrainTrace(
        region_names=list(region_names or [f"region{i + 1}" for i in range(n_regions)]),
        loss=loss[:done], components=comps_w[:done], weights=weights[:done],
        theta=thetas[:done], final_theta=final, scales=net.scale_set.scales(),
        truth=None if truth is None else np.asarray(truth, dtype=float),
        status=status, seed=config.seed, snaps=snaps, max_weight_norm=max_w,
        runtime=time.perf_counter() - start, config=config.to_dict(),
    )


def run_reconstruction(config: ExperimentConfig, regions=None) -> TrainTrace:
    regions = build_regions(config) if regions is None else regions
    ph = config.physics
    table, stack = gram_stack([r.field for r in regions], ph.n_samples,
                              densities=_densities(regions))
    truth = _truth(regions)
    return train(table, stack, config, truth, [r.name for r in regions])


def _truth(regions):
    if any(r.truth is None for r in regions):
        return None
    return np.array([r.truth.unknowns for r in regions])


def _densities(regions):
    return [(r.truth.rho, r.truth.rho_f, r.truth.rho_a) if r.truth else (2.27, 1.0, 0.117)
            for r in regions]


@dataclass
class NoiseStudy:
    counts: list
    xi: dict  # N_T -> (R, 6)
    theta_misfit: dict  # region name -> {component: max Theta} for one realization
    cutoffs: dict  # N_T -> list of cutoffs per region
    traces: dict  # N_T -> TrainTrace


def run_noise_study(config: ExperimentConfig, regions=None) -> NoiseStudy:
    """Average noisy realizations, low-pass, differentiate and train at each N_T."""
    regions = build_regions(config) if regions is None else regions
    nz, ph = config.noise, config.physics
    counts = sorted(set(int(c) for c in nz.counts))
    spec = NoiseSpec(nz.level, max(counts), config.seed, nz.distribution)
    averaged = [noisy_averages(r.field, spec, counts, stream=i) for i, r in enumerate(regions)]
    misfit = {}
    for i, r in enumerate(regions):
        single = add_noise(r.field, spec, 0, stream=i)
        misfit[r.name] = {k: v[1] for k, v in field_misfit_theta(single, r.field).items()}
    xi, cutoffs, traces = {}, {}, {}
    truth = _truth(regions)
    for n_t in counts:
        flds = [avg[n_t] for avg in averaged]
        cuts = [nz.cutoff if nz.cutoff is not None else suggest_cutoff(f) for f in flds]
        table, caches = None, []
        for f, cut in zip(flds, cuts):
            t, st = gram_stack([f], ph.n_samples, cutoff=cut)
            table = t
            caches.append(st)
        stack = GramStack(np.concatenate([c.R for c in caches]),
                          np.concatenate([c.mean_abs for c in caches]), caches[0].densities)
        trace = train(table, stack, config, truth, [r.name for r in regions])
        traces[n_t], cutoffs[n_t] = trace, cuts
        xi[n_t] = trace.xi
        log.info("N_T=%d max Xi %.3g", n_t, float(np.max(trace.xi)) if trace.xi is not None else np.nan)
    return NoiseStudy(counts, xi, misfit, cutoffs, traces)


# ---------------------------------------------------------------- reports

def _fmt(x) -> str:
    return repr(float(x))


def trace_columns(names) -> list:
    cols = ["epoch", "loss"]
    for name in names:
        cols += [f"{name}:l{k + 1}" for k in range(6)]
        cols += [f"{name}:w{k + 1}" for k in range(6)]
        cols += [f"{name}:{p}" for p in PARAM_NAMES]
    return cols


def summary_dict(trace: TrainTrace, timestamp: bool = True) -> dict:
    regions = {}
    xi = trace.xi
    for i, name in enumerate(trace.region_names):
        entry = {
            "prediction": dict(zip(PARAM_NAMES, map(float, trace.final_theta[i]))),
            "scales": dict(zip(PARAM_NAMES, map(float, trace.scales[i]))),
            "final_weights": dict(zip(COMPONENT_NAMES, map(float, trace.weights[-1][i])))
            if trace.epochs else {},
        }
        if xi is not None:
            entry["truth"] = dict(zip(PARAM_NAMES, map(float, trace.truth[i])))
            entry["xi"] = dict(zip(PARAM_NAMES, map(float, xi[i])))
        regions[name] = entry
    doc = {
        "seed": trace.seed,
        "status": trace.status,
        "epochs": trace.epochs,
        "final_loss": float(trace.loss[-1]) if trace.epochs else None,
        "max_xi": float(np.max(xi)) if xi is not None else None,
        "max_weight_norm": trace.max_weight_norm,
        "regions": regions,
        "snaps": trace.snaps,
        "config": trace.config,
    }
    if timestamp:
        doc["timestamp"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        doc["runtime_seconds"] = trace.runtime
    return doc


def emit_reports(trace: TrainTrace, out_dir, figures: bool = True) -> dict:
    """Write trace.csv, weights.csv, summary.json and figures into ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths = {}
    names = trace.region_names
    E, R = trace.epochs, len(names)
    rows = np.concatenate([
        np.arange(E)[:, None], trace.loss[:, None],
        np.concatenate([np.concatenate([trace.components[:, i], trace.weights[:, i],
                                        trace.theta[:, i]], axis=1) for i in range(R)], axis=1)
        if E else np.zeros((0, 18 * R)),
    ], axis=1)
    paths["trace"] = out / "trace.csv"
    np.savetxt(paths["trace"], rows, delimiter=",", header=",".join(trace_columns(names)),
               comments="", fmt=["%d"] + ["%.7e"] * (rows.shape[1] - 1))
    paths["weights"] = out / "weights.csv"
    with open(paths["weights"], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "region"] + [f"w{k + 1}" for k in range(6)])
        for ep in range(E):
            for i, name in enumerate(names):
                wr.writerow([ep, name] + [f"{v:.7e}" for v in trace.weights[ep, i]])
    paths["summary"] = out / "summary.json"
    paths["summary"].write_text(json.dumps(summary_dict(trace), indent=2, sort_keys=True))
    if figures:
        from .plotting import plot_trace
        paths.update(plot_trace(trace, out))
    return paths


def emit_noise_report(study: NoiseStudy, out_dir, figures: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"table": out / "noise_study.csv", "summary": out / "noise_study.json"}
    names = next(iter(study.traces.values())).region_names
    with open(paths["table"], "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["n_t", "region"] + [f"xi_{p}" for p in PARAM_NAMES] + ["cutoff"])
        for n_t in study.counts:
            for i, name in enumerate(names):
                xi = study.xi[n_t]
                vals = [_fmt(v) for v in xi[i]] if xi is not None else [""] * 6
                wr.writerow([n_t, name] + vals + [_fmt(study.cutoffs[n_t][i])])
    doc = {
        "counts": study.counts,
        "xi": {str(k): (v.tolist() if v is not None else None) for k, v in study.xi.items()},
        "theta_misfit": study.theta_misfit,
        "cutoffs": {str(k): v for k, v in study.cutoffs.items()},
        "seed": next(iter(study.traces.values())).seed,
        "config": next(iter(study.traces.values())).config,
    }
    paths["summary"].write_text(json.dumps(doc, indent=2, sort_keys=True))
    if figures:
        from .plotting import plot_noise_study
        paths.update(plot_noise_study(study, out))
    return paths


def load_trace(path) -> TrainTrace:
    """Rebuild a trace from ``trace.csv`` and the ``summary.json`` beside it."""
    path = Path(path)
    summary_path = path.with_name("summary.json")
    if not summary_path.exists():
        raise FileNotFoundError(f"missing {summary_path} next to {path}")
    summary = json.loads(summary_path.read_text())
    names = list(summary["regions"])
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    if header != trace_columns(names):
        raise ValueError(f"{path} does not match the regions listed in {summary_path}")
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    E, R = rows.shape[0], len(names)
    block = rows[:, 2:].reshape(E, R, 3, 6)
    regions = summary["regions"]
    truth = None
    if all("truth" in regions[n] for n in names):
        truth = np.array([[regions[n]["truth"][p] for p in PARAM_NAMES] for n in names])
    return TrainTrace(
        region_names=names, loss=rows[:, 1], components=block[:, :, 0],
        weights=block[:, :, 1], theta=block[:, :, 2],
        final_theta=np.array([[regions[n]["prediction"][p] for p in PARAM_NAMES] for n in names]),
        scales=np.array([[regions[n]["scales"][p] for p in PARAM_NAMES] for n in names]),
        truth=truth, status=summary.get("status", "budget"), seed=summary.get("seed", 0),
        snaps=summary.get("snaps", []), max_weight_norm=summary.get("max_weight_norm", 0.0),
        runtime=summary.get("runtime_seconds", 0.0), config=summary.get("config", {}),
    )


def write_xi_table(trace: TrainTrace, path) -> Path:
    path = Path(path)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["region"] + [f"pred_{p}" for p in PARAM_NAMES] + [f"xi_{p}" for p in PARAM_NAMES])
        xi = trace.xi
        for i, name in enumerate(trace.region_names):
            errs = [_fmt(v) for v in xi[i]] if xi is not None else [""] * 6
            wr.writerow([name] + [_fmt(v) for v in trace.final_theta[i]] + errs)
    return path
