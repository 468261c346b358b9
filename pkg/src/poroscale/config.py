"""Experiment configuration: TOML documents with nested tables, plus overrides."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .balancing import STRATEGIES
from .biot import PARAM_NAMES, reference_region


@dataclass
class PhysicsConfig:
    omega: float = 30.0
    fp_mode: str = "dx"
    L: float = 8.0
    n: int = 512
    D: float = 5.97e5
    varsigma: float = 187.52
    half_width: float = 2.5
    n_samples: int = 64


@dataclass
class RegionConfig:
    name: str = "region"
    params: dict | None = None  # ground truth, used to synthesize data and score
    dataset: str | None = None  # CSV written by ``poroscale simulate``
    center: tuple = (0.0, 0.0)


@dataclass
class NetworkConfig:
    hidden: int = 32
    tower: int = 16
    scaled: bool = True
    kappa_scales: tuple = (1e-5, 1e-6, 1e-7, 1e-8)
    phi_scales: tuple = (0.1,)


@dataclass
class TrainingConfig:
    epochs: int = 200000
    lr: float = 3e-3
    decay_every: int = 50000
    decay_factor: float = 0.5
    snap_every: int = 100
    early_stop: float = 1e-12
    divergence: float = 1e12  # relative to the epoch-0 loss
    log_every: int = 0


@dataclass
class BalanceConfig:
    strategy: str = "dynscl"
    eta: float = 0.1
    eta_tilde: float = 1.5
    gradnorm_lr: float = 0.025
    base_eta: float = 1.0


@dataclass
class NoiseConfig:
    level: float = 0.05
    counts: tuple = (250, 1500, 2500)
    distribution: str = "uniform"
    cutoff: float | None = None  # None picks the low-pass cutoff from the data


@dataclass
class ExperimentConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    regions: list = field(default_factory=lambda: default_regions())
    network: NetworkConfig = field(default_factory=NetworkConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    balance: BalanceConfig = field(default_factory=BalanceConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)

    def validate(self, base: Path | None = None):
        problems = []
        if self.training.epochs < 0:
            problems.append("training.epochs must be non-negative")
        if self.balance.strategy not in STRATEGIES:
            problems.append(f"balance.strategy must be one of {', '.join(STRATEGIES)}")
        if not self.regions:
            problems.append("at least one region is required")
        for r in self.regions:
            if r.params is None and r.dataset is None:
                problems.append(f"region {r.name!r} needs params or a dataset")
            if r.dataset is not None:
                path = Path(r.dataset)
                if base is not None and not path.is_absolute():
                    path = base / path
                if not path.exists():
                    problems.append(f"dataset {path} for region {r.name!r} does not exist")
                else:
                    r.dataset = str(path)
            if r.params is not None:
                unknown = set(r.params) - set(PARAM_NAMES) - {"lam", "rho", "rho_f", "rho_a"}
                if unknown:
                    problems.append(f"region {r.name!r} has unknown parameters {sorted(unknown)}")
        if problems:
            raise ValueError("invalid experiment config: " + "; ".join(problems))
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def default_regions() -> list:
    out = []
    for i, name in ((1, "high-permeability"), (2, "low-permeability")):
        p = reference_region(i)
        out.append(RegionConfig(name=name, params={
            "mu": p.mu, "lambda": p.lam, "M": p.M, "alpha": p.alpha,
            "phi": p.phi, "kappa": p.kappa}))
    return out


def _build(cls, data):
    if not isinstance(data, dict):
        raise ValueError(f"expected a table for {cls.__name__}, got {data!r}")
    names = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(names)
    if unknown:
        raise ValueError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        default = getattr(cls(), key) if key != "regions" else None
        if key == "regions":
            kwargs[key] = [_build(RegionConfig, r) for r in value]
        elif is_dataclass(default):
            kwargs[key] = _build(type(default), value)
        elif isinstance(default, tuple) or key == "center":
            kwargs[key] = tuple(value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


def _coerce(text: str):
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``section.key=value`` strings; values use TOML syntax when they parse."""
    doc = copy.deepcopy(doc)
    for item in overrides or ():
        if "=" not in item:
            raise ValueError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        node = doc
        parts = key.strip().split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = _coerce(value.strip())
    return doc


def load_config(path=None, overrides=()) -> ExperimentConfig:
    doc = {}
    base = None
    if path is not None:
        path = Path(path)
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
        base = path.parent
    doc = apply_overrides(doc, overrides)
    return _build(ExperimentConfig, doc).validate(base)
