"""Multi-region Biot parameter reconstruction with a scaled property network."""

from .biot import PARAM_NAMES, FrequencySpec, PoroelasticParams, reference_region
from .config import ExperimentConfig, load_config
from .trainer import TrainTrace, compute_xi, run_noise_study, run_reconstruction

__version__ = "0.1.0"
