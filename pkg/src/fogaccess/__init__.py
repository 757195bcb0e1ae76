"""Joint activity detection and channel estimation for cell-free / fog radio access networks."""

from .amp import AmpConfig, AmpResult, DivergenceError, run_mmv_amp
from .cloud import CloudProblem, cloud_detect, concatenate
from .detect import DetectionResult, DetectorConfig, bi_ad, error_probability, nmse_db
from .fog import AssociationMap, associate_faps, run_fog
from .harness import ExperimentConfig, load_config, run_experiment
from .scenario import ConfigError, Scenario, ScenarioConfig, build_scenario

__all__ = [
    "AmpConfig", "AmpResult", "DivergenceError", "run_mmv_amp",
    "CloudProblem", "cloud_detect", "concatenate",
    "DetectionResult", "DetectorConfig", "bi_ad", "error_probability", "nmse_db",
    "AssociationMap", "associate_faps", "run_fog",
    "ExperimentConfig", "load_config", "run_experiment",
    "ConfigError", "Scenario", "ScenarioConfig", "build_scenario",
]
__version__ = "0.1.0"
