"""Movement decoding from low-frequency EEG with filter-bank TRCA and small CNNs."""

from .config import ExperimentConfig, load_config
from .core import Epochs, SynthSpec, Trial, generate_synthetic
from .epofile import read_epochs, write_epochs
from .pipeline import CvReport, run_cv

__version__ = "0.1.0"

__all__ = ["CvReport", "Epochs", "ExperimentConfig", "SynthSpec", "Trial", "generate_synthetic",
           "load_config", "read_epochs", "run_cv", "write_epochs"]
