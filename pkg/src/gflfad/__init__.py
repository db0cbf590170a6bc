"""Genuine-focused fake audio detection: a numpy reimplementation.

Log-mel frontend, masked-autoencoder backbone with a genuine-only
reconstruction loss, cross-attention fusion, a pooled classifier, and
EER / min t-DCF scoring.
"""

from .config import TrainConfig, load_config
from .data import SynthConfig, synth_corpus
from .metrics import TdcfCosts, compute_eer, compute_min_tdcf
from .model import GflFad
from .trainer import Trainer, evaluate, sweep, train

__version__ = "0.1.0"

__all__ = [
    "GflFad",
    "SynthConfig",
    "TdcfCosts",
    "TrainConfig",
    "Trainer",
    "compute_eer",
    "compute_min_tdcf",
    "evaluate",
    "load_config",
    "sweep",
    "synth_corpus",
    "train",
]
