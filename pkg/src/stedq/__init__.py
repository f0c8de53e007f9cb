"""Quality scoring for STED-like microscopy images.

A small convolutional regressor mapping a single-channel image to a quality
score in [0, 1], trained from expert labels, together with the blind
pairwise-study apparatus (confusion/domination measures, random baseline,
simulated testers, and a judging service) used to test whether its scores
can pass for an expert's.
"""

from .data import (DatasetSplit, Image, LabeledImage, NormStats, augment,
                   compute_norm_stats, load_dataset, normalize, save_manifest,
                   stratified_split)
from .network import Checkpoint, Network, NetworkConfig, load, save
from .study import (BinnedReport, Judgment, SessionTally, SimTesterConfig,
                    StudyItem, binned_report, confusion, domination,
                    random_baseline, simulate_tester, tally)
from .synth import SynthConfig, synth_generate
from .training import TensorDataset, TrainingConfig, TrainingHistory, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "augment", "binned_report", "compute_norm_stats", "confusion", "domination",
    "evaluate", "load", "load_dataset", "normalize", "random_baseline", "save",
    "save_manifest", "simulate_tester", "stratified_split", "synth_generate",
    "tally", "train",
    "BinnedReport", "Checkpoint", "DatasetSplit", "Image", "Judgment",
    "LabeledImage", "Network", "NetworkConfig", "NormStats", "SessionTally",
    "SimTesterConfig", "StudyItem", "SynthConfig", "TensorDataset",
    "TrainingConfig", "TrainingHistory",
]
