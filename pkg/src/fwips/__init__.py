"""Fingerprinting-based WiFi indoor positioning with backpropagation networks.

Offline stage: radio maps (:mod:`fwips.radiomap`), synthetic surveys
(:mod:`fwips.synth`) and network-based map reconstruction
(:mod:`fwips.pipelines`). Online stage: kNN / WkNN (:mod:`fwips.fla`) and
network-based localization. Hot loops run in a compiled extension when it
is built, see :func:`fwips.backend`.
"""

from . import _kernels
from .ann import Network, TrainingConfig, TrainingOutcome, StopReason, init_network, train
from .fla import EvalReport, cdf, evaluate, k_upper_bound, knn_locate, wknn_locate
from .pipelines import (LocalizationModel, RadioMapModel, reconstruct, replicate_experiment,
                        train_la, train_rm)
from .radiomap import AffineNormalizer, EvalSet, Extent, RadioMap, downsample, make_grid
from .synth import SynthScene, generate_orm, generate_vds

__all__ = [
    "AffineNormalizer", "EvalReport", "EvalSet", "Extent", "LocalizationModel", "Network",
    "RadioMap", "RadioMapModel", "StopReason", "SynthScene", "TrainingConfig", "TrainingOutcome",
    "backend", "cdf", "downsample", "evaluate", "generate_orm", "generate_vds", "init_network",
    "k_upper_bound", "knn_locate", "make_grid", "reconstruct", "replicate_experiment", "train",
    "train_la", "train_rm", "wknn_locate",
]
__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel backend, ``"cython"`` or ``"python"``."""
    return _kernels.active()
