"""flwsim: a deterministic simulator for collaborative learning over
simulated wireless networks.

Subpackage map: :mod:`flwsim.numerics` (losses, gradients, sharding, seeded
randomness), :mod:`flwsim.compression` and :mod:`flwsim.codec` (sparsifiers,
quantizers, error feedback, the position wire format), :mod:`flwsim.topology`
(graphs and consensus), :mod:`flwsim.training` (all collaborative loops),
:mod:`flwsim.wireless` (channels, SINR, success probabilities, latency),
:mod:`flwsim.scheduling` (device-selection policies), and the experiment
harness in :mod:`flwsim.config`, :mod:`flwsim.runner`, :mod:`flwsim.cli`.
"""

__version__ = "0.1.0"

from .compression import CompressorSpec, ErrorState, Mask, SparseUpdate
from .config import ExperimentConfig, parse_config
from .numerics import (DataShard, LogisticLoss, PerceptronLoss, QuadraticLoss,
                       RngStream, grad, make_shards, sgd_step)
from .runner import run_experiment
from .training import RunTrace, TrainConfig, make_devices

__all__ = [
    "CompressorSpec", "DataShard", "ErrorState", "ExperimentConfig",
    "LogisticLoss", "Mask", "PerceptronLoss", "QuadraticLoss", "RngStream",
    "RunTrace", "SparseUpdate", "TrainConfig", "grad", "make_devices",
    "make_shards", "parse_config", "run_experiment", "sgd_step",
]
