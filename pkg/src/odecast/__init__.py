"""Latent neural-ODE engine for irregularly sampled multivariate series.

Learns continuous-time dynamics from timestamped, masked observations,
then serves distributions of future trajectories, an estimated horizon
of predictability, outcome-risk curves, and hypothetical-point queries.
"""

__version__ = "0.1.0"

from .engine import (EngineConfig, HypotheticalPoint, TrajectoryEnsemble, condition_on_point,
                     ensemble_document, estimate_hop, reconstruct_past, risk_curve,
                     sample_ensemble)
from .errors import OdecastError
from .estimator import LatentOdeForecaster
from .model import (Architecture, LatentPath, LatentPosterior, ModelParams, Reconstruction,
                    classify, decode, encode, evolve, init_params, sample_z0)
from .series import IrregularSeries, NormStats, series_from_document, series_to_document
from .training import TrainConfig, TrainReport, elbo, evaluate, train

__all__ = [
    "Architecture", "EngineConfig", "HypotheticalPoint", "IrregularSeries",
    "LatentOdeForecaster", "LatentPath", "LatentPosterior", "ModelParams", "NormStats",
    "OdecastError", "Reconstruction", "TrainConfig", "TrainReport", "TrajectoryEnsemble",
    "classify", "condition_on_point", "decode", "elbo", "encode", "ensemble_document",
    "estimate_hop", "evaluate", "evolve", "init_params", "reconstruct_past", "risk_curve",
    "sample_ensemble", "sample_z0", "series_from_document", "series_to_document", "train",
]
