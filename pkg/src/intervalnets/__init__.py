"""Interval neural networks for uncertainty-aware system identification.

Builds interval LSTM and interval neural-ODE models whose parameters are
intervals around a crisp network, trained either in two stages (crisp fit,
then margin fit) or jointly with gradient-norm loss balancing, plus
Gaussian-head probabilistic baselines and elasticity analysis of where
uncertainty lives in the parameters.
"""

__version__ = "0.1.0"

from .intervals import Interval, IntervalMatrix
from .nets import IntervalSeries, ModelSpec, UncertaintyParams, simulate
from .objectives import MetricReport
from .dataio import RawSeries, RunConfig, load_csv, synthetic_plant
from .model_io import ModelBundle, load_model, save_model

__all__ = [
    "__version__",
    "Interval",
    "IntervalMatrix",
    "IntervalSeries",
    "ModelSpec",
    "UncertaintyParams",
    "simulate",
    "MetricReport",
    "RawSeries",
    "RunConfig",
    "load_csv",
    "synthetic_plant",
    "ModelBundle",
    "load_model",
    "save_model",
]
