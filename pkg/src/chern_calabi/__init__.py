"""Pseudospectral Chern-Calabi flow on flat complex tori of dimension 1 and 2."""

from .lattice import FFT_BACKEND, Grid, GridSpec, GridError, integrate, make_grid
from .geometry import HermitianMetric, MetricError, TensorField, build_metric
from .metricgen import MetricRecipe, metric_from_recipe
from .functionals import Background, mabuchi, entropy, ricci_potential, volume
from .flow import FlowAbort, FlowConfig, FlowState, RunResult, run, step

__all__ = [
    "FFT_BACKEND", "Grid", "GridSpec", "GridError", "integrate", "make_grid",
    "HermitianMetric", "MetricError", "TensorField", "build_metric",
    "MetricRecipe", "metric_from_recipe",
    "Background", "mabuchi", "entropy", "ricci_potential", "volume",
    "FlowAbort", "FlowConfig", "FlowState", "RunResult", "run", "step",
]
__version__ = "0.1.0"
