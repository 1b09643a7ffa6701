"""
Scale-inhomogeneous DGFF toolkit

Exact samplers, covariance oracles, Gaussian comparison checks and Monte Carlo
experiments for the extremes of the two-dimensional scale-inhomogeneous
discrete Gaussian free field and its branching random walk comparisons.
"""

__version__ = "1.0.0"

from src.errors import DGFFError
from src.lattice import GridSize, Vertex
from src.profile import EffectiveProfile, StepProfile, effective_profile, expected_max
from src.samplers import FieldSample, FieldSpec, sample_field
from src.parser import load_profile, read_field, write_field
from src.runner import ExperimentRunner, RunResult

__all__ = [
    "__version__",
    "DGFFError",
    "GridSize",
    "Vertex",
    "StepProfile",
    "EffectiveProfile",
    "effective_profile",
    "expected_max",
    "FieldSample",
    "FieldSpec",
    "sample_field",
    "load_profile",
    "read_field",
    "write_field",
    "ExperimentRunner",
    "RunResult",
]
