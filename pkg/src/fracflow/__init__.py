"""Fractional mean curvature of graphs: evaluation, linearization and flow."""
__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .kernels import FractionalOrder, cal_g, kernel_K
from .grid import GridFunction, sample
from .curvature import QuadratureSpec, evaluate_H, evaluate_weighted_H
from .linearized import apply_DH, linearization
from .flow import FlowConfig, run_flow
from .profiles import make_profile

__all__ = [
    "BACKEND",
    "FractionalOrder",
    "GridFunction",
    "FlowConfig",
    "QuadratureSpec",
    "apply_DH",
    "cal_g",
    "evaluate_H",
    "evaluate_weighted_H",
    "kernel_K",
    "linearization",
    "make_profile",
    "run_flow",
    "sample",
]
