"""Coarse-to-fine optical flow with learned per-displacement matching costs."""

from . import autodiff, bench, data, features, flowhead, heads, matching, model
from .data import FlowSample, EvalResult, epe, fl_all, gen_synthetic
from .model import FlowModel, load_checkpoint, save_checkpoint

__all__ = [
    "autodiff", "bench", "data", "features", "flowhead", "heads", "matching",
    "model", "FlowSample", "EvalResult", "epe", "fl_all", "gen_synthetic",
    "FlowModel", "load_checkpoint", "save_checkpoint",
]

__version__ = "0.1.0"
