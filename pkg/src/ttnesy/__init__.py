"""Tensor-train sketches of program summaries for neurosymbolic learning."""
from .inference import RBFConfig, backward, forward
from .program import OutputKind, ProgramGraph, SubProgram, builtin_task
from .sketch import FULL, SketchConfig, TTSketch, reconstruct, tt_svd

__all__ = [
    "FULL", "OutputKind", "ProgramGraph", "RBFConfig", "SketchConfig", "SubProgram", "TTSketch",
    "backward", "builtin_task", "forward", "reconstruct", "tt_svd",
]
__version__ = "0.1.0"
