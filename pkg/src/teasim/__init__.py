"""Executable ISA and out-of-order pipeline models with refinement-based
transient-execution bug hunting."""

from .isa import IsaState, Instr, AccessMap, isa_det_step, isa_step
from .ma import MaParams, MaState, Choice, ma_step, man_step
from .variants import History, init_h, invl, is_entangled, mah_step, step_using_h

__version__ = "0.1.0"

__all__ = [
    "IsaState", "Instr", "AccessMap", "isa_det_step", "isa_step",
    "MaParams", "MaState", "Choice", "ma_step", "man_step",
    "History", "init_h", "invl", "is_entangled", "mah_step", "step_using_h",
    "__version__",
]
