"""Branch elimination for a small SSA IR by aligning and melding both paths of a branch."""

from .alignment import Alignment, AlignmentParams, compatible, compute_alignment
from .interp import differential_check, interpret
from .ir import IRModule, validate_module
from .melding import meld_region, simplify
from .regions import DiamondRegion, FilterSpec, collect_valid_branches
from .text import parse_module, print_module

__version__ = "0.1.0"

__all__ = [
    "Alignment",
    "AlignmentParams",
    "DiamondRegion",
    "FilterSpec",
    "IRModule",
    "collect_valid_branches",
    "compatible",
    "compute_alignment",
    "differential_check",
    "interpret",
    "meld_region",
    "parse_module",
    "print_module",
    "simplify",
    "validate_module",
]
