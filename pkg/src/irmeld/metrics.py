"""Side-by-side static and dynamic counts for original, melded and
if-converted versions of one region."""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from typing import Optional

from .alignment import AlignmentParams
from .ifconv import if_convert_region
from .interp import DEFAULT_FUEL, Program
from .ir import IRModule
from .melding import meld_region
from .regions import DiamondRegion, find_regions


@dataclass
class RegionComparison:
    region: str
    function: str
    static_ops: dict = field(default_factory=dict)  # original / melded / if_converted
    selects: dict = field(default_factory=dict)  # melded / if_converted
    transformed: dict = field(default_factory=dict)  # melded / if_converted
    reasons: dict = field(default_factory=dict)
    dynamic: dict = field(default_factory=dict)  # variant -> {cond_branches, total_instructions, traps}

    def to_dict(self) -> dict:
        return asdict(self)


def _locate(module: IRModule, function: str, head: str) -> Optional[DiamondRegion]:
    for r in find_regions(module.function(function), max_block_size=10**9):
        if r.head_block == head:
            return r
    return None


def _dynamic(module: IRModule, function: str, inputs: list, fuel: int) -> dict:
    prog = Program(module, function)
    out = {"cond_branches": 0, "total_instructions": 0, "selects": 0, "traps": 0}
    for args in inputs:
        t = prog.run(args, fuel)
        out["cond_branches"] += t.cond_branch_count
        out["total_instructions"] += t.total_dynamic_instructions
        out["selects"] += t.select_count
        out["traps"] += int(t.trapped)
    return out


def compare_region(
    module: IRModule,
    function: str,
    region: DiamondRegion,
    inputs: list = (),
    params: Optional[AlignmentParams] = None,
    peephole: bool = True,
    fuel: int = DEFAULT_FUEL,
) -> RegionComparison:
    """Meld and if-convert ``region`` on independent copies and measure all three."""
    melded = copy.deepcopy(module)
    ifconv = copy.deepcopy(module)
    mr = meld_region(melded, melded.function(function), _locate(melded, function, region.head_block), params, peephole)
    ir = if_convert_region(ifconv.function(function), _locate(ifconv, function, region.head_block), peephole)

    cmp = RegionComparison(region.region_id, function)
    cmp.static_ops = {"original": mr.ops_before, "melded": mr.ops_after, "if_converted": ir.ops_after}
    cmp.selects = {"melded": mr.selects_added, "if_converted": ir.selects_added}
    cmp.transformed = {"melded": mr.transformed, "if_converted": ir.transformed}
    cmp.reasons = {"melded": mr.reason_if_skipped, "if_converted": ir.reason_if_skipped or None}
    if inputs:
        cmp.dynamic["original"] = _dynamic(module, function, inputs, fuel)
        if mr.transformed:
            cmp.dynamic["melded"] = _dynamic(melded, function, inputs, fuel)
        if ir.transformed:
            cmp.dynamic["if_converted"] = _dynamic(ifconv, function, inputs, fuel)
    return cmp
