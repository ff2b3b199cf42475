"""Full-speculation if-conversion: run both paths, select the results."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

from .ir import DIV_OPS, SHIFT_OPS, BasicBlock, Const, Function, Instruction, Reg, fresh_label
from .melding import _Names, count_ops, simplify
from .regions import DiamondRegion, canonicalize_if_then, path_instructions


@dataclass
class IfConvReport:
    region: str
    transformed: bool
    ops_before: int = 0
    ops_after: int = 0
    selects_added: int = 0
    reason_if_skipped: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def speculation_hazard(instructions) -> Optional[str]:
    """Reason the instructions cannot run unconditionally, or None."""
    for inst in instructions:
        if inst.opcode == "phi":
            return "unsupported instruction"
    for inst in instructions:
        if inst.opcode in ("load", "store"):
            return "unsafe memory operation"
    for inst in instructions:
        if inst.opcode in DIV_OPS:
            d = inst.operands[1]
            if not (isinstance(d, Const) and d.value != 0):
                return "unsafe divide"
        if inst.opcode in SHIFT_OPS:
            s = inst.operands[1]
            if not (isinstance(s, Const) and s.value < inst.ty.bits):
                return "unsafe shift"
    return None


def if_convert_region(fn: Function, region: DiamondRegion, peephole: bool = True) -> IfConvReport:
    then_seq = path_instructions(fn, region, "then")
    else_seq = path_instructions(fn, region, "else")
    region_ops = count_ops(then_seq) + count_ops(else_seq)
    report = IfConvReport(region.region_id, False, region_ops, region_ops)
    reason = speculation_hazard(then_seq + else_seq)
    if reason is not None:
        report.reason_if_skipped = reason
        return report

    ops_total_before = count_ops(fn.instructions())
    region = canonicalize_if_then(fn, region)
    names = _Names(fn)
    label = fresh_label(fn, f"{region.head_block}.spec")
    body = list(then_seq) + list(else_seq)
    selects = 0
    for phi in fn.block(region.merge_block).phis:
        kt = phi.targets.index(region.then_block)
        ke = phi.targets.index(region.else_block)
        vt, ve = phi.operands[kt], phi.operands[ke]
        sel = Instruction("select", [region.condition, vt, ve], Reg(names("spec.sel"), vt.ty), vt.ty,
                          source_line=phi.source_line, origin="select")
        body.append(sel)
        selects += 1
        phi.operands[kt] = sel.result
        phi.targets[kt] = label
        del phi.operands[ke]
        del phi.targets[ke]
    body.append(Instruction("br", targets=[region.merge_block]))

    head = fn.block(region.head_block)
    head.instructions[-1] = Instruction("br", targets=[label], source_line=head.terminator.source_line)
    pos = fn.blocks.index(fn.block(region.then_block))
    fn.blocks = [b for b in fn.blocks if b.label not in (region.then_block, region.else_block)]
    fn.blocks.insert(min(pos, len(fn.blocks)), BasicBlock(label, body))
    simplify(fn, peephole)

    report.transformed = True
    report.selects_added = selects
    report.ops_after = count_ops(fn.instructions()) - (ops_total_before - region_ops)
    return report
