"""Detection of straight-line branch regions (diamonds and triangles) and
the function/file/line filters that restrict which ones get transformed."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from .ir import BasicBlock, Function, Instruction, Value, fresh_label

DEFAULT_MAX_BLOCK_SIZE = 64


@dataclass
class DiamondRegion:
    head_block: str
    condition: Value
    then_block: str
    else_block: str
    merge_block: str
    synthesized_else: bool = False
    # set for triangles that still need an empty block inserted
    pending_side: Optional[str] = None
    branch_line: Optional[int] = None

    @property
    def is_triangle(self) -> bool:
        return self.pending_side is not None

    @property
    def one_sided(self) -> bool:
        return self.synthesized_else or self.is_triangle

    @property
    def region_id(self) -> str:
        return self.head_block


@dataclass
class FilterSpec:
    include_funcs: Optional[set] = None
    exclude_funcs: set = field(default_factory=set)
    exclude_files: set = field(default_factory=set)
    include_lines: Optional[dict] = None  # filename -> set of line numbers
    default_file: Optional[str] = None  # file name for functions without a `source` attribute

    def __post_init__(self):
        if self.include_funcs is not None and self.exclude_funcs:
            overlap = set(self.include_funcs) & set(self.exclude_funcs)
            if overlap:
                raise ValueError(f"functions both included and excluded: {sorted(overlap)}")

    def file_of(self, fn: Function) -> Optional[str]:
        return fn.source_file if fn.source_file is not None else self.default_file

    def accepts_function(self, fn: Function) -> bool:
        src = self.file_of(fn)
        if self.include_funcs is not None and fn.name not in self.include_funcs:
            return False
        if fn.name in self.exclude_funcs:
            return False
        if src is not None and (src in self.exclude_files or os.path.basename(src) in self.exclude_files):
            return False
        return True

    def accepts_branch(self, fn: Function, line: Optional[int]) -> bool:
        if not self.accepts_function(fn):
            return False
        if self.include_lines is None:
            return True
        src = self.file_of(fn)
        if src is None or line is None:
            return False
        lines = self.include_lines.get(src)
        if lines is None:
            lines = self.include_lines.get(os.path.basename(src))
        return lines is not None and line in lines


def load_line_filter(path) -> dict:
    """Read a JSON object mapping file names to arrays of line numbers."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("line filter must be a JSON object")
    out = {}
    for name, lines in data.items():
        if not isinstance(lines, list) or not all(isinstance(n, int) for n in lines):
            raise ValueError(f"line filter entry {name!r} must be an array of integers")
        out[name] = set(lines)
    return out


def _is_path_block(fn: Function, preds: dict, label: str, head: str) -> Optional[str]:
    """Return the unique successor if ``label`` is a straight-line path block of ``head``."""
    bl = fn.block(label)
    if preds[label] != [head]:
        return None
    term = bl.terminator
    if term is None or term.opcode != "br":
        return None
    if bl.phis:
        return None
    return term.targets[0]


def find_regions(fn: Function, max_block_size: int = DEFAULT_MAX_BLOCK_SIZE) -> list:
    """All structurally valid branch regions, in block order, ignoring filters."""
    preds = fn.predecessors()
    out = []
    for bl in fn.blocks:
        term = bl.terminator
        if term is None or term.opcode != "br_cond":
            continue
        t, f = term.targets
        head = bl.label
        if t == f or head in (t, f):
            continue
        t_succ = _is_path_block(fn, preds, t, head)
        f_succ = _is_path_block(fn, preds, f, head)
        region = None
        if t_succ is not None and f_succ is not None and t_succ == f_succ and t_succ not in (head, t, f):
            region = DiamondRegion(head, term.operands[0], t, f, t_succ)
        elif t_succ == f and f != head:
            region = DiamondRegion(head, term.operands[0], t, f, f, pending_side="else")
        elif f_succ == t and t != head:
            region = DiamondRegion(head, term.operands[0], t, f, t, pending_side="then")
        if region is None:
            continue
        sizes = [len(fn.block(x).instructions) - 1 for x in (region.then_block, region.else_block)
                 if x != region.merge_block]
        if any(s > max_block_size for s in sizes):
            continue
        region.branch_line = term.source_line
        out.append(region)
    return out


def collect_valid_branches(
    fn: Function, filters: Optional[FilterSpec] = None, max_block_size: int = DEFAULT_MAX_BLOCK_SIZE
) -> list:
    filters = filters or FilterSpec()
    return [r for r in find_regions(fn, max_block_size) if filters.accepts_branch(fn, r.branch_line)]


def path_instructions(fn: Function, region: DiamondRegion, side: str) -> list:
    """Non-terminator instructions of one path; empty for the pending side of a triangle.

    Phis are included so that hand-built regions violating the region
    invariants are rejected by the alignment gates rather than dropped.
    """
    if region.pending_side == side:
        return []
    label = region.then_block if side == "then" else region.else_block
    return [i for i in fn.block(label).instructions if not i.is_terminator]


def canonicalize_if_then(fn: Function, region: DiamondRegion) -> DiamondRegion:
    """Insert an empty block on the missing side of a triangle so it becomes a diamond."""
    if not region.is_triangle:
        return region
    head = fn.block(region.head_block)
    merge = region.merge_block
    side = region.pending_side
    label = fresh_label(fn, f"{region.head_block}.{side}.empty")
    new = BasicBlock(label, [Instruction("br", targets=[merge], origin="extraneous")])
    term = head.terminator
    slot = 0 if side == "then" else 1
    term.targets[slot] = label
    for phi in fn.block(merge).phis:
        phi.targets = [label if t == region.head_block else t for t in phi.targets]
    pos = fn.blocks.index(fn.block(region.then_block if side == "else" else region.else_block))
    fn.blocks.insert(pos + 1 if side == "else" else pos, new)
    if side == "else":
        return DiamondRegion(region.head_block, region.condition, region.then_block, label, merge,
                             synthesized_else=True, branch_line=region.branch_line)
    return DiamondRegion(region.head_block, region.condition, label, region.else_block, merge,
                         synthesized_else=True, branch_line=region.branch_line)
