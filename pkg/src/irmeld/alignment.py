"""Instruction alignment between the two paths of a branch region.

The table is filled with a match bonus for compatible pairs and a gap
penalty otherwise. Every instruction of both paths must appear in the
result, so traceback starts at the bottom-right corner (global coverage).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .ir import Instruction

GAP = None  # the empty slot

TWIN_OPCODES = frozenset(
    ["add", "sub", "mul", "udiv", "sdiv", "and", "or", "xor", "shl", "lshr", "ashr",
     "icmp", "select", "load", "store", "ptradd"]
)


@dataclass
class AlignmentParams:
    match_bonus: float = 1.0
    gap_penalty: float = 0.5
    score_threshold: float = 0.2
    threshold_one_sided: bool = False  # apply the threshold to one-sided regions too

    def __post_init__(self):
        for name in ("match_bonus", "gap_penalty", "score_threshold"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.match_bonus < 0 or self.gap_penalty < 0:
            raise ValueError("match_bonus and gap_penalty must be non-negative")


@dataclass
class AlignmentPair:
    left: Optional[Instruction]
    right: Optional[Instruction]

    def __post_init__(self):
        if self.left is None and self.right is None:
            raise ValueError("an alignment pair cannot be empty on both sides")

    @property
    def matched(self) -> bool:
        return self.left is not None and self.right is not None


@dataclass
class Alignment:
    pairs: list = field(default_factory=list)
    raw_score: float = 0.0
    normalized_score: float = 0.0
    num_matches: int = 0
    num_gaps: int = 0

    def __len__(self):
        return len(self.pairs)

    @property
    def is_complete(self) -> bool:
        return all(p.matched for p in self.pairs)

    def lefts(self) -> list:
        return [p.left for p in self.pairs if p.left is not None]

    def rights(self) -> list:
        return [p.right for p in self.pairs if p.right is not None]

    def unaligned(self) -> list:
        return [p.left if p.left is not None else p.right for p in self.pairs if not p.matched]


def compatible(a: Instruction, b: Instruction) -> bool:
    """Same operation (opcode, predicate, types); operand values may differ."""
    if a.opcode != b.opcode or a.predicate != b.predicate or a.ty != b.ty:
        return False
    if a.result_type != b.result_type or len(a.operands) != len(b.operands):
        return False
    return all(x.ty == y.ty for x, y in zip(a.operands, b.operands))


def score_of(num_matches: int, num_gaps: int, params: AlignmentParams) -> float:
    return num_matches * params.match_bonus - num_gaps * params.gap_penalty


def make_alignment(pairs: list, params: AlignmentParams) -> Alignment:
    matches = sum(1 for p in pairs if p.matched)
    gaps = len(pairs) - matches
    raw = score_of(matches, gaps, params)
    norm = raw / len(pairs) if pairs else 0.0
    return Alignment(pairs, raw, norm, matches, gaps)


def compute_alignment(then_seq: list, else_seq: list, params: Optional[AlignmentParams] = None) -> Alignment:
    params = params or AlignmentParams()
    n, m = len(then_seq), len(else_seq)
    bonus, gap = params.match_bonus, params.gap_penalty
    neg = -math.inf
    score = [[neg] * (m + 1) for _ in range(n + 1)]
    move = [[""] * (m + 1) for _ in range(n + 1)]
    score[0][0] = 0.0
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 and j == 0:
                continue
            best, how = neg, ""
            # tie order: diagonal, then-side gap, else-side gap
            if i and j and compatible(then_seq[i - 1], else_seq[j - 1]):
                best, how = score[i - 1][j - 1] + bonus, "D"
            if i and score[i - 1][j] - gap > best:
                best, how = score[i - 1][j] - gap, "L"
            if j and score[i][j - 1] - gap > best:
                best, how = score[i][j - 1] - gap, "U"
            score[i][j], move[i][j] = best, how

    pairs = []
    i, j = n, m
    while i or j:
        how = move[i][j]
        if how == "D":
            pairs.append(AlignmentPair(then_seq[i - 1], else_seq[j - 1]))
            i, j = i - 1, j - 1
        elif how == "L":
            pairs.append(AlignmentPair(then_seq[i - 1], GAP))
            i -= 1
        else:
            pairs.append(AlignmentPair(GAP, else_seq[j - 1]))
            j -= 1
    pairs.reverse()
    return make_alignment(pairs, params)


def should_transform(alignment: Alignment, region, params: Optional[AlignmentParams] = None) -> bool:
    params = params or AlignmentParams()
    if region.one_sided and not params.threshold_one_sided:
        return True
    return alignment.normalized_score >= params.score_threshold


def can_complete_alignment(alignment: Alignment, region=None) -> bool:
    """True when every unaligned instruction has a trap-free twin."""
    for p in alignment.pairs:
        for inst in (p.left, p.right):
            if inst is not None and inst.opcode not in TWIN_OPCODES:
                return False
    return True
