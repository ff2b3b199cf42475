"""Branch elimination by melding the two paths of a region into one block.

The pipeline for one region is: align the paths, insert trap-free twins
opposite every unaligned instruction, replace each aligned pair with one
instruction whose differing operands are chosen by ``select`` on the
branch condition, then clean up the CFG.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

from .alignment import (
    Alignment,
    AlignmentPair,
    AlignmentParams,
    can_complete_alignment,
    compute_alignment,
    make_alignment,
    should_transform,
)
from .ir import (
    BasicBlock,
    Const,
    Function,
    Global,
    Instruction,
    IRModule,
    IRType,
    Reg,
    fresh_label,
    fresh_name,
    replace_uses,
)
from .regions import DiamondRegion, canonicalize_if_then, path_instructions

# provenance tags for twin operands
MIRRORED = "mirrored-def"
IDENTITY = "identity-const"
REPLICATED = "replicated-safe"
SAFE_ADDR = "safe-global-addr"

# right-hand identity for each binary op; twins always use it in that slot
_IDENTITY_RHS = {
    "add": 0, "sub": 0, "or": 0, "xor": 0, "shl": 0, "lshr": 0, "ashr": 0,
    "mul": 1, "udiv": 1, "sdiv": 1, "and": -1,
}


class MeldError(Exception):
    pass


@dataclass
class Twin:
    partner: Instruction
    twin: Instruction
    provenance: list


@dataclass
class ExtraneousPlan:
    twins: list = field(default_factory=list)

    def twin_set(self) -> set:
        return {id(t.twin) for t in self.twins}


@dataclass
class MeldMap:
    pair_images: list = field(default_factory=list)  # [(then_inst, else_inst, melded_inst)]
    reg_images: dict = field(default_factory=dict)  # original Reg -> melded Reg
    selects: list = field(default_factory=list)
    block: Optional[str] = None


@dataclass
class MeldReport:
    region: str
    transformed: bool
    selects_added: int = 0
    extraneous_added: int = 0
    num_matches: int = 0
    num_gaps: int = 0
    normalized_score: float = 0.0
    instructions_before: int = 0
    instructions_after: int = 0
    ops_before: int = 0
    ops_after: int = 0
    reason_if_skipped: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def count_ops(instructions) -> int:
    """Computational ops: everything except phis and branches/returns."""
    return sum(1 for i in instructions if i.opcode not in ("phi", "br", "br_cond", "ret"))


class _Names:
    def __init__(self, fn: Function):
        self.fn = fn
        self.taken = set()

    def __call__(self, base: str) -> str:
        name = fresh_name(self.fn, base, self.taken)
        self.taken.add(name)
        return name


def _make_twin(inst: Instruction, mirror, names: _Names, safe: Optional[str]) -> Twin:
    """Build the extraneous partner of ``inst`` for the opposite path."""
    op = inst.opcode
    ty = inst.ty
    prov = []

    def lhs(v, fallback):
        got = mirror(v)
        if got is not None:
            prov.append(got[1])
            return got[0]
        prov.append(IDENTITY if isinstance(fallback, Const) else SAFE_ADDR)
        return fallback

    def const(val, cty):
        prov.append(IDENTITY)
        return Const(cty, val)

    def safe_addr():
        if safe is None:
            raise MeldError("memory twin needs the safe global")
        prov.append(SAFE_ADDR)
        return Global(safe)

    if op in _IDENTITY_RHS:
        operands = [lhs(inst.operands[0], Const(ty, 0)), const(_IDENTITY_RHS[op], ty)]
    elif op == "icmp":
        operands = [const(0, ty), const(0, ty)]
    elif op == "select":
        operands = [const(0, IRType.i1), const(0, ty), const(0, ty)]
    elif op == "ptradd":
        base = mirror(inst.operands[0])
        if base is not None:
            prov.append(base[1])
            base = base[0]
        else:
            base = safe_addr()
        operands = [base, const(0, inst.operands[1].ty)]
    elif op == "load":
        operands = [safe_addr()]
    elif op == "store":
        operands = [lhs(inst.operands[0], Const(ty, 0)), safe_addr()]
    else:
        raise MeldError(f"no safe twin for opcode {op!r}")

    result = None
    if inst.result is not None:
        result = Reg(names(f"{inst.result.name}.x"), inst.result.ty)
    twin = Instruction(op, operands, result, ty, inst.predicate, source_line=inst.source_line, origin="extraneous")
    return Twin(inst, twin, prov)


def insert_extraneous(module: IRModule, fn: Function, region: DiamondRegion, alignment: Alignment):
    """Fill every gap of ``alignment`` with a twin; returns (complete alignment, plan).

    Twins are placed in alignment order inside the path block that lacked
    the instruction, so both path blocks end up the same length.
    """
    if region.is_triangle:
        raise MeldError("canonicalize the region before inserting twins")
    then_bl = fn.block(region.then_block)
    else_bl = fn.block(region.else_block)
    if alignment.is_complete:
        return alignment, ExtraneousPlan()

    needs_safe = any(i.opcode in ("load", "store", "ptradd") for i in alignment.unaligned())
    safe = module.ensure_safe_global() if needs_safe else module.safe_global
    names = _Names(fn)

    local_defs = {
        "then": {i.result: i for i in then_bl.body if i.result is not None},
        "else": {i.result: i for i in else_bl.body if i.result is not None},
    }
    partner = {}
    plan = ExtraneousPlan()
    new_then, new_else, pairs = [], [], []

    def mirror_for(side):
        defs = local_defs[side]

        def mirror(v):
            if isinstance(v, Reg) and v in defs:
                other = partner.get(id(defs[v]))
                if other is None or other.result is None:
                    return None
                return other.result, MIRRORED
            if isinstance(v, Reg):
                # defined before the region: dominates both paths
                return v, REPLICATED
            if isinstance(v, Global) and v.name == safe:
                return v, SAFE_ADDR
            return v, REPLICATED

        return mirror

    for p in alignment.pairs:
        a, b = p.left, p.right
        if a is None:
            t = _make_twin(b, mirror_for("else"), names, safe)
            a = t.twin
            plan.twins.append(t)
        elif b is None:
            t = _make_twin(a, mirror_for("then"), names, safe)
            b = t.twin
            plan.twins.append(t)
        partner[id(a)] = b
        partner[id(b)] = a
        new_then.append(a)
        new_else.append(b)
        pairs.append(AlignmentPair(a, b))

    then_bl.instructions = new_then + [then_bl.terminator]
    else_bl.instructions = new_else + [else_bl.terminator]
    params = AlignmentParams()
    complete = make_alignment(pairs, params)
    # keep the original scores for reporting
    complete.raw_score = alignment.raw_score
    complete.normalized_score = alignment.normalized_score
    return complete, plan


def meld_blocks(fn: Function, region: DiamondRegion, complete: Alignment) -> MeldMap:
    """Replace the two path blocks by one block of melded instructions."""
    if not complete.is_complete:
        raise MeldError("alignment is not complete")
    cond = region.condition
    names = _Names(fn)
    mm = MeldMap()
    label = fresh_label(fn, f"{region.then_block}.{region.else_block}")
    body = []

    def pick(va, vb, line):
        if va == vb:
            return va
        sel = Instruction(
            "select", [cond, va, vb], Reg(names("sel"), va.ty), va.ty, source_line=line, origin="select"
        )
        body.append(sel)
        mm.selects.append(sel)
        return sel.result

    sub = mm.reg_images
    for p in complete.pairs:
        a, b = p.left, p.right
        ops = [pick(sub.get(x, x), sub.get(y, y), a.source_line) for x, y in zip(a.operands, b.operands)]
        result = None
        if a.result is not None:
            result = Reg(names(f"{a.result.name}_{b.result.name}"), a.result.ty)
            sub[a.result] = result
            sub[b.result] = result
        m = Instruction(a.opcode, ops, result, a.ty, a.predicate, source_line=a.source_line, origin="melded")
        body.append(m)
        mm.pair_images.append((a, b, m))

    merge = fn.block(region.merge_block)
    for phi in merge.phis:
        kt = phi.targets.index(region.then_block)
        ke = phi.targets.index(region.else_block)
        vt, ve = phi.operands[kt], phi.operands[ke]
        v = pick(sub.get(vt, vt), sub.get(ve, ve), phi.source_line)
        phi.operands[kt] = v
        phi.targets[kt] = label
        del phi.operands[ke]
        del phi.targets[ke]

    body.append(Instruction("br", targets=[region.merge_block]))
    head = fn.block(region.head_block)
    old = head.terminator
    head.instructions[-1] = Instruction("br", targets=[label], source_line=old.source_line)
    pos = fn.blocks.index(fn.block(region.then_block))
    fn.blocks = [b for b in fn.blocks if b.label not in (region.then_block, region.else_block)]
    fn.blocks.insert(min(pos, len(fn.blocks)), BasicBlock(label, body))
    mm.block = label
    return mm


# --------------------------------------------------------------------------
# cleanup


def _is_identity(inst: Instruction, producers: dict) -> bool:
    rhs = _IDENTITY_RHS.get(inst.opcode)
    if rhs is None:
        return False
    x, y = inst.operands
    if not (isinstance(y, Const) and y == Const(inst.ty, rhs)):
        return False
    src = producers.get(x)
    return src is not None and src.origin in ("melded", "select")


def _fold_values(fn: Function, peephole: bool) -> bool:
    changed = False
    producers = {i.result: i for i in fn.instructions() if i.result is not None}
    for bl in fn.blocks:
        keep = []
        for inst in bl.instructions:
            repl = None
            if inst.opcode == "phi":
                vals = {v for v in inst.operands if v != inst.result}
                if len(vals) == 1:
                    repl = vals.pop()
            elif peephole and inst.opcode == "select":
                c, x, y = inst.operands
                if x == y:
                    repl = x
                elif isinstance(c, Const):
                    repl = x if c.value else y
            elif peephole and _is_identity(inst, producers):
                repl = inst.operands[0]
            if repl is None:
                keep.append(inst)
                continue
            changed = True
            replace_uses(fn, inst.result, repl)
        bl.instructions = keep
    return changed


def _merge_chains(fn: Function) -> bool:
    preds = fn.predecessors()
    entry = fn.blocks[0].label
    for a in fn.blocks:
        term = a.terminator
        if term is None or term.opcode != "br":
            continue
        target = term.targets[0]
        if target == a.label or target == entry or preds[target] != [a.label]:
            continue
        b = fn.block(target)
        for phi in b.phis:
            replace_uses(fn, phi.result, phi.operands[0])
        a.instructions = a.instructions[:-1] + [i for i in b.instructions if i.opcode != "phi"]
        for succ in b.successors():
            for phi in fn.block(succ).phis:
                phi.targets = [a.label if t == b.label else t for t in phi.targets]
        fn.blocks.remove(b)
        return True
    return False


def _skip_forwarders(fn: Function) -> bool:
    preds = fn.predecessors()
    entry = fn.blocks[0].label
    for b in fn.blocks:
        if b.label == entry or len(b.instructions) != 1:
            continue
        term = b.instructions[0]
        if term.opcode != "br":
            continue
        x = term.targets[0]
        if x == b.label:
            continue
        ps = preds[b.label]
        if not ps or len(set(ps)) != len(ps):
            continue
        target = fn.block(x)
        if target.phis and any(p in preds[x] for p in ps):
            continue
        for p in ps:
            pt = fn.block(p).terminator
            pt.targets = [x if t == b.label else t for t in pt.targets]
        for phi in target.phis:
            k = phi.targets.index(b.label)
            v = phi.operands[k]
            phi.targets[k:k + 1] = ps
            phi.operands[k:k + 1] = [v] * len(ps)
        fn.blocks.remove(b)
        return True
    return False


def _fold_same_target_branches(fn: Function) -> bool:
    changed = False
    for bl in fn.blocks:
        term = bl.terminator
        if term is not None and term.opcode == "br_cond" and term.targets[0] == term.targets[1]:
            if fn.block(term.targets[0]).phis:
                continue
            bl.instructions[-1] = Instruction("br", targets=[term.targets[0]], source_line=term.source_line)
            changed = True
    return changed


def simplify(fn: Function, peephole: bool = True) -> Function:
    """Fold trivial phis/selects and identity ops, then collapse straight-line block chains."""
    while True:
        changed = _fold_values(fn, peephole)
        changed |= _fold_same_target_branches(fn)
        while _merge_chains(fn) or _skip_forwarders(fn):
            changed = True
        if not changed:
            return fn


# --------------------------------------------------------------------------
# one region, end to end


def meld_region(
    module: IRModule,
    fn: Function,
    region: DiamondRegion,
    params: Optional[AlignmentParams] = None,
    peephole: bool = True,
    run_simplify: bool = True,
) -> MeldReport:
    params = params or AlignmentParams()
    then_seq = path_instructions(fn, region, "then")
    else_seq = path_instructions(fn, region, "else")
    alignment = compute_alignment(then_seq, else_seq, params)
    n_before = sum(1 for _ in fn.instructions())
    ops_total_before = count_ops(fn.instructions())
    region_ops = count_ops(then_seq) + count_ops(else_seq)
    report = MeldReport(
        region=region.region_id,
        transformed=False,
        num_matches=alignment.num_matches,
        num_gaps=alignment.num_gaps,
        normalized_score=alignment.normalized_score,
        instructions_before=n_before,
        instructions_after=n_before,
        ops_before=region_ops,
        ops_after=region_ops,
    )
    if not should_transform(alignment, region, params):
        report.reason_if_skipped = "score below threshold"
        return report
    if not can_complete_alignment(alignment, region):
        report.reason_if_skipped = "incompletable alignment"
        return report

    region = canonicalize_if_then(fn, region)
    complete, plan = insert_extraneous(module, fn, region, alignment)
    mm = meld_blocks(fn, region, complete)
    if run_simplify:
        simplify(fn, peephole)

    report.transformed = True
    report.selects_added = len(mm.selects)
    report.extraneous_added = len(plan.twins)
    report.instructions_after = sum(1 for _ in fn.instructions())
    report.ops_after = count_ops(fn.instructions()) - (ops_total_before - region_ops)
    return report
