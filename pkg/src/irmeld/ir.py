"""SSA intermediate representation: types, values, instructions, validation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

SAFE_GLOBAL = "__meld_safe"
SAFE_GLOBAL_SIZE = 8


class IRType(str, enum.Enum):
    i1 = "i1"
    i8 = "i8"
    i32 = "i32"
    i64 = "i64"
    ptr = "ptr"

    @property
    def bits(self) -> int:
        return {"i1": 1, "i8": 8, "i32": 32, "i64": 64, "ptr": 64}[self.value]

    @property
    def mask(self) -> int:
        return (1 << self.bits) - 1

    @property
    def nbytes(self) -> int:
        return 1 if self is IRType.i1 else self.bits // 8

    def __str__(self) -> str:
        return self.value


INT_TYPES = (IRType.i1, IRType.i8, IRType.i32, IRType.i64)


def to_signed(value: int, ty: IRType) -> int:
    if ty.bits > 1 and value >> (ty.bits - 1):
        return value - (1 << ty.bits)
    return value


@dataclass(frozen=True)
class Const:
    ty: IRType
    value: int

    def __post_init__(self):
        object.__setattr__(self, "value", self.value & self.ty.mask)


@dataclass(frozen=True)
class Reg:
    name: str
    ty: IRType


@dataclass(frozen=True)
class Global:
    name: str

    @property
    def ty(self) -> IRType:
        return IRType.ptr


@dataclass(frozen=True)
class Arg:
    index: int
    name: str
    ty: IRType


Value = Union[Const, Reg, Global, Arg]

BINARY_OPS = ("add", "sub", "mul", "udiv", "sdiv", "and", "or", "xor", "shl", "lshr", "ashr")
SHIFT_OPS = ("shl", "lshr", "ashr")
DIV_OPS = ("udiv", "sdiv")
ICMP_PREDICATES = ("eq", "ne", "ult", "ule", "slt", "sle", "ugt", "uge", "sgt", "sge")
TERMINATORS = ("br_cond", "br", "ret")
OPCODES = BINARY_OPS + ("icmp", "select", "load", "store", "ptradd") + TERMINATORS + ("phi",)


@dataclass
class Instruction:
    """One SSA operation.

    ``ty`` is the operation type: the arithmetic width for binary ops, the
    compared type for icmp, the accessed type for load/store, the value type
    for select/phi. Branch and phi labels live in ``targets``; for phi,
    ``targets[k]`` is the predecessor that supplies ``operands[k]``.
    """

    opcode: str
    operands: list = field(default_factory=list)
    result: Optional[Reg] = None
    ty: Optional[IRType] = None
    predicate: Optional[str] = None
    targets: list = field(default_factory=list)
    source_line: Optional[int] = field(default=None, compare=False)
    # provenance set by passes: "extraneous", "melded", "select"; not serialized
    origin: Optional[str] = field(default=None, compare=False)

    @property
    def is_terminator(self) -> bool:
        return self.opcode in TERMINATORS

    @property
    def result_type(self) -> Optional[IRType]:
        return self.result.ty if self.result is not None else None

    def __repr__(self) -> str:
        from .text import format_instruction

        return f"<{format_instruction(self)}>"


@dataclass
class BasicBlock:
    label: str
    instructions: list = field(default_factory=list)

    @property
    def terminator(self) -> Optional[Instruction]:
        if self.instructions and self.instructions[-1].is_terminator:
            return self.instructions[-1]
        return None

    @property
    def phis(self) -> list:
        out = []
        for inst in self.instructions:
            if inst.opcode != "phi":
                break
            out.append(inst)
        return out

    @property
    def body(self) -> list:
        """Instructions that are neither phis nor the terminator."""
        return [i for i in self.instructions if i.opcode != "phi" and not i.is_terminator]

    def successors(self) -> list:
        term = self.terminator
        if term is None or term.opcode == "ret":
            return []
        return list(term.targets)


@dataclass
class Function:
    name: str
    params: list = field(default_factory=list)  # [(name, IRType)]
    return_type: Optional[IRType] = None  # None means void
    blocks: list = field(default_factory=list)
    source_file: Optional[str] = None

    def block(self, label: str) -> BasicBlock:
        for b in self.blocks:
            if b.label == label:
                return b
        raise KeyError(label)

    def has_block(self, label: str) -> bool:
        return any(b.label == label for b in self.blocks)

    def instructions(self) -> Iterator[Instruction]:
        for b in self.blocks:
            yield from b.instructions

    def predecessors(self) -> dict:
        """Map label -> list of predecessor labels, one entry per CFG edge."""
        preds = {b.label: [] for b in self.blocks}
        for b in self.blocks:
            for t in b.successors():
                if t in preds:
                    preds[t].append(b.label)
        return preds

    def arg(self, index: int) -> Arg:
        name, ty = self.params[index]
        return Arg(index, name, ty)


@dataclass
class GlobalVar:
    name: str
    size: int
    init: bytes = b""

    def __post_init__(self):
        self.init = bytes(self.init)
        if not any(self.init):
            self.init = b""

    def initial_bytes(self) -> bytes:
        return bytes(self.init) + bytes(self.size - len(self.init))


@dataclass
class IRModule:
    functions: list = field(default_factory=list)
    globals: list = field(default_factory=list)
    safe_global: Optional[str] = None

    def function(self, name: str) -> Function:
        for f in self.functions:
            if f.name == name:
                return f
        raise KeyError(name)

    def global_var(self, name: str) -> GlobalVar:
        for g in self.globals:
            if g.name == name:
                return g
        raise KeyError(name)

    def ensure_safe_global(self) -> str:
        """Create the zero-initialized safe slot on first use and return its name."""
        if self.safe_global is None:
            self.globals.append(GlobalVar(SAFE_GLOBAL, SAFE_GLOBAL_SIZE))
            self.safe_global = SAFE_GLOBAL
        return self.safe_global


def value_type(v: Value) -> IRType:
    return v.ty


def defined_regs(fn: Function) -> list:
    return [i.result for i in fn.instructions() if i.result is not None]


def replace_uses(fn: Function, old: Value, new: Value) -> int:
    n = 0
    for inst in fn.instructions():
        for k, op in enumerate(inst.operands):
            if op == old:
                inst.operands[k] = new
                n += 1
    return n


def fresh_name(fn: Function, base: str, taken: Optional[set] = None) -> str:
    used = taken if taken is not None else set()
    used |= {r.name for r in defined_regs(fn)} | {p[0] for p in fn.params}
    if base not in used:
        return base
    k = 1
    while f"{base}.{k}" in used:
        k += 1
    return f"{base}.{k}"


def fresh_label(fn: Function, base: str) -> str:
    labels = {b.label for b in fn.blocks}
    if base not in labels:
        return base
    k = 1
    while f"{base}.{k}" in labels:
        k += 1
    return f"{base}.{k}"


# --------------------------------------------------------------------------
# analysis


def reachable(fn: Function) -> list:
    if not fn.blocks:
        return []
    seen, order, stack = set(), [], [fn.blocks[0].label]
    labels = {b.label for b in fn.blocks}
    while stack:
        lab = stack.pop()
        if lab in seen or lab not in labels:
            continue
        seen.add(lab)
        order.append(lab)
        stack.extend(reversed(fn.block(lab).successors()))
    return order


def dominators(fn: Function) -> dict:
    """Iterative dominator sets over reachable blocks."""
    order = reachable(fn)
    if not order:
        return {}
    preds = fn.predecessors()
    entry = order[0]
    universe = set(order)
    dom = {lab: set(universe) for lab in order}
    dom[entry] = {entry}
    changed = True
    while changed:
        changed = False
        for lab in order[1:]:
            ps = [p for p in preds[lab] if p in universe]
            new = set.intersection(*(dom[p] for p in ps)) if ps else set()
            new = new | {lab}
            if new != dom[lab]:
                dom[lab] = new
                changed = True
    return dom


def def_use_map(fn: Function) -> dict:
    """Map each defined Reg to (defining instruction, [using instructions])."""
    out = {}
    for inst in fn.instructions():
        if inst.result is not None:
            out[inst.result] = (inst, [])
    for inst in fn.instructions():
        for op in inst.operands:
            if isinstance(op, Reg) and op in out:
                uses = out[op][1]
                if not any(u is inst for u in uses):
                    uses.append(inst)
    return out


# --------------------------------------------------------------------------
# validation

_ARITY = {"icmp": 2, "select": 3, "load": 1, "store": 2, "ptradd": 2, "br_cond": 1, "br": 0}


def _check_instruction(fn: Function, module: IRModule, bl: BasicBlock, inst: Instruction, errs: list):
    where = f"@{fn.name}:{bl.label}"
    op = inst.opcode
    ops = inst.operands
    if op not in OPCODES:
        errs.append(f"{where}: unknown opcode {op!r}")
        return
    arity = 2 if op in BINARY_OPS else _ARITY.get(op)
    if arity is not None and len(ops) != arity:
        errs.append(f"{where}: {op} expects {arity} operands, got {len(ops)}")
        return
    has_result = op not in ("store", "br", "br_cond", "ret")
    if has_result and inst.result is None:
        errs.append(f"{where}: {op} must define a result")
        return
    if not has_result and inst.result is not None:
        errs.append(f"{where}: {op} must not define a result")

    for v in ops:
        if isinstance(v, Global):
            try:
                module.global_var(v.name)
            except KeyError:
                errs.append(f"{where}: unknown global @{v.name}")
        elif isinstance(v, Arg):
            if v.index >= len(fn.params) or fn.params[v.index] != (v.name, v.ty):
                errs.append(f"{where}: bad argument reference %{v.name}")

    ty = inst.ty
    rt = inst.result_type

    def need(cond, msg):
        if not cond:
            errs.append(f"{where}: {msg}")

    if op in BINARY_OPS:
        need(ty in INT_TYPES, f"{op} requires an integer type")
        need(all(v.ty == ty for v in ops), f"{op} operand types must be {ty}")
        need(rt == ty, f"{op} result type must be {ty}")
    elif op == "icmp":
        need(inst.predicate in ICMP_PREDICATES, f"bad icmp predicate {inst.predicate!r}")
        need(all(v.ty == ty for v in ops), f"icmp operand types must be {ty}")
        need(rt == IRType.i1, "icmp produces i1")
    elif op == "select":
        need(ops[0].ty == IRType.i1, "select condition must be i1")
        need(ops[1].ty == ty and ops[2].ty == ty, "select values must share one type")
        need(rt == ty, "select result type mismatch")
    elif op == "load":
        need(ops[0].ty == IRType.ptr, "load address must be ptr")
        need(rt == ty, "load result type mismatch")
    elif op == "store":
        need(ops[0].ty == ty, "store value type mismatch")
        need(ops[1].ty == IRType.ptr, "store address must be ptr")
    elif op == "ptradd":
        need(ops[0].ty == IRType.ptr, "ptradd base must be ptr")
        need(ops[1].ty in INT_TYPES and ops[1].ty != IRType.i1, "ptradd offset must be i8/i32/i64")
        need(rt == IRType.ptr, "ptradd produces ptr")
    elif op == "br_cond":
        need(ops[0].ty == IRType.i1, "branch condition must be i1")
        need(len(inst.targets) == 2, "br_cond needs two targets")
    elif op == "br":
        need(len(inst.targets) == 1, "br needs one target")
    elif op == "ret":
        if fn.return_type is None:
            need(not ops, "void function returns a value")
        else:
            need(len(ops) == 1 and ops[0].ty == fn.return_type, f"ret must return {fn.return_type}")
    elif op == "phi":
        need(len(ops) == len(inst.targets) and ops, "phi needs matching values and labels")
        need(all(v.ty == ty for v in ops), "phi incoming types mismatch")
        need(rt == ty, "phi result type mismatch")
    for t in inst.targets:
        if not fn.has_block(t):
            errs.append(f"{where}: unknown label %{t}")
    for v in ops:
        if isinstance(v, Const) and not (0 <= v.value <= v.ty.mask):
            errs.append(f"{where}: constant out of range")


def validate_function(fn: Function, module: IRModule) -> list:
    errs = []
    if not fn.blocks:
        errs.append(f"@{fn.name}: function has no blocks")
        return errs
    labels = [b.label for b in fn.blocks]
    if len(set(labels)) != len(labels):
        errs.append(f"@{fn.name}: duplicate block labels")
    names = [p[0] for p in fn.params]
    if len(set(names)) != len(names):
        errs.append(f"@{fn.name}: duplicate parameter names")

    defs = {}
    for b in fn.blocks:
        if not b.instructions:
            errs.append(f"@{fn.name}:{b.label}: block has no terminator")
            continue
        if not b.instructions[-1].is_terminator:
            errs.append(f"@{fn.name}:{b.label}: block has no terminator")
        seen_non_phi = False
        for k, inst in enumerate(b.instructions):
            if inst.is_terminator and k != len(b.instructions) - 1:
                errs.append(f"@{fn.name}:{b.label}: terminator {inst.opcode} not in last position")
            if inst.opcode == "phi":
                if seen_non_phi:
                    errs.append(f"@{fn.name}:{b.label}: phi after non-phi instruction")
            else:
                seen_non_phi = True
            if inst.result is not None:
                if inst.result.name in defs or inst.result.name in names:
                    errs.append(f"@{fn.name}: register %{inst.result.name} defined twice")
                defs[inst.result.name] = (b.label, k, inst.result.ty)
            _check_instruction(fn, module, b, inst, errs)
    if errs:
        return errs

    if fn.blocks[0].phis:
        errs.append(f"@{fn.name}: entry block has phis")
    preds = fn.predecessors()
    if preds[fn.blocks[0].label]:
        errs.append(f"@{fn.name}: entry block has predecessors")
    for b in fn.blocks:
        for phi in b.phis:
            if sorted(phi.targets) != sorted(preds[b.label]):
                errs.append(
                    f"@{fn.name}:{b.label}: phi %{phi.result.name} incoming labels "
                    f"{sorted(phi.targets)} != predecessors {sorted(preds[b.label])}"
                )

    dom = dominators(fn)

    def dominates(def_site, use_label, use_index):
        dlab, dk, _ = def_site
        if use_label not in dom:
            return True  # unreachable use
        if dlab not in dom[use_label]:
            return False
        return dlab != use_label or dk < use_index

    for b in fn.blocks:
        for k, inst in enumerate(b.instructions):
            for j, v in enumerate(inst.operands):
                if not isinstance(v, Reg):
                    continue
                site = defs.get(v.name)
                if site is None:
                    errs.append(f"@{fn.name}:{b.label}: use of undefined register %{v.name}")
                    continue
                if site[2] != v.ty:
                    errs.append(f"@{fn.name}:{b.label}: %{v.name} used with type {v.ty}, defined {site[2]}")
                if inst.opcode == "phi":
                    pred = inst.targets[j]
                    if pred in dom and not dominates(site, pred, len(fn.block(pred).instructions)):
                        errs.append(f"@{fn.name}:{b.label}: %{v.name} does not dominate edge from %{pred}")
                elif not dominates(site, b.label, k):
                    errs.append(f"@{fn.name}:{b.label}: %{v.name} used before definition (dominance)")
    return errs


def validate_module(module: IRModule) -> list:
    """Return every violated invariant; an empty list means the module is valid."""
    errs = []
    gnames = [g.name for g in module.globals]
    if len(set(gnames)) != len(gnames):
        errs.append("duplicate global names")
    for g in module.globals:
        if g.size < 0 or len(g.init) > g.size:
            errs.append(f"global @{g.name}: initializer larger than size")
    if module.safe_global is not None:
        try:
            sg = module.global_var(module.safe_global)
        except KeyError:
            errs.append(f"safe global @{module.safe_global} is not declared")
        else:
            if sg.size < SAFE_GLOBAL_SIZE:
                errs.append("safe global smaller than 8 bytes")
            if any(sg.init):
                errs.append("safe global must be zero-initialized")
    fnames = [f.name for f in module.functions]
    if len(set(fnames)) != len(fnames):
        errs.append("duplicate function names")
    for fn in module.functions:
        errs.extend(validate_function(fn, module))
    return errs


class InvalidModule(Exception):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


def check_module(module: IRModule) -> None:
    errs = validate_module(module)
    if errs:
        raise InvalidModule(errs)
