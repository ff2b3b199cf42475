"""Deterministic interpreter for the IR, plus differential checking.

Memory is a set of disjoint byte regions (each global, each pointer
argument buffer) separated by 4 KiB unmapped guard gaps; any access
outside a region traps. Integer arithmetic wraps at the declared width.
"""

from __future__ import annotations

import bisect
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .ir import BINARY_OPS, Arg, Const, Global, IRModule, IRType, Reg

DEFAULT_FUEL = 10_000_000
BASE_ADDRESS = 0x1000_0000
GUARD = 4096
MASK64 = (1 << 64) - 1

OK = "ok"
DIV_BY_ZERO = "div-by-zero"
UNMAPPED = "unmapped-memory"
INVALID_SHIFT = "invalid-shift"
FUEL_EXHAUSTED = "fuel-exhausted"


class Trap(Exception):
    def __init__(self, kind: str, detail: str = ""):
        self.kind = kind
        super().__init__(f"{kind}: {detail}" if detail else kind)


@dataclass
class ExecutionTrace:
    outcome: str
    return_value: Optional[int] = None
    final_memory: dict = field(default_factory=dict)
    dyn_counts: dict = field(default_factory=dict)
    cond_branch_count: int = 0
    branch_sites: dict = field(default_factory=dict)
    select_count: int = 0
    total_dynamic_instructions: int = 0
    writes: Optional[set] = None  # {(region, offset)} when requested
    trap_detail: str = ""

    @property
    def trapped(self) -> bool:
        return self.outcome not in (OK, FUEL_EXHAUSTED)


class Memory:
    def __init__(self):
        self.bases = []
        self.regions = []  # (base, end, name, bytearray)
        self.next_base = BASE_ADDRESS
        self.writes = None

    def map(self, name: str, data: bytes) -> int:
        base = self.next_base
        buf = bytearray(data)
        self.bases.append(base)
        self.regions.append((base, base + len(buf), name, buf))
        self.next_base = (base + len(buf) + GUARD + 15) & ~15
        return base

    def _find(self, addr: int, n: int):
        k = bisect.bisect_right(self.bases, addr) - 1
        if k >= 0:
            base, end, name, buf = self.regions[k]
            if addr + n <= end:
                return addr - base, name, buf
        raise Trap(UNMAPPED, f"address {addr:#x} (+{n})")

    def load(self, addr: int, ty: IRType) -> int:
        n = ty.nbytes
        off, _, buf = self._find(addr, n)
        return int.from_bytes(buf[off:off + n], "little") & ty.mask

    def store(self, addr: int, ty: IRType, value: int):
        n = ty.nbytes
        off, name, buf = self._find(addr, n)
        buf[off:off + n] = (value & ty.mask).to_bytes(n, "little")
        if self.writes is not None:
            self.writes.update((name, off + k) for k in range(n))

    def snapshot(self) -> dict:
        return {name: bytes(buf) for _, _, name, buf in self.regions}


def _sx(v: int, bits: int) -> int:
    return v - (1 << bits) if v >> (bits - 1) else v


def _sdiv(a, b, bits):
    if b == 0:
        raise Trap(DIV_BY_ZERO)
    sa, sb = _sx(a, bits), _sx(b, bits)
    q = abs(sa) // abs(sb)
    return -q if (sa < 0) != (sb < 0) else q


def _udiv(a, b, bits):
    if b == 0:
        raise Trap(DIV_BY_ZERO)
    return a // b


def _shift(kind):
    def op(a, b, bits):
        if b >= bits:
            raise Trap(INVALID_SHIFT, f"shift by {b} at width {bits}")
        if kind == "shl":
            return a << b
        if kind == "lshr":
            return a >> b
        return _sx(a, bits) >> b

    return op


_BIN = {
    "add": lambda a, b, w: a + b,
    "sub": lambda a, b, w: a - b,
    "mul": lambda a, b, w: a * b,
    "udiv": _udiv,
    "sdiv": _sdiv,
    "and": lambda a, b, w: a & b,
    "or": lambda a, b, w: a | b,
    "xor": lambda a, b, w: a ^ b,
    "shl": _shift("shl"),
    "lshr": _shift("lshr"),
    "ashr": _shift("ashr"),
}

_ICMP = {
    "eq": lambda a, b, w: a == b,
    "ne": lambda a, b, w: a != b,
    "ult": lambda a, b, w: a < b,
    "ule": lambda a, b, w: a <= b,
    "ugt": lambda a, b, w: a > b,
    "uge": lambda a, b, w: a >= b,
    "slt": lambda a, b, w: _sx(a, w) < _sx(b, w),
    "sle": lambda a, b, w: _sx(a, w) <= _sx(b, w),
    "sgt": lambda a, b, w: _sx(a, w) > _sx(b, w),
    "sge": lambda a, b, w: _sx(a, w) >= _sx(b, w),
}


class _Block:
    __slots__ = ("label", "phis", "code", "term", "counts", "size")


class Program:
    """A function prepared for repeated execution."""

    def __init__(self, module: IRModule, function_name: str):
        self.module = module
        self.fn = module.function(function_name)
        self.global_layout = {}
        addr = BASE_ADDRESS
        for g in module.globals:
            self.global_layout[g.name] = addr
            addr = (addr + g.size + GUARD + 15) & ~15
        self.blocks = {}
        for bl in self.fn.blocks:
            self.blocks[bl.label] = self._compile_block(bl)
        self.entry = self.fn.blocks[0].label

    def _operand(self, v):
        if isinstance(v, Const):
            return v.value
        if isinstance(v, Global):
            return self.global_layout[v.name]
        return v.name

    def _compile_block(self, bl) -> _Block:
        b = _Block()
        b.label = bl.label
        b.phis = []
        b.code = []
        b.term = None
        b.counts = Counter(i.opcode for i in bl.instructions)
        b.size = len(bl.instructions)
        for inst in bl.instructions:
            op = inst.opcode
            ops = [self._operand(v) for v in inst.operands]
            if op == "phi":
                b.phis.append((inst.result.name, dict(zip(inst.targets, ops))))
            elif op in BINARY_OPS:
                b.code.append((0, inst.result.name, _BIN[op], ops[0], ops[1], inst.ty.bits, inst.ty.mask))
            elif op == "icmp":
                b.code.append((1, inst.result.name, _ICMP[inst.predicate], ops[0], ops[1], inst.ty.bits, 0))
            elif op == "select":
                b.code.append((2, inst.result.name, ops[0], ops[1], ops[2], 0, 0))
            elif op == "load":
                b.code.append((3, inst.result.name, inst.ty, ops[0], None, 0, 0))
            elif op == "store":
                b.code.append((4, None, inst.ty, ops[0], ops[1], 0, 0))
            elif op == "ptradd":
                ob = inst.operands[1].ty.bits
                b.code.append((5, inst.result.name, None, ops[0], ops[1], ob, 0))
            elif op == "br":
                b.term = ("br", inst.targets[0])
            elif op == "br_cond":
                b.term = ("br_cond", ops[0], inst.targets[0], inst.targets[1])
            elif op == "ret":
                b.term = ("ret", ops[0] if ops else None)
        return b

    def run(self, args: list, fuel: int = DEFAULT_FUEL, record_writes: bool = False) -> ExecutionTrace:
        fn = self.fn
        if len(args) != len(fn.params):
            raise ValueError(f"@{fn.name} takes {len(fn.params)} arguments, got {len(args)}")
        mem = Memory()
        for g in self.module.globals:
            mem.map(g.name, g.initial_bytes())
        env = {}
        for (name, ty), a in zip(fn.params, args):
            if isinstance(a, (bytes, bytearray)):
                env[name] = mem.map(f"arg:{name}", a)
            else:
                env[name] = a & ty.mask
        if record_writes:
            mem.writes = set()

        block_runs = Counter()
        sites = Counter()
        partial = Counter()
        outcome, ret, detail = OK, None, ""
        label, prev = self.entry, None
        blocks = self.blocks
        try:
            while True:
                b = blocks[label]
                if fuel < b.size:
                    outcome = FUEL_EXHAUSTED
                    break
                fuel -= b.size
                if b.phis:
                    vals = []
                    for name, inc in b.phis:
                        v = inc[prev]
                        vals.append((name, env[v] if v.__class__ is str else v))
                    for name, v in vals:
                        env[name] = v
                done = 0
                try:
                    for kind, dest, f, x, y, w, m in b.code:
                        if x.__class__ is str:
                            x = env[x]
                        if y.__class__ is str:
                            y = env[y]
                        if kind == 0:
                            env[dest] = f(x, y, w) & m
                        elif kind == 1:
                            env[dest] = 1 if f(x, y, w) else 0
                        elif kind == 2:
                            c = env[f] if f.__class__ is str else f
                            env[dest] = x if c else y
                        elif kind == 3:
                            env[dest] = mem.load(x, f)
                        elif kind == 4:
                            mem.store(y, f, x)
                        else:
                            env[dest] = (x + _sx(y, w)) & MASK64
                        done += 1
                except Trap:
                    for inst_kind in _prefix_opcodes(fn, label, done, len(b.phis)):
                        partial[inst_kind] += 1
                    raise
                block_runs[label] += 1
                t = b.term
                if t[0] == "br":
                    prev, label = label, t[1]
                elif t[0] == "br_cond":
                    c = t[1]
                    if c.__class__ is str:
                        c = env[c]
                    sites[label] += 1
                    prev, label = label, (t[2] if c else t[3])
                else:
                    r = t[1]
                    if r is not None and r.__class__ is str:
                        r = env[r]
                    ret = r
                    break
        except Trap as exc:
            outcome, detail = exc.kind, str(exc)

        counts = Counter(partial)
        for lab, k in block_runs.items():
            for op, c in blocks[lab].counts.items():
                counts[op] += c * k
        return ExecutionTrace(
            outcome=outcome,
            return_value=ret,
            final_memory=mem.snapshot(),
            dyn_counts=dict(counts),
            cond_branch_count=sum(sites.values()),
            branch_sites=dict(sites),
            select_count=counts.get("select", 0),
            total_dynamic_instructions=sum(counts.values()),
            writes=mem.writes,
            trap_detail=detail,
        )


def _prefix_opcodes(fn, label, done, nphis):
    insts = fn.block(label).instructions
    return [i.opcode for i in insts[: nphis + done + 1]]


def interpret(module: IRModule, function_name: str, args: list, fuel: int = DEFAULT_FUEL,
              record_writes: bool = False) -> ExecutionTrace:
    """Run ``function_name``; pointer arguments may be given as ``bytes`` buffers."""
    if fuel <= 0:
        raise ValueError("fuel must be positive")
    return Program(module, function_name).run(args, fuel, record_writes)


# --------------------------------------------------------------------------
# differential checking


@dataclass
class Verdict:
    equivalent: bool
    trials: int = 0
    args: Optional[list] = None
    divergence: str = ""

    def __bool__(self):
        return self.equivalent


def random_int(rng: random.Random, ty: IRType) -> int:
    if ty is IRType.i1:
        return rng.getrandbits(1)
    pick = rng.random()
    if pick < 0.4:
        return rng.randint(-8, 8) & ty.mask
    if pick < 0.55:
        return rng.choice([0, 1, ty.mask, ty.mask >> 1, (ty.mask >> 1) + 1])
    return rng.getrandbits(ty.bits)


def default_input_generator(fn, max_buffer: int = 32) -> Callable:
    """Inputs by signature: a pointer gets a random buffer and, if the next
    parameter is an integer, that parameter receives the buffer length."""

    def gen(rng: random.Random) -> list:
        args = []
        pending_len = None
        for name, ty in fn.params:
            if ty is IRType.ptr:
                size = rng.randint(0, max_buffer)
                args.append(bytes(rng.getrandbits(8) for _ in range(size)))
                pending_len = size
            elif pending_len is not None and ty is not IRType.i1:
                args.append(pending_len)
                pending_len = None
            else:
                args.append(random_int(rng, ty))
        return args

    return gen


def compare_traces(before: ExecutionTrace, after: ExecutionTrace, ignore: set) -> str:
    """Empty string when ``after`` is an acceptable refinement of ``before``."""
    if before.outcome == FUEL_EXHAUSTED:
        return ""
    if before.outcome != OK:
        return ""
    if after.outcome != OK:
        return f"transformed program ended with {after.outcome} ({after.trap_detail})"
    if before.return_value != after.return_value:
        return f"return value {before.return_value} != {after.return_value}"
    for name, data in before.final_memory.items():
        if name in ignore:
            continue
        if after.final_memory.get(name) != data:
            return f"memory region {name} differs"
    extra = set(after.final_memory) - set(before.final_memory) - ignore
    if extra:
        return f"unexpected memory regions {sorted(extra)}"
    return ""


def differential_check(
    module_before: IRModule,
    module_after: IRModule,
    function_name: str,
    input_generator: Optional[Callable] = None,
    trials: int = 100,
    seed: int = 0,
    fuel: int = DEFAULT_FUEL,
) -> Verdict:
    p0 = Program(module_before, function_name)
    p1 = Program(module_after, function_name)
    if [t for _, t in p0.fn.params] != [t for _, t in p1.fn.params]:
        raise ValueError("signatures differ")
    gen = input_generator or default_input_generator(p0.fn)
    ignore = {n for n in (module_before.safe_global, module_after.safe_global) if n}
    rng = random.Random(seed)
    for k in range(trials):
        args = gen(rng)
        t0 = p0.run(args, fuel)
        t1 = p1.run(args, fuel)
        why = compare_traces(t0, t1, ignore)
        if why:
            return Verdict(False, k + 1, args, why)
    return Verdict(True, trials)
