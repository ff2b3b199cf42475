"""Random generator of valid, branch-bearing IR functions for property testing.

Every generated function has the signature
``(ptr %buf, i32 %a, i32 %b, i8 %k, i1 %flag) -> i32`` and only touches
``%buf[0..16)`` and the module global ``@g`` (8 bytes), so any trap comes
from arithmetic (division by a zero register value), never from the
address computations themselves.
"""

from __future__ import annotations

import random

from .interp import random_int
from .ir import (
    BasicBlock,
    Const,
    Function,
    Global,
    GlobalVar,
    Instruction,
    IRModule,
    IRType,
    Reg,
)

I1, I8, I32, PTR = IRType.i1, IRType.i8, IRType.i32, IRType.ptr
BUFFER_SIZE = 16
PARAMS = [("buf", PTR), ("a", I32), ("b", I32), ("k", I8), ("flag", I1)]

_ARITH = ["add", "sub", "mul", "and", "or", "xor"]
_PREDS = ["eq", "ne", "ult", "ule", "slt", "sle", "ugt", "uge", "sgt", "sge"]


class _FunctionBuilder:
    def __init__(self, rng: random.Random, name: str, allow_div: bool = True):
        self.rng = rng
        self.allow_div = allow_div
        self.fn = Function(name, list(PARAMS), I32, [])
        self.counter = 0
        self.labels = 0
        self.pools = {I1: [self.fn.arg(4)], I8: [self.fn.arg(3)], I32: [self.fn.arg(1), self.fn.arg(2)]}
        self.cur = self.block("entry")

    # -- plumbing
    def block(self, base: str) -> BasicBlock:
        self.labels += 1
        bl = BasicBlock(f"{base}{self.labels}" if base != "entry" else "entry")
        self.fn.blocks.append(bl)
        return bl

    def reg(self, ty: IRType) -> Reg:
        self.counter += 1
        return Reg(f"v{self.counter}", ty)

    def emit(self, inst: Instruction):
        self.cur.instructions.append(inst)
        if inst.result is not None and inst.result.ty in self.pools:
            self.pools[inst.result.ty].append(inst.result)
        return inst.result

    def value(self, ty: IRType):
        rng = self.rng
        if rng.random() < 0.75 and self.pools[ty]:
            return rng.choice(self.pools[ty])
        return Const(ty, random_int(rng, ty))

    def snapshot(self):
        return {t: list(v) for t, v in self.pools.items()}

    # -- instruction mixes
    def address(self, ty: IRType):
        """A pointer that is in bounds for an access of type ``ty``."""
        rng = self.rng
        if rng.random() < 0.3:
            return Global("g") if ty.nbytes > 4 or rng.random() < 0.5 else self._offset(Global("g"), 8 - ty.nbytes)
        return self._offset(self.fn.arg(0), BUFFER_SIZE - ty.nbytes)

    def _offset(self, base, limit: int):
        # mask with the largest 2^k - 1 <= limit keeps the access in bounds
        mask = (1 << (limit + 1).bit_length() - 1) - 1
        off = self.emit(Instruction("and", [self.value(I32), Const(I32, mask)], self.reg(I32), I32))
        return self.emit(Instruction("ptradd", [base, off], self.reg(PTR), PTR))

    def op(self, kind=None):
        rng = self.rng
        kind = kind or rng.choices(
            ["arith", "div", "shift", "icmp", "select", "load", "store"], [8, 2, 2, 2, 1, 2, 2]
        )[0]
        ty = rng.choice([I32, I32, I8])
        if kind == "div" and not self.allow_div:
            kind = "arith"
        if kind == "arith":
            op = rng.choice(_ARITH)
            return self.emit(Instruction(op, [self.value(ty), self.value(ty)], self.reg(ty), ty))
        if kind == "div":
            op = rng.choice(["udiv", "sdiv"])
            div = self.value(ty) if rng.random() < 0.5 else Const(ty, rng.randint(1, 9))
            return self.emit(Instruction(op, [self.value(ty), div], self.reg(ty), ty))
        if kind == "shift":
            op = rng.choice(["shl", "lshr", "ashr"])
            if rng.random() < 0.5:
                amt = Const(ty, rng.randrange(ty.bits))
            else:
                amt = self.emit(Instruction("and", [self.value(ty), Const(ty, ty.bits - 1)], self.reg(ty), ty))
            return self.emit(Instruction(op, [self.value(ty), amt], self.reg(ty), ty))
        if kind == "icmp":
            return self.emit(Instruction("icmp", [self.value(ty), self.value(ty)], self.reg(I1), ty, rng.choice(_PREDS)))
        if kind == "select":
            return self.emit(Instruction("select", [self.value(I1), self.value(ty), self.value(ty)], self.reg(ty), ty))
        if kind == "load":
            return self.emit(Instruction("load", [self.address(ty)], self.reg(ty), ty))
        addr = self.address(ty)
        self.emit(Instruction("store", [self.value(ty), addr], None, ty))
        return None

    def straight(self, n: int, template=None) -> list:
        """Emit ``n`` random ops, or ops shaped like ``template`` when given."""
        kinds = []
        if template is not None:
            for k in template:
                kinds.append(k if self.rng.random() < 0.8 else None)
        else:
            kinds = [None] * n
        out = []
        for k in kinds:
            before = len(self.cur.instructions)
            self.op(k)
            out.append(self.cur.instructions[before:])
        return [i for chunk in out for i in chunk]

    # -- control flow
    def condition(self):
        if self.rng.random() < 0.25:
            return self.value(I1)
        ty = self.rng.choice([I32, I8])
        return self.emit(
            Instruction("icmp", [self.value(ty), self.value(ty)], self.reg(I1), ty, self.rng.choice(_PREDS))
        )

    def path(self, merge_label_holder, depth: int, template=None):
        """Fill the current block (and possibly a nested region); returns (end block, kinds)."""
        rng = self.rng
        if depth > 0 and rng.random() < 0.3:
            self.straight(rng.randint(0, 2))
            self.region(depth - 1)
        n = rng.randint(0, 5)
        insts = self.straight(n, template)
        kinds = [_kind(i) for i in insts if i.result is not None or i.opcode == "store"]
        return self.cur, kinds

    def region(self, depth: int):
        rng = self.rng
        cond = self.condition()
        head = self.cur
        shape = rng.choice(["diamond", "diamond", "tri_then", "tri_else"])
        saved = self.snapshot()
        merge = BasicBlock("")  # label assigned after the paths are emitted
        if shape == "diamond":
            t = self.block("t")
            self.cur = t
            t_end, kinds = self.path(merge, depth)
            t_pools = self.snapshot()
            self.pools = {k: list(v) for k, v in saved.items()}
            e = self.block("e")
            self.cur = e
            e_end, _ = self.path(merge, depth, template=kinds if rng.random() < 0.6 else None)
            e_pools = self.snapshot()
            sides = [(t_end, t_pools), (e_end, e_pools)]
            head.instructions.append(Instruction("br_cond", [cond], targets=[t.label, e.label]))
        else:
            p = self.block("p")
            self.cur = p
            p_end, _ = self.path(merge, depth)
            p_pools = self.snapshot()
            sides = [(p_end, p_pools), (head, saved)]
        m = self.block("m")
        merge.label = m.label
        if shape == "tri_then":
            head.instructions.append(Instruction("br_cond", [cond], targets=[p.label, m.label]))
        elif shape == "tri_else":
            head.instructions.append(Instruction("br_cond", [cond], targets=[m.label, p.label]))
        for end, _ in sides:
            if end is not head:
                end.instructions.append(Instruction("br", targets=[m.label]))
        self.cur = m
        self.pools = {k: list(v) for k, v in saved.items()}
        for _ in range(rng.randint(1, 3)):
            ty = rng.choice([I32, I32, I8])
            vals = []
            for end, pools in sides:
                new = [v for v in pools[ty] if v not in saved[ty]]
                pick = rng.choice(new) if new and rng.random() < 0.8 else (rng.choice(pools[ty]) if pools[ty] else Const(ty, 0))
                vals.append(pick)
            phi = Instruction("phi", vals, self.reg(ty), ty, targets=[end.label for end, _ in sides])
            self.emit(phi)

    def loop(self, depth: int):
        rng = self.rng
        entry = self.cur
        header = self.block("loop")
        entry.instructions.append(Instruction("br", targets=[header.label]))
        i = self.reg(I32)
        acc = self.reg(I32)
        phi_i = Instruction("phi", [Const(I32, 0)], i, I32, targets=[entry.label])
        phi_acc = Instruction("phi", [self.value(I32)], acc, I32, targets=[entry.label])
        header.instructions += [phi_i, phi_acc]
        done = self.reg(I1)
        header.instructions.append(Instruction("icmp", [i, Const(I32, rng.randint(1, 4))], done, I32, "sge"))
        body = self.block("body")
        exit_ = self.block("exit")
        header.instructions.append(Instruction("br_cond", [done], targets=[exit_.label, body.label]))
        saved = self.snapshot()
        self.cur = body
        self.pools[I32] += [i, acc]
        self.straight(rng.randint(0, 2))
        self.region(depth)
        mixed = self.emit(Instruction("add", [acc, self.value(I32)], self.reg(I32), I32))
        nxt = self.emit(Instruction("add", [i, Const(I32, 1)], self.reg(I32), I32))
        latch = self.cur
        latch.instructions.append(Instruction("br", targets=[header.label]))
        phi_i.operands.append(nxt)
        phi_i.targets.append(latch.label)
        phi_acc.operands.append(mixed)
        phi_acc.targets.append(latch.label)
        self.pools = saved
        self.pools[I32].append(acc)
        self.cur = exit_
        # keep the loop exit last for readability
        self.fn.blocks.remove(exit_)
        self.fn.blocks.append(exit_)

    def finish(self) -> Function:
        vals = self.pools[I32][-3:]
        r = vals[0]
        for v in vals[1:]:
            r = self.emit(Instruction("xor", [r, v], self.reg(I32), I32))
        self.cur.instructions.append(Instruction("ret", [r]))
        return self.fn


def _kind(inst: Instruction) -> str:
    op = inst.opcode
    if op in _ARITH:
        return "arith"
    if op in ("udiv", "sdiv"):
        return "div"
    if op in ("shl", "lshr", "ashr"):
        return "shift"
    if op == "ptradd":
        return "arith"
    return op


def random_function(rng: random.Random, name: str = "f", allow_div: bool = True) -> Function:
    b = _FunctionBuilder(rng, name, allow_div)
    b.straight(rng.randint(0, 3))
    for _ in range(rng.randint(1, 3)):
        if rng.random() < 0.25:
            b.loop(depth=rng.randint(0, 1))
        else:
            b.region(depth=rng.randint(0, 2))
        b.straight(rng.randint(0, 2))
    return b.finish()


def random_module(rng: random.Random, n_functions: int = 1, allow_div: bool = True) -> IRModule:
    init = bytes(rng.getrandbits(8) for _ in range(8))
    mod = IRModule([], [GlobalVar("g", 8, init)])
    for k in range(n_functions):
        mod.functions.append(random_function(rng, f"f{k}", allow_div))
    return mod


def input_generator(rng: random.Random) -> list:
    """Arguments matching the generated signature."""
    return [
        bytes(rng.getrandbits(8) for _ in range(BUFFER_SIZE)),
        random_int(rng, I32),
        random_int(rng, I32),
        random_int(rng, I8),
        rng.getrandbits(1),
    ]
