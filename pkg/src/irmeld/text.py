"""Textual `.mir` format.

Example::

    global @counts : 8 = zeroinit
    func @id(i32 %x) -> i32 {
    entry:
      ret %x
    }

Comments start with ``;``. Character literals such as ``'a'`` stand for
their code point. Constants take their type from context.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .ir import (
    BINARY_OPS,
    ICMP_PREDICATES,
    Arg,
    BasicBlock,
    Const,
    Function,
    Global,
    GlobalVar,
    Instruction,
    IRModule,
    IRType,
    Reg,
    check_module,
    InvalidModule,
    to_signed,
)


@dataclass(frozen=True)
class SourceSpan:
    line: int
    column: int


class ParseError(Exception):
    def __init__(self, message: str, span: SourceSpan, kind: str = "syntax"):
        self.message = message
        self.span = span
        self.kind = kind
        super().__init__(f"{span.line}:{span.column}: {kind} error: {message}")


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>;[^\n]*)
  | (?P<arrow>->)
  | (?P<char>'(?:\\.|[^'\\])')
  | (?P<string>"[^"\n]*")
  | (?P<int>-?\d+)
  | (?P<reg>%[A-Za-z0-9_.$]+)
  | (?P<glob>@[A-Za-z0-9_.$]+)
  | (?P<ident>[A-Za-z_.$][A-Za-z0-9_.$]*)
  | (?P<punct>[(){}\[\],:=])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": 10, "t": 9, "r": 13, "0": 0, "\\": 92, "'": 39}


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int

    @property
    def span(self) -> SourceSpan:
        return SourceSpan(self.line, self.col)


def tokenize(text: str) -> list:
    toks = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", SourceSpan(line, pos - line_start + 1))
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            toks.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


class _RawOperand:
    """Operand token awaiting type resolution."""

    __slots__ = ("tok",)

    def __init__(self, tok):
        self.tok = tok


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.pos = 0

    # -- token helpers
    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.pos + k, len(self.toks) - 1)]

    def advance(self) -> Token:
        t = self.toks[self.pos]
        self.pos += 1
        return t

    def error(self, msg: str, tok: Optional[Token] = None, kind: str = "syntax"):
        t = tok or self.tok
        return ParseError(msg, t.span, kind)

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        t = self.tok
        if t.kind != kind or (text is not None and t.text != text):
            want = repr(text) if text is not None else kind
            got = repr(t.text) if t.text else t.kind
            raise self.error(f"expected {want}, found {got}")
        return self.advance()

    def accept(self, kind: str, text: Optional[str] = None) -> Optional[Token]:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            return self.advance()
        return None

    def parse_type(self, allow_void: bool = False):
        t = self.expect("ident")
        if allow_void and t.text == "void":
            return None
        try:
            return IRType(t.text)
        except ValueError:
            raise self.error(f"expected type, found {t.text!r}", t)

    def parse_int(self) -> int:
        t = self.tok
        if t.kind == "int":
            self.advance()
            return int(t.text)
        if t.kind == "char":
            self.advance()
            return _char_value(t)
        raise self.error("expected integer literal")

    # -- module
    def parse_module(self) -> IRModule:
        mod = IRModule()
        while self.tok.kind != "eof":
            t = self.tok
            if t.kind == "ident" and t.text in ("global", "safe"):
                self.parse_global(mod)
            elif t.kind == "ident" and t.text == "func":
                mod.functions.append(self.parse_function(mod))
            else:
                raise self.error(f"expected 'global' or 'func', found {t.text!r}")
        return mod

    def parse_global(self, mod: IRModule):
        safe = self.accept("ident", "safe") is not None
        self.expect("ident", "global")
        name_tok = self.expect("glob")
        self.expect("punct", ":")
        size = self.parse_int()
        self.expect("punct", "=")
        if self.accept("ident", "zeroinit"):
            init = b""
        else:
            self.expect("punct", "[")
            vals = []
            if not self.accept("punct", "]"):
                vals.append(self.parse_int())
                while self.accept("punct", ","):
                    vals.append(self.parse_int())
                self.expect("punct", "]")
            init = bytes(v & 0xFF for v in vals)
        name = name_tok.text[1:]
        if len(init) > size:
            raise self.error(f"initializer of @{name} exceeds its size", name_tok, "semantic")
        mod.globals.append(GlobalVar(name, size, init))
        if safe:
            mod.safe_global = name

    def parse_function(self, mod: IRModule) -> Function:
        self.expect("ident", "func")
        name = self.expect("glob").text[1:]
        self.expect("punct", "(")
        params = []
        if not self.accept("punct", ")"):
            while True:
                ty = self.parse_type()
                params.append((self.expect("reg").text[1:], ty))
                if self.accept("punct", ")"):
                    break
                self.expect("punct", ",")
        self.expect("arrow")
        ret = self.parse_type(allow_void=True)
        source = None
        if self.accept("ident", "source"):
            source = self.expect("string").text[1:-1]
        fn = Function(name, params, ret, [], source)
        self.expect("punct", "{")
        raw_blocks = []
        while not self.accept("punct", "}"):
            lab = self.expect("ident")
            self.expect("punct", ":")
            insts = []
            while not (self.tok.kind == "ident" and self.peek().text == ":" and self.peek().kind == "punct") and not (
                self.tok.kind == "punct" and self.tok.text == "}"
            ):
                if self.tok.kind == "eof":
                    raise self.error("unexpected end of input in function body")
                insts.append(self.parse_instruction(fn))
            raw_blocks.append((lab, insts))
        self.resolve(fn, mod, raw_blocks)
        return fn

    # -- instructions
    def parse_operand(self):
        t = self.tok
        if t.kind in ("reg", "glob", "int", "char"):
            self.advance()
            return _RawOperand(t)
        raise self.error("expected operand")

    def parse_label_ref(self) -> Token:
        return self.expect("reg")

    def parse_instruction(self, fn: Function) -> Instruction:
        start = self.tok
        line = start.line
        result = None
        if start.kind == "reg":
            result = self.advance()
            self.expect("punct", "=")
        op_tok = self.expect("ident")
        op = op_tok.text
        inst = Instruction(op, source_line=line)
        inst._span = op_tok.span
        if result is not None:
            inst._result_tok = result

        if op in BINARY_OPS:
            inst.ty = self.parse_type()
            inst.operands = [self.parse_operand()]
            self.expect("punct", ",")
            inst.operands.append(self.parse_operand())
        elif op == "icmp":
            pred = self.expect("ident")
            if pred.text not in ICMP_PREDICATES:
                raise self.error(f"unknown icmp predicate {pred.text!r}", pred)
            inst.predicate = pred.text
            inst.ty = self.parse_type()
            inst.operands = [self.parse_operand()]
            self.expect("punct", ",")
            inst.operands.append(self.parse_operand())
        elif op == "select":
            if self.tok.kind == "ident":
                inst.ty = self.parse_type()
            inst.operands = [self.parse_operand()]
            for _ in range(2):
                self.expect("punct", ",")
                inst.operands.append(self.parse_operand())
        elif op == "load":
            inst.ty = self.parse_type()
            self.expect("punct", ",")
            inst.operands = [self.parse_operand()]
        elif op == "store":
            inst.ty = self.parse_type()
            inst.operands = [self.parse_operand()]
            self.expect("punct", ",")
            inst.operands.append(self.parse_operand())
        elif op == "ptradd":
            inst.ty = IRType.ptr
            inst.operands = [self.parse_operand()]
            self.expect("punct", ",")
            inst.operands.append(self.parse_operand())
        elif op == "br":
            if self.accept("ident", "label"):
                inst.targets = [self.parse_label_ref()]
            else:
                inst.opcode = "br_cond"
                inst.operands = [self.parse_operand()]
                self.expect("punct", ",")
                self.expect("ident", "label")
                inst.targets = [self.parse_label_ref()]
                self.expect("punct", ",")
                self.expect("ident", "label")
                inst.targets.append(self.parse_label_ref())
        elif op == "ret":
            if fn.return_type is not None:
                inst.operands = [self.parse_operand()]
        elif op == "phi":
            inst.ty = self.parse_type()
            while True:
                self.expect("punct", "[")
                inst.operands.append(self.parse_operand())
                self.expect("punct", ",")
                inst.targets.append(self.parse_label_ref())
                self.expect("punct", "]")
                if not self.accept("punct", ","):
                    break
        else:
            raise self.error(f"unknown opcode {op!r}", op_tok)

        produces = op not in ("store", "br", "ret")
        if produces and result is None:
            raise self.error(f"{op} must assign a result register", op_tok)
        if not produces and result is not None:
            raise self.error(f"{op} does not produce a value", result)
        return inst

    # -- resolution
    def resolve(self, fn: Function, mod: IRModule, raw_blocks):
        labels = {}
        for lab, _ in raw_blocks:
            if lab.text in labels:
                raise self.error(f"duplicate label {lab.text!r}", lab, "semantic")
            labels[lab.text] = lab
        params = {name: Arg(k, name, ty) for k, (name, ty) in enumerate(fn.params)}
        globals_ = {g.name for g in mod.globals}

        reg_types = {}
        pending = []
        for _, insts in raw_blocks:
            for inst in insts:
                rt = getattr(inst, "_result_tok", None)
                if rt is None:
                    continue
                name = rt.text[1:]
                if name in reg_types or name in params:
                    raise self.error(f"register %{name} defined twice", rt, "semantic")
                ty = _result_type(inst)
                if ty is None:
                    pending.append(inst)
                reg_types[name] = ty

        # untyped selects take their type from a value operand
        progress = True
        while pending and progress:
            progress = False
            for inst in list(pending):
                for raw in inst.operands[1:]:
                    ty = self._operand_type(raw.tok, params, reg_types)
                    if ty is not None:
                        inst.ty = ty
                        reg_types[inst._result_tok.text[1:]] = ty
                        pending.remove(inst)
                        progress = True
                        break
        if pending:
            raise self.error("cannot infer select type; write `select <type> ...`", pending[0]._result_tok, "semantic")

        for lab, insts in raw_blocks:
            for inst in insts:
                ctx = _operand_contexts(inst, fn)
                inst.operands = [
                    self.make_value(raw.tok, cty, params, reg_types, globals_) for raw, cty in zip(inst.operands, ctx)
                ]
                if hasattr(inst, "_result_tok"):
                    name = inst._result_tok.text[1:]
                    inst.result = Reg(name, reg_types[name])
                    del inst._result_tok
                new_targets = []
                for t in inst.targets:
                    name = t.text[1:]
                    if name not in labels:
                        raise self.error(f"unknown label %{name}", t, "semantic")
                    new_targets.append(name)
                inst.targets = new_targets
                _check_types(self, inst, fn)
                del inst._span
            fn.blocks.append(BasicBlock(lab.text, insts))

    def _operand_type(self, tok, params, reg_types):
        if tok.kind == "reg":
            name = tok.text[1:]
            if name in params:
                return params[name].ty
            return reg_types.get(name)
        if tok.kind == "glob":
            return IRType.ptr
        return None

    def make_value(self, tok, cty, params, reg_types, globals_):
        if tok.kind == "reg":
            name = tok.text[1:]
            if name in params:
                return params[name]
            if name not in reg_types:
                raise self.error(f"undefined register %{name}", tok, "semantic")
            return Reg(name, reg_types[name])
        if tok.kind == "glob":
            name = tok.text[1:]
            if name not in globals_:
                raise self.error(f"unknown global @{name}", tok, "semantic")
            return Global(name)
        val = _char_value(tok) if tok.kind == "char" else int(tok.text)
        return Const(cty, val)


def _char_value(tok: Token) -> int:
    body = tok.text[1:-1]
    if body.startswith("\\"):
        try:
            return _ESCAPES[body[1]]
        except KeyError:
            raise ParseError(f"unknown escape {body!r}", tok.span)
    return ord(body)


def _result_type(inst: Instruction):
    if inst.opcode == "icmp":
        return IRType.i1
    if inst.opcode == "ptradd":
        return IRType.ptr
    return inst.ty


def _operand_contexts(inst: Instruction, fn: Function) -> list:
    """Type each operand slot expects; used to type constants."""
    op = inst.opcode
    n = len(inst.operands)
    if op in BINARY_OPS or op == "icmp" or op == "phi":
        return [inst.ty] * n
    if op == "select":
        return [IRType.i1, inst.ty, inst.ty]
    if op == "load":
        return [IRType.ptr]
    if op == "store":
        return [inst.ty, IRType.ptr]
    if op == "ptradd":
        return [IRType.ptr, IRType.i64]
    if op == "br_cond":
        return [IRType.i1]
    if op == "ret":
        return [fn.return_type] * n
    return [None] * n


def _check_types(parser: _Parser, inst: Instruction, fn: Function):
    ctx = _operand_contexts(inst, fn)
    for k, (v, want) in enumerate(zip(inst.operands, ctx)):
        if inst.opcode == "ptradd" and k == 1:
            if v.ty not in (IRType.i8, IRType.i32, IRType.i64):
                raise ParseError("ptradd offset must be an integer", inst._span, "semantic")
            continue
        if v.ty != want:
            raise ParseError(
                f"type mismatch in {inst.opcode}: operand {k} is {v.ty}, expected {want}", inst._span, "semantic"
            )


def parse_module(text: str, validate: bool = True) -> IRModule:
    """Parse `.mir` text. Raises ParseError on malformed input."""
    mod = _Parser(text).parse_module()
    if validate:
        try:
            check_module(mod)
        except InvalidModule as exc:
            raise ParseError(str(exc), SourceSpan(1, 1), "semantic") from exc
    return mod


# --------------------------------------------------------------------------
# printing


def format_value(v) -> str:
    if isinstance(v, (Reg, Arg)):
        return f"%{v.name}"
    if isinstance(v, Global):
        return f"@{v.name}"
    if isinstance(v, Const):
        if v.ty in (IRType.i1, IRType.ptr):
            return str(v.value)
        return str(to_signed(v.value, v.ty))
    return f"<{v!r}>"


def format_instruction(inst: Instruction) -> str:
    op = inst.opcode
    ops = [format_value(v) for v in inst.operands]
    lhs = f"%{inst.result.name} = " if inst.result is not None else ""
    if op in BINARY_OPS:
        body = f"{op} {inst.ty} {ops[0]}, {ops[1]}"
    elif op == "icmp":
        body = f"icmp {inst.predicate} {inst.ty} {ops[0]}, {ops[1]}"
    elif op == "select":
        typed = all(isinstance(v, Const) for v in inst.operands[1:])
        body = f"select {inst.ty} " if typed else "select "
        body += ", ".join(ops)
    elif op == "load":
        body = f"load {inst.ty}, {ops[0]}"
    elif op == "store":
        body = f"store {inst.ty} {ops[0]}, {ops[1]}"
    elif op == "ptradd":
        body = f"ptradd {ops[0]}, {ops[1]}"
    elif op == "br":
        body = f"br label %{inst.targets[0]}"
    elif op == "br_cond":
        body = f"br {ops[0]}, label %{inst.targets[0]}, label %{inst.targets[1]}"
    elif op == "ret":
        body = f"ret {ops[0]}" if ops else "ret"
    elif op == "phi":
        inc = ", ".join(f"[{v}, %{t}]" for v, t in zip(ops, inst.targets))
        body = f"phi {inst.ty} {inc}"
    else:
        body = f"{op} " + ", ".join(ops)
    return lhs + body


def format_function(fn: Function) -> str:
    params = ", ".join(f"{ty} %{name}" for name, ty in fn.params)
    ret = str(fn.return_type) if fn.return_type is not None else "void"
    head = f"func @{fn.name}({params}) -> {ret}"
    if fn.source_file is not None:
        head += f' source "{fn.source_file}"'
    lines = [head + " {"]
    for b in fn.blocks:
        lines.append(f"{b.label}:")
        lines.extend("  " + format_instruction(i) for i in b.instructions)
    lines.append("}")
    return "\n".join(lines) + "\n"


def format_global(g: GlobalVar, safe: bool) -> str:
    prefix = "safe global" if safe else "global"
    if any(g.init):
        init = "[" + ", ".join(str(b) for b in g.init) + "]"
    else:
        init = "zeroinit"
    return f"{prefix} @{g.name} : {g.size} = {init}\n"


def print_module(module: IRModule) -> str:
    out = ["; irmeld module\n"]
    for g in module.globals:
        out.append(format_global(g, g.name == module.safe_global))
    for fn in module.functions:
        out.append("\n")
        out.append(format_function(fn))
    return "".join(out)
