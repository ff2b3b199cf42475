import copy
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from irmeld import fixtures
from irmeld.generate import input_generator, random_module
from irmeld.interp import (
    DIV_BY_ZERO,
    FUEL_EXHAUSTED,
    INVALID_SHIFT,
    OK,
    UNMAPPED,
    default_input_generator,
    differential_check,
    interpret,
)
from irmeld.pipeline import PipelineOptions, transform_module
from irmeld.text import parse_module

OPS = parse_module("""
global @g : 4 = [1, 2, 3, 4]

func @div(i32 %a, i32 %b) -> i32 {
entry:
  %q = udiv i32 %a, %b
  ret %q
}

func @sdiv(i32 %a, i32 %b) -> i32 {
entry:
  %q = sdiv i32 %a, %b
  ret %q
}

func @shift(i8 %a, i8 %b) -> i8 {
entry:
  %s = shl i8 %a, %b
  ret %s
}

func @peek(ptr %p, i64 %off) -> i8 {
entry:
  %q = ptradd %p, %off
  %v = load i8, %q
  ret %v
}

func @glob(i64 %off) -> i32 {
entry:
  %q = ptradd @g, %off
  %v = load i32, %q
  ret %v
}

func @spin(i32 %a) -> i32 {
entry:
  br label %loop
loop:
  br label %loop
}
""")


def test_division_and_wraparound():
    assert interpret(OPS, "div", [7, 2]).return_value == 3
    assert interpret(OPS, "div", [7, 0]).outcome == DIV_BY_ZERO
    assert interpret(OPS, "sdiv", [-7 & 0xFFFFFFFF, 2]).return_value == -3 & 0xFFFFFFFF
    int_min = 0x80000000
    assert interpret(OPS, "sdiv", [int_min, 0xFFFFFFFF]).return_value == int_min


def test_shift_trap():
    assert interpret(OPS, "shift", [1, 7]).return_value == 0x80
    t = interpret(OPS, "shift", [1, 8])
    assert t.outcome == INVALID_SHIFT and t.trapped


def test_memory_bounds():
    buf = b"abc"
    assert interpret(OPS, "peek", [buf, 2]).return_value == ord("c")
    assert interpret(OPS, "peek", [buf, 3]).outcome == UNMAPPED
    assert interpret(OPS, "peek", [buf, -1 & (2**64 - 1)]).outcome == UNMAPPED
    assert interpret(OPS, "glob", [0]).return_value == 0x04030201
    assert interpret(OPS, "glob", [1]).outcome == UNMAPPED


def test_fuel_exhaustion_is_distinct():
    t = interpret(OPS, "spin", [0], fuel=1000)
    assert t.outcome == FUEL_EXHAUSTED and not t.trapped
    with pytest.raises(ValueError):
        interpret(OPS, "spin", [0], fuel=0)


def test_to_upper_counts():
    orig = fixtures.load("to_upper")
    melded = copy.deepcopy(orig)
    transform_module(melded, PipelineOptions())
    a = interpret(orig, "to_upper", [b"aZ3b", 4])
    b = interpret(melded, "to_upper", [b"aZ3b", 4])
    assert a.outcome == b.outcome == OK
    assert a.final_memory["arg:str"] == b.final_memory["arg:str"] == b"AZ3B"
    # 5 loop tests + 4 data branches
    assert a.cond_branch_count == 9 and a.branch_sites == {"loop": 5, "body": 4}
    assert b.cond_branch_count == 5 and b.branch_sites == {"loop": 5}
    assert b.select_count == 4 * 4
    assert a.select_count == 0


def test_determinism_and_count_sanity():
    mod = fixtures.load("arrays")
    for fn in mod.functions:
        rng = random.Random(fn.name)
        args = default_input_generator(fn)(rng)
        t1 = interpret(mod, fn.name, args)
        t2 = interpret(mod, fn.name, args)
        assert t1 == t2
        assert t1.total_dynamic_instructions == sum(t1.dyn_counts.values())


def test_partial_block_counts_on_trap():
    t = interpret(OPS, "div", [1, 0])
    assert t.dyn_counts == {"udiv": 1}
    assert t.total_dynamic_instructions == 1


def test_identical_modules_are_equivalent():
    mod = fixtures.load("arrays")
    for fn in mod.functions:
        assert differential_check(mod, copy.deepcopy(mod), fn.name, trials=50)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_writes_confined_to_original_writes_and_safe_global(seed):
    before = random_module(random.Random(seed))
    after = copy.deepcopy(before)
    transform_module(after, PipelineOptions())
    rng = random.Random(seed)
    for _ in range(10):
        args = input_generator(rng)
        t0 = interpret(before, "f0", args, record_writes=True)
        t1 = interpret(after, "f0", args, record_writes=True)
        if t0.outcome != OK:
            continue
        assert t1.outcome == OK
        extra = {w for w in t1.writes - t0.writes if w[0] != after.safe_global}
        assert not extra
