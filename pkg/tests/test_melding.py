import copy

import pytest
from conftest import region_at

from irmeld import fixtures
from irmeld.alignment import AlignmentParams, compatible, compute_alignment
from irmeld.ifconv import if_convert_region
from irmeld.interp import differential_check
from irmeld.ir import Const, Global, IRType, def_use_map, validate_module
from irmeld.melding import (
    MIRRORED,
    count_ops,
    insert_extraneous,
    meld_blocks,
    meld_region,
    simplify,
)
from irmeld.pipeline import static_branch_count
from irmeld.regions import DiamondRegion, canonicalize_if_then, find_regions, path_instructions
from irmeld.text import parse_module


def _staged(name, fname, head):
    mod = fixtures.load(name)
    fn = mod.function(fname)
    region = canonicalize_if_then(fn, region_at(fn, head))
    al = compute_alignment(path_instructions(fn, region, "then"), path_instructions(fn, region, "else"))
    return mod, fn, region, al


def _all_regions():
    for name in fixtures.NAMES:
        for fn in fixtures.load(name).functions:
            for r in find_regions(fn):
                yield name, fn.name, r.head_block


def test_complete_alignment_leaves_function_unchanged():
    mod, fn, region, al = _staged("paired_adds", "paired_adds", "entry")
    before = copy.deepcopy(fn)
    complete, plan = insert_extraneous(mod, fn, region, al)
    assert complete is al and plan.twins == []
    assert fn == before
    assert mod.safe_global is None


def test_udiv_twin_uses_divisor_one():
    mod, fn, region, al = _staged("safe_div", "safe_div", "entry")
    complete, plan = insert_extraneous(mod, fn, region, al)
    (twin,) = [t for t in plan.twins if t.partner.opcode == "udiv"]
    assert twin.twin.operands[1] == Const(twin.twin.ty, 1)
    assert twin.twin.operands[0] in (twin.partner.operands[0], Const(twin.twin.ty, 0))


@pytest.mark.parametrize("name,fname,head", list(_all_regions()))
def test_twins_are_safe_isolated_and_compatible(name, fname, head):
    mod, fn, region, al = _staged(name, fname, head)
    complete, plan = insert_extraneous(mod, fn, region, al)
    assert complete.is_complete
    assert validate_module(mod) == []
    assert len(fn.block(region.then_block).body) == len(fn.block(region.else_block).body)
    twins = plan.twin_set()
    du = def_use_map(fn)
    for t in plan.twins:
        assert compatible(t.partner, t.twin)
        tw = t.twin
        if tw.opcode in ("udiv", "sdiv"):
            assert isinstance(tw.operands[1], Const) and tw.operands[1].value == 1
        if tw.opcode in ("shl", "lshr", "ashr"):
            assert tw.operands[1] == Const(tw.ty, 0)
        if tw.opcode == "load":
            assert tw.operands[0] == Global(mod.safe_global) or t.provenance[0] == MIRRORED
        if tw.opcode == "store":
            assert tw.operands[1] == Global(mod.safe_global) or t.provenance[1] == MIRRORED
        if tw.result is not None:
            for use in du[tw.result][1]:
                assert id(use) in twins, f"{use} consumes twin {tw.result}"


def test_to_upper_twin_chain_is_mirrored():
    mod, fn, region, al = _staged("to_upper", "to_upper", "body")
    _, plan = insert_extraneous(mod, fn, region, al)
    provs = [t.provenance for t in plan.twins]
    assert provs[1][0] == MIRRORED and provs[2][0] == MIRRORED and provs[3][0] == MIRRORED


def test_paired_adds_melds_with_two_selects():
    mod, fn, region, al = _staged("paired_adds", "paired_adds", "entry")
    complete, _ = insert_extraneous(mod, fn, region, al)
    mm = meld_blocks(fn, region, complete)
    assert len(mm.selects) == 2
    assert len(mm.pair_images) == 2
    assert [i.opcode for i in fn.block(mm.block).body].count("add") == 2
    assert validate_module(mod) == []


SAME = """
func @same(i1 %c, i32 %a) -> i32 {
entry:
  br %c, label %t, label %e
t:
  %x = add i32 %a, 1
  %y = mul i32 %x, 3
  br label %m
e:
  %u = add i32 %a, 1
  %v = mul i32 %u, 3
  br label %m
m:
  %r = phi i32 [%y, %t], [%v, %e]
  ret %r
}
"""


def test_identical_operands_need_no_selects():
    mod = parse_module(SAME)
    before = copy.deepcopy(mod)
    fn = mod.function("same")
    rep = meld_region(mod, fn, find_regions(fn)[0])
    assert rep.transformed and rep.selects_added == 0
    assert static_branch_count(fn) == 0
    assert [i.opcode for i in fn.instructions()] == ["add", "mul", "ret"]
    assert differential_check(before, mod, "same", trials=200)


def test_select_polarity_then_on_true():
    mod, fn, region, al = _staged("paired_adds", "paired_adds", "entry")
    complete, _ = insert_extraneous(mod, fn, region, al)
    mm = meld_blocks(fn, region, complete)
    sel = mm.selects[0]
    assert sel.operands[0] == region.condition
    assert sel.operands[1:] == [Const(IRType.i32, 10), Const(IRType.i32, 30)]


def test_simplify_folds_redundant_select_and_chains():
    mod = parse_module("""
func @f(i1 %c, i32 %a) -> i32 {
entry:
  br label %next
next:
  %s = select %c, %a, %a
  %t = select i32 1, %s, 7
  %u = add i32 %t, 0
  br label %last
last:
  ret %u
}
""")
    fn = mod.function("f")
    simplify(fn)
    assert len(fn.blocks) == 1
    # the add is not fed by a melded/select value any more once selects fold,
    # so it is kept; only the selects disappear
    assert [i.opcode for i in fn.instructions()] == ["add", "ret"]
    assert fn.blocks[0].instructions[0].operands[0].name == "a"
    assert validate_module(mod) == []


def test_meld_region_to_upper_removes_one_branch():
    mod = fixtures.load("to_upper")
    fn = mod.function("to_upper")
    n = static_branch_count(fn)
    rep = meld_region(mod, fn, find_regions(fn)[0])
    assert rep.transformed and rep.reason_if_skipped is None
    assert rep.selects_added == 4 and rep.extraneous_added == 4
    assert static_branch_count(fn) == n - 1
    assert validate_module(mod) == []


def test_meld_region_rejects_low_score_untouched():
    mod = fixtures.load("score_gate")
    fn = mod.function("score_gate")
    before = copy.deepcopy(mod)
    rep = meld_region(mod, fn, find_regions(fn)[0])
    assert not rep.transformed and rep.reason_if_skipped == "score below threshold"
    assert mod == before


def test_meld_region_rejects_incompletable():
    mod = parse_module("""
func @f(i1 %c, i32 %a) -> i32 {
entry:
  br %c, label %t, label %e
t:
  %p = phi i32 [%a, %entry]
  br label %m
e:
  br label %m
m:
  %r = phi i32 [%p, %t], [%a, %e]
  ret %r
}
""")
    fn = mod.function("f")
    before = copy.deepcopy(mod)
    region = DiamondRegion("entry", fn.arg(0), "t", "e", "m")
    rep = meld_region(mod, fn, region, AlignmentParams(score_threshold=-10))
    assert not rep.transformed and rep.reason_if_skipped == "incompletable alignment"
    assert mod == before


@pytest.mark.parametrize("name,fname,head", list(_all_regions()))
def test_each_region_melds_correctly(name, fname, head):
    before = fixtures.load(name)
    mod = copy.deepcopy(before)
    fn = mod.function(fname)
    n = static_branch_count(fn)
    rep = meld_region(mod, fn, region_at(fn, head), AlignmentParams(score_threshold=-10))
    assert rep.transformed
    assert static_branch_count(fn) == n - 1
    assert validate_module(mod) == []
    assert differential_check(before, mod, fname, trials=300, seed=3)


@pytest.mark.parametrize("name,fname,head", list(_all_regions()))
def test_static_op_bookkeeping_without_peephole(name, fname, head):
    mod = fixtures.load(name)
    fn = mod.function(fname)
    rep = meld_region(mod, fn, region_at(fn, head), AlignmentParams(score_threshold=-10), peephole=False)
    assert rep.ops_after == rep.num_matches + rep.num_gaps + rep.selects_added


def test_select_economy_versus_baseline():
    checked = 0
    for name, fname, head in _all_regions():
        fn = fixtures.load(name).function(fname)
        r = region_at(fn, head)
        t, e = path_instructions(fn, r, "then"), path_instructions(fn, r, "else")
        if [i.opcode for i in t] != [i.opcode for i in e]:
            continue
        m_fn, b_fn = copy.deepcopy(fn), copy.deepcopy(fn)
        mod = fixtures.load(name)
        m = meld_region(mod, m_fn, region_at(m_fn, head))
        b = if_convert_region(b_fn, region_at(b_fn, head))
        if b.transformed:
            checked += 1
            assert m.ops_after <= b.ops_after
    assert checked >= 3


def test_corrupted_meld_is_caught():
    before = fixtures.load("to_upper")
    mod = copy.deepcopy(before)
    fn = mod.function("to_upper")
    meld_region(mod, fn, find_regions(fn)[0])
    for inst in fn.instructions():
        if inst.opcode == "select":
            inst.operands[1], inst.operands[2] = inst.operands[2], inst.operands[1]
    v = differential_check(before, mod, "to_upper", trials=200)
    assert not v.equivalent
    assert any(ord("a") <= b <= ord("z") for b in v.args[0])


def test_count_ops_excludes_control_and_phis():
    fn = fixtures.load("paired_adds").function("paired_adds")
    assert count_ops(fn.instructions()) == 5
