import random

from conftest import region_at

from irmeld import fixtures
from irmeld.interp import default_input_generator
from irmeld.metrics import compare_region


def _inputs(fn, n=50):
    rng = random.Random(0)
    gen = default_input_generator(fn)
    return [gen(rng) for _ in range(n)]


def test_paired_adds_static_saving():
    mod = fixtures.load("paired_adds")
    fn = mod.function("paired_adds")
    cmp = compare_region(mod, "paired_adds", region_at(fn, "entry"), _inputs(fn))
    assert cmp.static_ops == {"original": 4, "melded": 4, "if_converted": 6}
    assert cmp.selects == {"melded": 2, "if_converted": 2}
    assert 3 * cmp.static_ops["melded"] <= 2 * cmp.static_ops["if_converted"]
    assert set(cmp.dynamic) == {"original", "melded", "if_converted"}
    assert cmp.dynamic["melded"]["cond_branches"] == 0
    assert cmp.dynamic["original"]["cond_branches"] == 50


def test_to_upper_meld_only():
    mod = fixtures.load("to_upper")
    fn = mod.function("to_upper")
    cmp = compare_region(mod, "to_upper", region_at(fn, "body"), _inputs(fn))
    assert cmp.transformed == {"melded": True, "if_converted": False}
    assert cmp.reasons["if_converted"] == "unsafe memory operation"
    assert cmp.dynamic["melded"]["cond_branches"] < cmp.dynamic["original"]["cond_branches"]
    assert "if_converted" not in cmp.dynamic
    # the input module is left alone
    assert mod == fixtures.load("to_upper")


def test_region_skipped_by_both():
    mod = fixtures.load("score_gate")
    fn = mod.function("score_gate")
    cmp = compare_region(mod, "score_gate", region_at(fn, "entry"), _inputs(fn, 5))
    assert cmp.transformed == {"melded": False, "if_converted": False}
    assert list(cmp.dynamic) == ["original"]
    d = cmp.to_dict()
    assert d["region"] == "entry" and d["function"] == "score_gate"
    assert all(v >= 0 for v in d["static_ops"].values())
