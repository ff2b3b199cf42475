import io
import json

import pytest

import irmeld.cli as cli_mod
from irmeld import fixtures
from irmeld.cli import EXIT_COUNTEREXAMPLE, EXIT_INPUT, EXIT_OK, RunConfig, main, run_pipeline
from irmeld.regions import find_regions
from irmeld.text import format_function, parse_module, print_module


@pytest.fixture
def corpus(tmp_path):
    for name in fixtures.NAMES:
        (tmp_path / f"{name}.mir").write_text(fixtures.text(name))
    return tmp_path


def test_meld_to_upper_with_report(corpus):
    out, rep = corpus / "out.mir", corpus / "r.json"
    assert main(["meld", str(corpus / "to_upper.mir"), "-o", str(out), "--report", str(rep)]) == EXIT_OK
    fn = parse_module(out.read_text()).function("to_upper")
    assert sum(1 for i in fn.instructions() if i.opcode == "br_cond") == 1
    report = json.loads(rep.read_text())
    assert report["schema_version"] == 1
    assert report["totals"]["transformations"] == 1
    (row,) = report["functions"][0]["regions"]
    assert row["status"] == "transformed"
    assert row["baseline"]["reason_if_skipped"] == "unsafe memory operation"
    assert row["static_ops"]["original"] == 4


def test_output_to_stdout(corpus, capsys):
    assert main(["meld", str(corpus / "paired_adds.mir")]) == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("; irmeld module")
    assert "select" in text


def test_exclude_func_names_marks_filtered(corpus):
    out, rep = corpus / "out.mir", corpus / "r.json"
    src = corpus / "arith.mir"
    assert main(["meld", str(src), "-o", str(out), "--report", str(rep),
                 "-exclude-func-names=clamp,abs_diff"]) == EXIT_OK
    text = out.read_text()
    orig = fixtures.load("arith")
    for name in ("clamp", "abs_diff"):
        assert format_function(orig.function(name)) in text
    report = json.loads(rep.read_text())
    by_name = {f["name"]: f for f in report["functions"]}
    assert by_name["clamp"]["filtered"] is True
    assert all(r["status"] == "filtered" for r in by_name["clamp"]["regions"])
    assert by_name["shift_pick"]["totals"]["transformed"] == 1


def test_include_func_names(corpus):
    out = corpus / "out.mir"
    assert main(["meld", str(corpus / "arith.mir"), "-o", str(out), "--include-func-names", "clamp"]) == EXIT_OK
    after = parse_module(out.read_text())
    orig = fixtures.load("arith")
    for fn in orig.functions:
        assert (after.function(fn.name) == fn) == (fn.name != "clamp")


def test_exclude_file_names(corpus):
    out = corpus / "out.mir"
    assert main(["meld", str(corpus / "paired_adds.mir"), "-o", str(out), "--exclude-file-names", "paired_adds.c"]) == EXIT_OK
    assert parse_module(out.read_text()) == fixtures.load("paired_adds")


def test_json_include_lines(corpus):
    mod = fixtures.load("arrays")
    lines = {fn.name: find_regions(fn)[0].branch_line for fn in mod.functions if find_regions(fn)}
    keep = lines["count_key"]
    profile = corpus / "profile.json"
    profile.write_text(json.dumps({"arrays.c": [keep]}))
    out, rep = corpus / "out.mir", corpus / "r.json"
    assert main(["meld", str(corpus / "arrays.mir"), "-o", str(out), "--report", str(rep),
                 "--json-include-lines", str(profile)]) == EXIT_OK
    report = json.loads(rep.read_text())
    transformed = [(f["name"], r["line"]) for f in report["functions"] for r in f["regions"]
                   if r["status"] == "transformed"]
    assert transformed == [("count_key", keep)]


def test_fixpoint_on_own_output(corpus):
    for name in fixtures.NAMES:
        once, twice, rep = corpus / "a.mir", corpus / "b.mir", corpus / "r.json"
        assert main(["both", str(corpus / f"{name}.mir"), "-o", str(once)]) == EXIT_OK
        assert main(["meld", str(once), "-o", str(twice), "--report", str(rep)]) == EXIT_OK
        assert json.loads(rep.read_text())["totals"]["transformations"] == 0
        assert twice.read_text() == once.read_text()


def test_ifconv_mode(corpus):
    out, rep = corpus / "out.mir", corpus / "r.json"
    assert main(["ifconv", str(corpus / "to_upper.mir"), "-o", str(out), "--report", str(rep)]) == EXIT_OK
    assert parse_module(out.read_text()) == fixtures.load("to_upper")
    (row,) = json.loads(rep.read_text())["functions"][0]["regions"]
    assert row["status"] == "skipped" and row["reason"] == "unsafe memory operation"


def test_both_mode_reports_dynamic_counts(corpus):
    rep = corpus / "r.json"
    assert main(["both", str(corpus / "paired_adds.mir"), "-o", str(corpus / "o.mir"), "--report", str(rep),
                 "--trials", "20"]) == EXIT_OK
    dyn = json.loads(rep.read_text())["functions"][0]["dynamic"]
    assert dyn["original"]["cond_branches"] == 20
    assert dyn["melded"]["cond_branches"] == 0
    assert dyn["if_converted"]["cond_branches"] == 0


def test_mode_flag_spelling(corpus, capsys):
    assert main(["--mode", "check", str(corpus / "paired_adds.mir"), "--trials", "10"]) == EXIT_OK
    assert main([str(corpus / "paired_adds.mir"), "--mode=meld"]) == EXIT_OK


def test_check_mode_passes_on_corpus(corpus):
    rep = corpus / "r.json"
    paths = [str(corpus / f"{n}.mir") for n in fixtures.NAMES]
    assert main(["check", *paths, "-o", str(corpus / "out"), "--report", str(rep), "--trials", "100"]) == EXIT_OK
    reports = json.loads(rep.read_text())["reports"]
    assert len(reports) == len(paths)
    assert all(c["equivalent"] for r in reports for c in r["check"])
    assert (corpus / "out" / "to_upper.mir").exists()


def test_counterexample_exit_code(corpus, monkeypatch, capsys):
    real = cli_mod.transform_module

    def corrupting(module, opts, mode="meld", default_file=None):
        res = real(module, opts, mode, default_file)
        for fn in module.functions:
            for inst in fn.instructions():
                if inst.opcode == "select":
                    inst.operands[1], inst.operands[2] = inst.operands[2], inst.operands[1]
        return res

    monkeypatch.setattr(cli_mod, "transform_module", corrupting)
    status = main(["check", str(corpus / "to_upper.mir"), "-o", str(corpus / "o.mir"), "--trials", "100"])
    assert status == EXIT_COUNTEREXAMPLE
    assert "counterexample" in capsys.readouterr().err


def test_bad_input_exit_codes(corpus, capsys):
    bad = corpus / "bad.mir"
    bad.write_text("func @f( -> void {}\n")
    assert main(["meld", str(bad)]) == EXIT_INPUT
    assert "bad.mir:" in capsys.readouterr().err
    assert main(["meld", str(corpus / "missing.mir")]) == EXIT_INPUT
    assert main(["meld", str(corpus / "paired_adds.mir"), "--include-func-names", "a",
                 "--exclude-func-names", "a"]) == EXIT_INPUT
    with pytest.raises(ValueError):
        RunConfig(inputs=[], mode="check", trials=0)


def test_run_subcommand(corpus, capsys):
    assert main(["run", str(corpus / "to_upper.mir"), "to_upper", "s:aZ3b", "4"]) == EXIT_OK
    out = json.loads(capsys.readouterr().out)
    assert out["outcome"] == "ok"
    assert bytes.fromhex(out["final_memory"]["arg:str"]) == b"AZ3B"
    assert out["cond_branch_count"] == 9


def test_run_pipeline_api(corpus):
    buf = io.StringIO()
    status = run_pipeline(RunConfig(inputs=[str(corpus / "nested.mir")]), stdout=buf)
    assert status == EXIT_OK
    mod = parse_module(buf.getvalue())
    assert print_module(mod) == buf.getvalue()
    # inner diamond first, then the outer one once it becomes straight-line
    assert all(i.opcode != "br_cond" for i in mod.function("nested").instructions())


def test_default_file_is_input_name(corpus):
    text = fixtures.text("paired_adds").replace(' source "paired_adds.c"', "")
    (corpus / "nosrc.mir").write_text(text)
    out = corpus / "out.mir"
    assert main(["meld", str(corpus / "nosrc.mir"), "-o", str(out), "--exclude-file-names", "nosrc.mir"]) == 0
    assert out.read_text() == print_module(parse_module(text))
