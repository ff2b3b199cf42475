"""Command-line driver.

Exit status: 0 success, 2 unreadable/invalid input or bad usage,
3 the differential check found a counterexample.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Optional

from .alignment import AlignmentParams
from .interp import DEFAULT_FUEL, differential_check, interpret
from .ir import validate_module
from .pipeline import PipelineOptions, build_report, dynamic_totals, transform_module
from .regions import DEFAULT_MAX_BLOCK_SIZE, FilterSpec, load_line_filter
from .text import ParseError, parse_module, print_module

log = logging.getLogger("irmeld")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_COUNTEREXAMPLE = 3

MODES = ("meld", "ifconv", "both", "check")


@dataclass
class RunConfig:
    inputs: list
    output: Optional[str] = None
    filters: FilterSpec = field(default_factory=FilterSpec)
    params: AlignmentParams = field(default_factory=AlignmentParams)
    mode: str = "meld"
    trials: int = 100
    seed: int = 0
    max_block_size: int = DEFAULT_MAX_BLOCK_SIZE
    peephole: bool = True
    report: Optional[str] = None
    fuel: int = DEFAULT_FUEL

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "check" and self.trials <= 0:
            raise ValueError("check mode needs --trials > 0")


def _split_names(text: Optional[str]):
    if text is None:
        return None
    return {n.strip() for n in text.split(",") if n.strip()}


def _output_path(cfg: RunConfig, src: str) -> Optional[str]:
    if cfg.output is None:
        return None
    if len(cfg.inputs) == 1 and not os.path.isdir(cfg.output):
        return cfg.output
    os.makedirs(cfg.output, exist_ok=True)
    return os.path.join(cfg.output, os.path.basename(src))


def run_pipeline(cfg: RunConfig, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    opts = PipelineOptions(cfg.params, cfg.filters, cfg.max_block_size, cfg.peephole)
    reports = []
    status = EXIT_OK
    for src in cfg.inputs:
        try:
            with open(src, encoding="utf-8") as fh:
                original = parse_module(fh.read())
        except OSError as exc:
            print(f"{src}: {exc}", file=stderr)
            return EXIT_INPUT
        except ParseError as exc:
            print(f"{src}:{exc}", file=stderr)
            return EXIT_INPUT

        module = copy.deepcopy(original)
        mode = "ifconv" if cfg.mode == "ifconv" else "meld"
        results = transform_module(module, opts, mode, default_file=os.path.basename(src))
        problems = validate_module(module)
        if problems:
            raise RuntimeError(f"transformed module is invalid: {problems}")

        dynamic = None
        if cfg.mode in ("both", "check"):
            baseline = copy.deepcopy(original)
            transform_module(baseline, opts, "ifconv", default_file=os.path.basename(src))
            dynamic = {}
            for fn in original.functions:
                dynamic[fn.name] = {
                    "original": dynamic_totals(original, fn.name, cfg.trials, cfg.seed, cfg.fuel),
                    "melded": dynamic_totals(module, fn.name, cfg.trials, cfg.seed, cfg.fuel),
                    "if_converted": dynamic_totals(baseline, fn.name, cfg.trials, cfg.seed, cfg.fuel),
                }

        report = build_report(src, opts, results, original, module, dynamic)

        if cfg.mode == "check":
            checks = []
            for res in results:
                if not res.transformations:
                    continue
                verdict = differential_check(original, module, res.name, None, cfg.trials, cfg.seed, cfg.fuel)
                checks.append({"function": res.name, "equivalent": verdict.equivalent, "trials": verdict.trials})
                if not verdict.equivalent:
                    checks[-1]["counterexample"] = {
                        "args": [a.hex() if isinstance(a, (bytes, bytearray)) else a for a in verdict.args],
                        "divergence": verdict.divergence,
                    }
                    print(
                        f"{src}: @{res.name} counterexample args={verdict.args!r}: {verdict.divergence}",
                        file=stderr,
                    )
                    status = EXIT_COUNTEREXAMPLE
            report["check"] = checks
        reports.append(report)

        text = print_module(module)
        out = _output_path(cfg, src)
        if out is None:
            stdout.write(text)
        else:
            with open(out, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(text)
        log.info("%s: %d transformation(s)", src, report["totals"]["transformations"])

    if cfg.report is not None:
        payload = reports[0] if len(reports) == 1 else {"schema_version": 1, "reports": reports}
        with open(cfg.report, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")
    return status


def _add_pipeline_args(p: argparse.ArgumentParser):
    p.add_argument("inputs", nargs="+", help=".mir files")
    p.add_argument("-o", "--output", help="output file (one input) or directory")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--include-func-names", "-include-func-names", dest="include_funcs",
                   help="comma-separated functions to transform (all others untouched)")
    p.add_argument("--exclude-func-names", "-exclude-func-names", dest="exclude_funcs",
                   help="comma-separated functions to leave untouched")
    p.add_argument("--exclude-file-names", "-exclude-file-names", dest="exclude_files",
                   help="comma-separated source files to leave untouched")
    p.add_argument("--json-include-lines", "-json-include-lines", dest="include_lines",
                   help="JSON object mapping file names to arrays of branch line numbers")
    p.add_argument("--match-bonus", type=float, default=1.0)
    p.add_argument("--gap-penalty", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=0.2)
    p.add_argument("--threshold-one-sided", action="store_true",
                   help="apply the score threshold to if-then regions too")
    p.add_argument("--max-block-size", type=int, default=DEFAULT_MAX_BLOCK_SIZE)
    p.add_argument("--peephole", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--trials", type=int, default=100, help="random inputs per function (both/check)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fuel", type=int, default=DEFAULT_FUEL)


def _parse_arg(text: str, ty):
    if text.startswith("s:"):
        return text[2:].encode("utf-8")
    if text.startswith("x:"):
        return bytes.fromhex(text[2:])
    return int(text, 0)


def _cmd_run(ns) -> int:
    try:
        with open(ns.input, encoding="utf-8") as fh:
            module = parse_module(fh.read())
        fn = module.function(ns.function)
    except (OSError, ParseError, KeyError) as exc:
        print(f"{ns.input}: {exc}", file=sys.stderr)
        return EXIT_INPUT
    args = [_parse_arg(a, ty) for a, (_, ty) in zip(ns.args, fn.params)]
    trace = interpret(module, ns.function, args, ns.fuel)
    out = {
        "outcome": trace.outcome,
        "return_value": trace.return_value,
        "final_memory": {k: v.hex() for k, v in trace.final_memory.items()},
        "dyn_counts": trace.dyn_counts,
        "cond_branch_count": trace.cond_branch_count,
        "select_count": trace.select_count,
        "total_dynamic_instructions": trace.total_dynamic_instructions,
    }
    json.dump(out, sys.stdout, indent=2)
    sys.stdout.write("\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="irmeld", description="Eliminate branches by melding both paths.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode, help_ in (
        ("meld", "meld branch regions"),
        ("ifconv", "apply the full-speculation if-conversion baseline"),
        ("both", "meld, and report baseline and dynamic comparisons"),
        ("check", "meld, then differentially test against the original"),
    ):
        _add_pipeline_args(sub.add_parser(mode, help=help_))
    run = sub.add_parser("run", help="interpret one function and print its trace")
    run.add_argument("input")
    run.add_argument("function")
    run.add_argument("args", nargs="*", help="integers, s:<text> or x:<hex> buffers")
    run.add_argument("--fuel", type=int, default=DEFAULT_FUEL)
    return parser


def config_from_args(ns) -> RunConfig:
    include_lines = load_line_filter(ns.include_lines) if ns.include_lines else None
    filters = FilterSpec(
        include_funcs=_split_names(ns.include_funcs),
        exclude_funcs=_split_names(ns.exclude_funcs) or set(),
        exclude_files=_split_names(ns.exclude_files) or set(),
        include_lines=include_lines,
    )
    params = AlignmentParams(ns.match_bonus, ns.gap_penalty, ns.score_threshold, ns.threshold_one_sided)
    return RunConfig(
        inputs=ns.inputs, output=ns.output, filters=filters, params=params, mode=ns.mode, trials=ns.trials,
        seed=ns.seed, max_block_size=ns.max_block_size, peephole=ns.peephole, report=ns.report, fuel=ns.fuel,
    )


def _hoist_mode_flag(argv: list) -> list:
    """Accept ``--mode X`` anywhere as an alternative spelling of the subcommand."""
    if argv and argv[0] in MODES + ("run",):
        return argv
    out, mode = [], None
    it = iter(argv)
    for a in it:
        if a == "--mode":
            mode = next(it, None)
        elif a.startswith("--mode="):
            mode = a.split("=", 1)[1]
        else:
            out.append(a)
    if mode is None:
        return argv
    flags = [a for a in out if a in ("-v", "--verbose")]
    return flags + [mode] + [a for a in out if a not in ("-v", "--verbose")]


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    ns = parser.parse_args(_hoist_mode_flag(argv))
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    if ns.mode == "run":
        return _cmd_run(ns)
    try:
        cfg = config_from_args(ns)
    except (OSError, ValueError) as exc:
        print(f"irmeld: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return run_pipeline(cfg)


if __name__ == "__main__":
    sys.exit(main())
