"""Whole-module driver: repeat collect/align/meld/simplify per function until
nothing changes, recording one report row per region visited."""

from __future__ import annotations

import copy
import random
from dataclasses import dataclass, field, replace
from typing import Optional

from .alignment import AlignmentParams
from .ifconv import if_convert_region
from .interp import DEFAULT_FUEL, Program, default_input_generator
from .ir import Function, IRModule
from .melding import meld_region
from .regions import DEFAULT_MAX_BLOCK_SIZE, FilterSpec, collect_valid_branches, find_regions

SCHEMA_VERSION = 1


@dataclass
class PipelineOptions:
    params: AlignmentParams = field(default_factory=AlignmentParams)
    filters: FilterSpec = field(default_factory=FilterSpec)
    max_block_size: int = DEFAULT_MAX_BLOCK_SIZE
    peephole: bool = True


@dataclass
class FunctionResult:
    name: str
    rows: list = field(default_factory=list)
    transformations: int = 0
    filtered: bool = False

    def totals(self) -> dict:
        status = [r["status"] for r in self.rows]
        return {
            "regions": len(self.rows),
            "transformed": status.count("transformed"),
            "skipped": status.count("skipped"),
            "filtered": status.count("filtered"),
            "selects_added": sum(r["selects"]["applied"] for r in self.rows),
        }


def _scratch_module(module: IRModule) -> IRModule:
    return IRModule([], [copy.copy(g) for g in module.globals], module.safe_global)


def _row(region, status, meld_rep=None, base_rep=None, applied_selects=0, reason=None) -> dict:
    row = {
        "region": region.region_id,
        "line": region.branch_line,
        "kind": "triangle" if region.is_triangle else "diamond",
        "status": status,
        "reason": reason,
    }
    if meld_rep is not None:
        row["static_ops"] = {
            "original": meld_rep.ops_before,
            "melded": meld_rep.ops_after,
            "if_converted": base_rep.ops_after,
        }
        row["selects"] = {
            "melded": meld_rep.selects_added,
            "if_converted": base_rep.selects_added,
            "applied": applied_selects,
        }
        row["transformed"] = {"melded": meld_rep.transformed, "if_converted": base_rep.transformed}
        row["meld"] = meld_rep.to_dict()
        row["baseline"] = base_rep.to_dict()
    else:
        row["selects"] = {"applied": 0}
    return row


def transform_function(module: IRModule, fn: Function, opts: PipelineOptions, mode: str = "meld") -> FunctionResult:
    """Transform ``fn`` in place with melding (``mode='meld'``) or if-conversion."""
    if mode not in ("meld", "ifconv"):
        raise ValueError(mode)
    res = FunctionResult(fn.name)
    filters = opts.filters
    if not filters.accepts_function(fn):
        res.filtered = True
        res.rows = [_row(r, "filtered", reason="filtered") for r in find_regions(fn, opts.max_block_size)]
        return res
    for r in find_regions(fn, opts.max_block_size):
        if not filters.accepts_branch(fn, r.branch_line):
            res.rows.append(_row(r, "filtered", reason="filtered"))

    rejected = []  # branch instructions already turned down; identity, not equality
    while True:
        progress = False
        for region in collect_valid_branches(fn, filters, opts.max_block_size):
            key = fn.block(region.head_block).terminator
            if any(key is r for r in rejected):
                continue
            if mode == "meld":
                base = if_convert_region(copy.deepcopy(fn), region, opts.peephole)
                rep = meld_region(module, fn, region, opts.params, opts.peephole)
                done, why, applied = rep.transformed, rep.reason_if_skipped, rep.selects_added
            else:
                rep = meld_region(_scratch_module(module), copy.deepcopy(fn), region, opts.params, opts.peephole)
                base = if_convert_region(fn, region, opts.peephole)
                done, why, applied = base.transformed, base.reason_if_skipped or None, base.selects_added
            res.rows.append(_row(region, "transformed" if done else "skipped", rep, base, applied if done else 0, why))
            if done:
                res.transformations += 1
                progress = True
                break
            rejected.append(key)
        if not progress:
            return res


def transform_module(module: IRModule, opts: PipelineOptions, mode: str = "meld", default_file=None) -> list:
    filters = opts.filters
    if default_file is not None:
        filters = replace(filters, default_file=default_file)
    o = replace(opts, filters=filters)
    return [transform_function(module, fn, o, mode) for fn in module.functions]


def static_branch_count(fn: Function) -> int:
    return sum(1 for i in fn.instructions() if i.opcode == "br_cond")


def dynamic_totals(module: IRModule, function: str, trials: int, seed: int, fuel: int = DEFAULT_FUEL) -> dict:
    prog = Program(module, function)
    gen = default_input_generator(prog.fn)
    rng = random.Random(seed)
    out = {"cond_branches": 0, "total_instructions": 0, "selects": 0, "traps": 0}
    for _ in range(trials):
        t = prog.run(gen(rng), fuel)
        out["cond_branches"] += t.cond_branch_count
        out["total_instructions"] += t.total_dynamic_instructions
        out["selects"] += t.select_count
        out["traps"] += int(t.trapped)
    return out


def build_report(module_name: str, opts: PipelineOptions, results: list, before: IRModule, after: IRModule,
                 dynamic: Optional[dict] = None) -> dict:
    functions = []
    for res in results:
        entry = {
            "name": res.name,
            "filtered": res.filtered,
            "regions": res.rows,
            "totals": {
                **res.totals(),
                "cond_branches_before": static_branch_count(before.function(res.name)),
                "cond_branches_after": static_branch_count(after.function(res.name)),
            },
        }
        if dynamic and res.name in dynamic:
            entry["dynamic"] = dynamic[res.name]
        functions.append(entry)
    p = opts.params
    return {
        "schema_version": SCHEMA_VERSION,
        "module": module_name,
        "params": {
            "match_bonus": p.match_bonus,
            "gap_penalty": p.gap_penalty,
            "score_threshold": p.score_threshold,
            "threshold_one_sided": p.threshold_one_sided,
            "max_block_size": opts.max_block_size,
            "peephole": opts.peephole,
        },
        "functions": functions,
        "totals": {
            "transformations": sum(r.transformations for r in results),
            "regions": sum(len(r.rows) for r in results),
            "filtered_functions": sum(1 for r in results if r.filtered),
        },
    }
