"""Summaries and sketches for every sub-program of a graph, in memory and on disk."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .program import ProgramGraph, SubProgram, build_summary, graph_from_config
from .sketch import (
    FULL,
    SketchConfig,
    TTSketch,
    load_sketch,
    parse_rank,
    reconstruct,
    reconstruction_error_bound,
    save_sketch,
    tt_round,
    tt_svd,
)
from .tensor_core import ResourceError, check_budget, frobenius_norm, read_cts1, write_cts1

SUMMARY_MANIFEST = "summaries.json"
SKETCH_MANIFEST = "sketches.json"


def exact_sketch(sp: SubProgram) -> TTSketch:
    return TTSketch(tuple(sp.exact_tt()), (), sp.summary_dims)


def sketch_subprogram(sp: SubProgram, cfg: SketchConfig, phi: np.ndarray | None = None) -> TTSketch:
    """TT-SVD of the dense summary, or TT rounding of exact cores when the summary is too big."""
    if phi is None:
        try:
            phi = build_summary(sp)
        except ResourceError:
            if sp.exact_tt is None:
                raise
            s = exact_sketch(sp)
            return s if cfg.is_full else tt_round(s, cfg)
    return tt_svd(phi, cfg)


def rank_for(name: str, rank, ranks: Mapping | None = None):
    if rank is not None:
        return rank
    if ranks and name in ranks:
        return parse_rank(ranks[name])
    return FULL


def sketch_graph(g: ProgramGraph, rank=None, seed: int = 0, ranks: Mapping | None = None) -> dict:
    """One sketch per distinct sub-program (nodes of a layer share theirs)."""
    return {name: sketch_subprogram(sp, SketchConfig(rank_for(name, rank, ranks), seed))
            for name, sp in g.sub_programs.items()}


@dataclass
class SketchReport:
    name: str
    dims: tuple
    ranks: tuple
    parameters: int
    bound: float
    error: float | None
    max_deviation: float | None

    def as_dict(self) -> dict:
        return {"name": self.name, "dims": list(self.dims), "ranks": list(self.ranks),
                "parameters": self.parameters, "error_bound": self.bound,
                "frobenius_error": self.error, "max_abs_deviation": self.max_deviation}


def sketch_report(name: str, s: TTSketch, phi: np.ndarray | None) -> SketchReport:
    err = dev = None
    if phi is not None:
        try:
            diff = phi - reconstruct(s)
            err = frobenius_norm(diff)
            dev = float(np.max(np.abs(diff)))
        except ResourceError:
            pass
    return SketchReport(name, s.source_dims, s.ranks, s.parameter_count,
                        reconstruction_error_bound(s), err, dev)


# -- on-disk layout ----------------------------------------------------------
#   summaries/<name>.cts1 (dense) or summaries/<name>/ (exact cores), summaries.json
#   sketches/<name>/sketch.json + core_*.cts1, sketches.json

def write_summaries(g: ProgramGraph, out_dir) -> dict:
    """Enumerate every summary and write it; raises ``ResourceError`` before writing anything
    if one of them is over budget."""
    out = Path(out_dir)
    plan = {}
    for name, sp in g.sub_programs.items():
        try:
            check_budget(sp.summary_entries, f"summary {name} {sp.summary_dims}")
            plan[name] = "dense"
        except ResourceError as exc:
            if sp.exact_tt is None:
                raise ResourceError(f"{exc}; decompose the program or use SAMPLE mode") from None
            plan[name] = "tt"
    out.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, sp in g.sub_programs.items():
        record = {"dims": list(sp.summary_dims), "entries": sp.summary_entries,
                  "output_kind": sp.output_kind.value, "storage": plan[name]}
        if plan[name] == "dense":
            write_cts1(out / f"{name}.cts1", build_summary(sp))
            record["file"] = f"{name}.cts1"
        else:
            save_sketch(exact_sketch(sp), out / name)
            record["file"] = name
        entries[name] = record
    manifest = {"task": g.to_config(), "summaries": entries,
                "total_entries": int(sum(e["entries"] for e in entries.values()))}
    (out / SUMMARY_MANIFEST).write_text(json.dumps(manifest, indent=2))
    return manifest


def read_summaries(summary_dir):
    d = Path(summary_dir)
    manifest = json.loads((d / SUMMARY_MANIFEST).read_text())
    g = graph_from_config(manifest["task"])
    dense, exact = {}, {}
    for name, rec in manifest["summaries"].items():
        if rec["storage"] == "dense":
            dense[name] = read_cts1(d / rec["file"])
        else:
            exact[name] = load_sketch(d / rec["file"])
    return g, dense, exact, manifest


def write_sketches(g: ProgramGraph, sketches: Mapping, out_dir, config: dict | None = None) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, s in sketches.items():
        save_sketch(s, out / name)
    manifest = {"task": g.to_config(), "sketches": sorted(sketches), **(config or {})}
    (out / SKETCH_MANIFEST).write_text(json.dumps(manifest, indent=2))


def read_sketches(sketch_dir):
    d = Path(sketch_dir)
    manifest = json.loads((d / SKETCH_MANIFEST).read_text())
    g = graph_from_config(manifest["task"])
    return g, {name: load_sketch(d / name) for name in manifest["sketches"]}, manifest
