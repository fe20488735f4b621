"""``ttnesy`` command line: build, sketch, infer, train, verify, ablate.

Exit codes: 0 ok, 2 bad configuration or over budget, 3 missing or unreadable
files, 4 a verification check failed.
"""
from __future__ import annotations

import argparse
import json
import statistics
import sys
from pathlib import Path

import numpy as np

from . import pipeline
from .data import task_and_data
from .inference import ConfigurationError, RBFConfig, forward
from .learn import (
    METRIC_FIELDS,
    ModelKind,
    PerceptualModel,
    TrainConfig,
    save_model,
    train,
    write_metrics_csv,
)
from .program import GraphError, OutputKind, ProgramGraph, builtin_task, graph_from_config
from .sketch import FULL, SketchConfig, parse_rank, predicted_parameter_count, reconstruction_error_bound
from .tensor_core import FormatError, ResourceError, frobenius_norm
from .verify import CheckResult, check_tt_error_bound

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_VERIFY = 0, 2, 3, 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def load_task(spec: str) -> ProgramGraph:
    """A builtin task name or a path to a JSON graph config."""
    path = Path(spec)
    if spec.endswith(".json") or path.is_file():
        try:
            cfg = json.loads(path.read_text())
        except OSError as exc:
            raise CliError(EXIT_IO, f"cannot read task config: {exc}") from None
        except json.JSONDecodeError as exc:
            raise CliError(EXIT_CONFIG, f"task config is not valid JSON: {exc}") from None
        return graph_from_config(cfg)
    return builtin_task(spec)


def _rank(value: str):
    try:
        return parse_rank(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


# -- build --------------------------------------------------------------------

def cmd_build(args) -> int:
    g = load_task(args.task)
    manifest = pipeline.write_summaries(g, args.out)
    for name, rec in manifest["summaries"].items():
        dims = "x".join(map(str, rec["dims"]))
        print(f"{name:<16} {dims:<24} entries={rec['entries']:>12,d}  {rec['storage']}")
    print(f"total entries {manifest['total_entries']:,d}")
    return EXIT_OK


# -- sketch -------------------------------------------------------------------

def cmd_sketch(args) -> int:
    g, dense, exact, _ = pipeline.read_summaries(args.summaries)
    cfg = SketchConfig(args.rank, args.seed)
    sketches, reports = {}, []
    for name in g.sub_programs:
        if name in dense:
            s = pipeline.sketch_subprogram(g.sub_programs[name], cfg, dense[name])
        else:
            s = exact[name] if cfg.is_full else pipeline.tt_round(exact[name], cfg)
        sketches[name] = s
        reports.append(pipeline.sketch_report(name, s, dense.get(name)))
    pipeline.write_sketches(g, sketches, args.out, {
        "rank": cfg.rank, "seed": cfg.seed,
        "summaries": str(Path(args.summaries).resolve())})
    report = [r.as_dict() for r in reports]
    Path(args.out, "report.json").write_text(json.dumps(report, indent=2))
    for r in reports:
        err = "n/a" if r.error is None else f"{r.error:.3e}"
        dev = "n/a" if r.max_deviation is None else f"{r.max_deviation:.3e}"
        print(f"{r.name:<16} ranks={list(r.ranks)} params={r.parameters:,d} "
              f"error={err} bound={r.bound:.3e} max_dev={dev}")
    return EXIT_OK


# -- infer --------------------------------------------------------------------

def _read_leaves(src: str, g: ProgramGraph) -> list:
    try:
        text = sys.stdin.read() if src == "-" else Path(src).read_text()
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read leaves: {exc}") from None
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"leaves are not valid JSON: {exc}") from None
    leaves = obj["leaves"] if isinstance(obj, dict) else obj
    out = []
    for i, leaf in enumerate(leaves):
        if isinstance(leaf, int):  # a bare symbol is a point mass
            p = np.zeros(g.leaf_domains[i])
            p[leaf] = 1.0
            out.append(p)
        else:
            out.append(np.asarray(leaf, dtype=np.float64))
    return out


def cmd_infer(args) -> int:
    g, sketches, _ = pipeline.read_sketches(args.sketches)
    leaves = _read_leaves(args.leaves, g)
    root, tape = forward(g, sketches, leaves, RBFConfig(args.sigma))
    result = {"task": g.name}
    if isinstance(root, float):
        result["root"] = root
    else:
        result["root"] = [float(x) for x in root]
        result["argmax"] = int(np.argmax(root))
    if g.readout == "digits":
        result["digits"] = [[float(x) for x in tape.records[i].output[0]] for i in g.readout_nodes]
    result["flagged_uniform"] = tape.flagged_uniform
    _emit(result)
    return EXIT_OK


# -- train --------------------------------------------------------------------

def _sketches_for_training(args, g: ProgramGraph):
    if args.sketches is None:
        return pipeline.sketch_graph(g, args.rank, args.seed)
    sg, sketches, _ = pipeline.read_sketches(args.sketches)
    if sg.to_config() != g.to_config():
        raise CliError(EXIT_CONFIG, f"sketches in {args.sketches} were built for a different task")
    return sketches


def _train_run(task: str, args, rank=None):
    g, gen, tr, te = task_and_data(task, args.n_train, args.n_test, seed=args.data_seed
                                   if args.data_seed is not None else args.seed)
    if rank is not None:
        sketches = pipeline.sketch_graph(g, rank, args.seed)
    else:
        sketches = _sketches_for_training(args, g)
    model = PerceptualModel.create(ModelKind(args.model), gen.dim, g.leaf_domains[0], seed=args.seed)
    cfg = TrainConfig(loss=args.loss, optimizer=args.optimizer, lr=args.lr, epochs=args.epochs,
                      batch_size=args.batch_size, seed=args.seed, rbf=RBFConfig(args.sigma))
    log = (lambda row: print(" ".join(f"{k}={row[k]:.4g}" if isinstance(row[k], float) else f"{k}={row[k]}"
                                      for k in METRIC_FIELDS), flush=True)) if not args.quiet else None
    trained, history = train(g, sketches, model, tr, cfg, te, log)
    return g, sketches, trained, history


def cmd_train(args) -> int:
    _, _, model, history = _train_run(args.task, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(out / "metrics.csv", history)
    save_model(out / "model.npz", model)
    return EXIT_OK


# -- verify -------------------------------------------------------------------

def _verify_checks(sketch_dir: Path, sigma: float, draws: int, seed: int) -> list:
    manifest = json.loads((sketch_dir / pipeline.SKETCH_MANIFEST).read_text())
    g = graph_from_config(manifest["task"])
    checks, sketches = [], {}
    for name in manifest["sketches"]:
        try:
            s = pipeline.load_sketch(sketch_dir / name)
        except FormatError as exc:
            checks.append(CheckResult(f"load:{name}", 1.0, 0.0, False, str(exc)))
            continue
        finite = all(np.isfinite(c).all() for c in s.cores)
        checks.append(CheckResult(f"finite:{name}", float(not finite), 0.0, finite))
        sketches[name] = s

    dense = {}
    src = manifest.get("summaries")
    if src and Path(src, pipeline.SUMMARY_MANIFEST).is_file():
        _, dense, _, _ = pipeline.read_summaries(src)
    for name, s in sketches.items():
        if name not in dense:
            continue
        phi = dense[name]
        if tuple(phi.shape) != s.source_dims:
            checks.append(CheckResult(f"shape:{name}", 1.0, 0.0, False,
                                      f"summary {phi.shape} vs sketch {s.source_dims}"))
            continue
        slack = 1e-8 * max(1.0, frobenius_norm(phi))
        r = check_tt_error_bound(phi, sketch=s, slack=slack)
        checks.append(CheckResult(f"tt_error_bound:{name}", r.measured, r.bound, r.passed, r.detail))

    # first-layer nodes read leaves directly: |<phi - T, p1 x .. x pk>| <= bound * prod |p_i|
    rng = np.random.default_rng(seed)
    for name, s in sketches.items():
        if name not in dense or not np.isfinite(reconstruction_error_bound(s)):
            continue
        sp = g.sub_programs[name]
        phi = dense[name]
        bound = reconstruction_error_bound(s)
        t = pipeline.reconstruct(s)
        worst, ok = 0.0, True
        for _ in range(draws):
            ps = [rng.dirichlet(np.ones(d)) for d in sp.input_domains]
            exact, approx = phi, t
            for p in ps:
                exact = np.tensordot(p, exact, axes=(0, 0))
                approx = np.tensordot(p, approx, axes=(0, 0))
            gap = float(np.linalg.norm(np.atleast_1d(exact - approx)))
            lim = bound * float(np.prod([np.linalg.norm(p) for p in ps]))
            worst = max(worst, gap - lim)
            ok &= gap <= lim + 1e-8 * max(1.0, frobenius_norm(phi))
        checks.append(CheckResult(f"contraction_bound:{name}", worst, 0.0, ok,
                                  "max(gap - bound) over draws"))

    if len(sketches) == len(manifest["sketches"]) and all(c.passed for c in checks):
        try:
            ps = [rng.dirichlet(np.ones(d)) for d in g.leaf_domains]
            root, tape = forward(g, sketches, ps, RBFConfig(sigma))
            vals = np.atleast_1d(root)
            ok = bool(np.isfinite(vals).all())
            if g.node_program(g.root).output_kind is OutputKind.ONEHOT or g.readout != "value":
                ok &= abs(float(np.sum(vals)) - 1.0) <= 1e-9
            checks.append(CheckResult("forward", float(not ok), 0.0, ok))
        except (ConfigurationError, ValueError) as exc:
            checks.append(CheckResult("forward", 1.0, 0.0, False, str(exc)))
    return checks


def cmd_verify(args) -> int:
    d = Path(args.sketches)
    if not (d / pipeline.SKETCH_MANIFEST).is_file():
        raise CliError(EXIT_IO, f"{d}: no {pipeline.SKETCH_MANIFEST}")
    checks = _verify_checks(d, args.sigma, args.draws, args.seed)
    for c in checks:
        print(c.line())
    failed = [c.name for c in checks if not c.passed]
    print(f"{len(checks) - len(failed)}/{len(checks)} checks passed")
    return EXIT_VERIFY if failed else EXIT_OK


# -- ablations ----------------------------------------------------------------

def ablate_rank(args) -> dict:
    rows = []
    for rank in args.ranks:
        accs, epoch_times = [], []
        for seed in args.seeds:
            sub = argparse.Namespace(**{**vars(args), "seed": seed})
            g, sketches, _, history = _train_run(args.task, sub, rank=rank)
            if history:
                accs.append(history[-1]["task_acc"])
                epoch_times.append(history[-1]["wall_seconds"] / len(history))
        rows.append({
            "rank": rank,
            "parameters": sum(s.parameter_count for s in sketches.values()),
            "task_acc": statistics.median(accs) if accs else None,
            "seconds_per_epoch": statistics.median(epoch_times) if epoch_times else None,
        })
    out = {"task": args.task, "rows": rows}
    if args.param_length:
        dims = (14,) * args.param_length
        out["predicted_parameters"] = {
            f"hwf_{args.param_length}": {str(r): predicted_parameter_count(dims, r) for r in args.ranks}}
    return out


def ablate_decomposition(args) -> dict:
    from .program import builtin_sum_decomposed

    rows = []
    for split in args.splits:
        parts = [int(x) for x in split.split("x")]
        g = builtin_sum_decomposed(parts, onehot=args.onehot or args.onehot_root,
                                   onehot_root=args.onehot_root)
        entries = sum(sp.summary_entries for sp in g.sub_programs.values())
        row = {"split": split, "entries": entries, "status": "ok"}
        try:
            for sp in g.sub_programs.values():
                pipeline.check_budget(sp.summary_entries, sp.name)
            if args.rank is not None:
                sk = pipeline.sketch_graph(g, args.rank, args.seed)
                row["parameters"] = sum(s.parameter_count for s in sk.values())
        except ResourceError as exc:
            row["status"] = f"over budget: {exc}"
        rows.append(row)
    return {"onehot": args.onehot, "onehot_root": args.onehot_root, "rows": rows}


def cmd_ablate(args) -> int:
    result = ablate_rank(args) if args.kind == "rank" else ablate_decomposition(args)
    _emit(result)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"ablate_{args.kind}.json").write_text(json.dumps(result, indent=2))
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def _add_train_flags(p) -> None:
    p.add_argument("--task", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--loss", choices=["l1", "ce"], default="l1")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default="adam")
    p.add_argument("--model", choices=[m.value for m in ModelKind], default="linear")
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=500)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ttnesy", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="enumerate summary tensors")
    p.add_argument("--task", required=True, help="builtin task name or JSON graph config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("sketch", help="TT-sketch built summaries")
    p.add_argument("--summaries", required=True)
    p.add_argument("--rank", type=_rank, default=FULL)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sketch)

    p = sub.add_parser("infer", help="forward pass on JSON leaf distributions")
    p.add_argument("--sketches", required=True)
    p.add_argument("--leaves", default="-", help="JSON file ('-' for stdin)")
    p.add_argument("--sigma", type=float, default=0.5)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("train", help="weakly supervised training on synthetic data")
    _add_train_flags(p)
    p.add_argument("--sketches", default=None)
    p.add_argument("--rank", type=_rank, default=None, help="used when --sketches is absent")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("verify", help="bound checks on a sketch directory")
    p.add_argument("--sketches", required=True)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--draws", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("ablate", help="rank or decomposition ablation")
    abl = p.add_subparsers(dest="kind", required=True)
    r = abl.add_parser("rank")
    _add_train_flags(r)
    r.add_argument("--ranks", type=_rank, nargs="+", default=[2, 4, 8, FULL])
    r.add_argument("--seeds", type=int, nargs="+", default=[0])
    r.add_argument("--param-length", type=int, default=7,
                   help="also report predicted sketch sizes for this HWF length (0 to skip)")
    r.add_argument("--out", default=None)
    d = abl.add_parser("decomposition")
    d.add_argument("--splits", nargs="+", default=["16", "4x4", "2x2x2x2"])
    d.add_argument("--onehot", action="store_true", help="one-hot internal layers")
    d.add_argument("--onehot-root", action="store_true", help="one-hot root as well")
    d.add_argument("--rank", type=_rank, default=None)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--out", default=None)
    p.set_defaults(func=cmd_ablate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (GraphError, ResourceError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
