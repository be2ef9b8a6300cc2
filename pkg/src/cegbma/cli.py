"""Command line entry point: ``cegbma {fit,average,enumerate,simulate,export,rerun}``.

Exit codes: 0 success, 2 unreadable or invalid input, 3 hyperstage validation
failure, 4 combined model count above ``--max-combined-models``.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .ensemble import DEFAULT_MAX_MODELS, CombineLimitError, HypersetEnsemble, well_performing
from .event_tree import (
    Hyperstage,
    HyperstageError,
    TreeError,
    load_tree_spec,
    read_tree_spec,
    write_csv_records,
)
from .oracle import ENUMERATION_CAP, GeneratingModel, enumerate_stagings, simulate
from .scoring import PRIOR_RULES
from .search import RunConfig
from .workflow import (
    SCHEMA_VERSION,
    ValidationError,
    average_report,
    dot_artifacts,
    fit_map,
    load_problem,
    manifest,
    tree_from_json,
    tree_json,
)

logger = logging.getLogger("cegbma")

EXIT_OK, EXIT_INPUT, EXIT_VALIDATION, EXIT_COMBINE = 0, 2, 3, 4
THREADS_ENV = "CEG_ENSEMBLE_THREADS"


def _workers() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, allow_nan=False) + "\n"


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _add_inputs(p: argparse.ArgumentParser, alpha_required: bool = True):
    p.add_argument("--data", help="CSV of paths, one observation per row")
    p.add_argument("--header", action="store_true", help="the CSV has a header row")
    p.add_argument("--tree-spec", help="JSON tree structure (and optional counts)")
    p.add_argument("--hyperstage", help="JSON hyperstage; defaults to grouping by edge labels")
    p.add_argument("--alpha-bar", type=float, required=alpha_required,
                   help="effective sample size of the root prior (4 is a common choice)")
    p.add_argument("--prior-rule", choices=PRIOR_RULES, default="propagate")
    p.add_argument("--epsilon", type=float, default=0.0, help="minimum log Bayes factor for a merge")


def _add_output(p: argparse.ArgumentParser, default_id: str, summary: bool = True):
    p.add_argument("--out-dir", default=".", help="directory for reports and DOT files")
    p.add_argument("--run-id", default=default_id, help="prefix of every output file name")
    if summary:
        p.add_argument("--summary", action="store_true", help="also write a plain-text summary")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cegbma", description="Bayesian model averaging over chain event graph stagings."
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="greedy HAC MAP staging")
    _add_inputs(p)
    _add_output(p, "fit")

    p = sub.add_parser("average", help="w-HAC sampling, Occam's window and model averaging")
    _add_inputs(p)
    _add_output(p, "average")
    p.add_argument("--beta", type=float, default=20.0, help="Occam's window ratio (default 20)")
    p.add_argument("--k", type=int, default=100, help="runs per hyperset member (default 100)")
    p.add_argument("--seed", type=int, default=0, help="base seed; run i uses seed + i")
    p.add_argument("--max-combined-models", type=int, default=DEFAULT_MAX_MODELS)
    p.add_argument("--global-window", action="store_true",
                   help="apply window and razor again to the recombined models")

    p = sub.add_parser("enumerate", help="score every staging of one hyperset")
    _add_inputs(p)
    p.add_argument("--hyperset", type=int, default=None, help="hyperset index (default: largest enumerable)")
    p.add_argument("--beta", type=float, default=20.0)
    p.add_argument("--cap", type=int, default=ENUMERATION_CAP)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("simulate", help="sample paths from a generating staged tree")
    p.add_argument("--generator", required=True, help="JSON tree spec with 'stages' and 'probs'")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="CSV output path (default stdout)")

    p = sub.add_parser("export", help="write DOT files from a fit or average report")
    p.add_argument("report")
    _add_output(p, "", summary=False)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None, help="override the recorded output directory")
    return parser


def _write_dots(out_dir: Path, run_id: str, dots: dict) -> list[str]:
    written = []
    for name, text in dots.items():
        path = out_dir / f"{run_id}.{name}.dot"
        path.write_text(text, encoding="utf-8")
        written.append(str(path))
    return written


def _problem(args):
    return load_problem(
        args.alpha_bar, data=args.data, tree_spec=args.tree_spec, hyperstage=args.hyperstage,
        header=args.header, prior_rule=args.prior_rule,
    )


def _manifest(args, command: str, **params) -> dict:
    return manifest(
        command, data=args.data, tree_spec=args.tree_spec, hyperstage=args.hyperstage,
        header=args.header, alpha_bar=args.alpha_bar, prior_rule=args.prior_rule,
        run_id=args.run_id, epsilon=args.epsilon, summary=args.summary, **params,
    )


def summary_text(report: dict) -> str:
    fit = report["map"]
    lines = [f"{report['kind']} report, tool version {report['manifest']['tool_version']}",
             f"MAP log marginal likelihood: {fit['log_score']:.4f}"]
    for hs in fit["hypersets"]:
        stages = " ".join("{" + ", ".join(b) + "}" for b in hs["staging"])
        lines.append(f"  hyperset {hs['index']}: {stages}")
    average = report.get("average")
    if average is not None:
        lines.append(f"averaged models: {average['model_count']}")
        for hs in average["hypersets"]:
            lines.append(
                f"  hyperset {hs['index']}: {hs['unique_stagings']} sampled, "
                f"{len(hs['well_performing'])} well-performing"
            )
            for e in hs["well_performing"]:
                stages = " ".join("{" + ", ".join(b) + "}" for b in e["stages"])
                lines.append(f"    {e['weight']:.4f}  {stages}")
    return "\n".join(lines) + "\n"


def _finish(args, man: dict, report: dict, dots: dict, started: str) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / f"{args.run_id}.report.json").write_text(_dump(report), encoding="utf-8")
    if args.summary:
        (out_dir / f"{args.run_id}.summary.txt").write_text(summary_text(report), encoding="utf-8")
    _write_dots(out_dir, args.run_id, dots)
    # out_dir and timestamps live only in the manifest file, so reruns reproduce the report
    stamped = dict(man, out_dir=str(out_dir), timestamps={"started": started, "finished": _now()})
    (out_dir / f"{args.run_id}.manifest.json").write_text(_dump(stamped), encoding="utf-8")
    print(out_dir / f"{args.run_id}.report.json")
    return EXIT_OK


def cmd_fit(args) -> int:
    started = _now()
    problem = _problem(args)
    man = _manifest(args, "fit")
    fit = fit_map(problem, args.epsilon)
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "fit",
        "manifest": man,
        "tree": tree_json(problem.tree),
        "hyperstage": problem.hyperstage.to_json(),
        "map": fit,
    }
    return _finish(args, man, report, dot_artifacts(problem.tree, problem.hyperstage, fit), started)


def cmd_average(args) -> int:
    started = _now()
    problem = _problem(args)
    config = RunConfig(seed=args.seed, k=args.k, epsilon=args.epsilon)
    man = _manifest(
        args, "average", beta=args.beta, k=args.k, seed=args.seed,
        max_combined_models=args.max_combined_models, global_window=args.global_window,
    )
    fit = fit_map(problem, args.epsilon)
    average, _ = average_report(
        problem, config, args.beta, args.max_combined_models, _workers(), args.global_window
    )
    report = {
        "schema_version": SCHEMA_VERSION,
        "kind": "average",
        "manifest": man,
        "tree": tree_json(problem.tree),
        "hyperstage": problem.hyperstage.to_json(),
        "map": fit,
        "average": average,
    }
    dots = dot_artifacts(problem.tree, problem.hyperstage, fit, average)
    return _finish(args, man, report, dots, started)


def cmd_enumerate(args) -> int:
    problem = _problem(args)
    contexts = problem.contexts
    if args.hyperset is None:
        fitting = [c for c in contexts if len(c.members) <= args.cap]
        ctx = max(fitting, key=lambda c: len(c.members)) if fitting else contexts[0]
    elif 0 <= args.hyperset < len(contexts):
        ctx = contexts[args.hyperset]
    else:
        raise ValueError(f"hyperset index {args.hyperset} out of range 0..{len(contexts) - 1}")
    full = HypersetEnsemble.from_scored(ctx.index, enumerate_stagings(ctx, args.cap))
    res = well_performing(full, args.beta)
    window = {full.stagings[i].staging for i in res.window}
    wp = {e.staging for e in res.well_performing.stagings}
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["rank", "staging", "log_score", "weight", "in_window", "well_performing"])
        for rank, (e, w) in enumerate(zip(full.stagings, full.weights)):
            writer.writerow([rank, str(e.staging), repr(e.log_score), repr(w),
                             int(e.staging in window), int(e.staging in wp)])
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def cmd_simulate(args) -> int:
    doc = json.loads(Path(args.generator).read_text(encoding="utf-8"))
    structure, _ = read_tree_spec(args.generator)
    tree = load_tree_spec(structure)
    gen = GeneratingModel.from_json(tree, doc)
    records = simulate(gen, args.n, args.seed)
    depth = max(tree.depth(leaf) for leaf in tree.leaves)
    header = [f"X{i + 1}" for i in range(depth)]
    if args.out:
        write_csv_records(args.out, records, header)
    else:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        for r in records:
            writer.writerow(list(r) + [""] * (depth - len(r)))
    return EXIT_OK


def cmd_export(args) -> int:
    report = json.loads(Path(args.report).read_text(encoding="utf-8"))
    if report.get("schema_version") != SCHEMA_VERSION or report.get("kind") not in ("fit", "average"):
        raise ValueError(f"{args.report} is not a fit or average report")
    tree = tree_from_json(report["tree"])
    h = Hyperstage.from_blocks(report["hyperstage"]["blocks"], report["hyperstage"].get("edge_order", {}))
    dots = dot_artifacts(tree, h, report["map"], report.get("average"))
    run_id = args.run_id or report["manifest"]["run_id"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for path in _write_dots(out_dir, run_id, dots):
        print(path)
    return EXIT_OK


def cmd_rerun(args) -> int:
    man = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    command = man.get("command")
    if command not in ("fit", "average"):
        raise ValueError(f"{args.manifest}: cannot rerun command {command!r}")
    inputs = man["inputs"]
    argv = [command, "--alpha-bar", repr(man["alpha_bar"]), "--prior-rule", man["prior_rule"],
            "--epsilon", repr(man["epsilon"]), "--run-id", man["run_id"],
            "--out-dir", args.out_dir or man["out_dir"]]
    for flag in ("data", "tree_spec", "hyperstage"):
        if inputs.get(flag) is not None:
            argv += [f"--{flag.replace('_', '-')}", inputs[flag]]
    if inputs.get("header"):
        argv.append("--header")
    if man.get("summary"):
        argv.append("--summary")
    if command == "average":
        argv += ["--beta", repr(man["beta"]), "--k", str(man["k"]), "--seed", str(man["seed"]),
                 "--max-combined-models", str(man["max_combined_models"])]
        if man.get("global_window"):
            argv.append("--global-window")
    return main(argv)


COMMANDS = {
    "fit": cmd_fit,
    "average": cmd_average,
    "enumerate": cmd_enumerate,
    "simulate": cmd_simulate,
    "export": cmd_export,
    "rerun": cmd_rerun,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except CombineLimitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COMBINE
    except (TreeError, HyperstageError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
