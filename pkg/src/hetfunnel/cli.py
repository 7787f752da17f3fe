"""Command-line entry points: analyze, simulate, serve."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys

import numpy as np

from .data import load_dataset, parse_schema_file
from .errors import ConfigError, HetfunnelError
from .inference import PERMUTATION, SIMPLE_MEANS
from .nuisance import LearnerSpec, PropensityRule
from .plots import ecdf_figure, funnel_figure, proportion_figure, save_figure
from .report import (
    RunConfig,
    analyze,
    document_from_report,
    dumps_canonical,
    write_atomic,
)
from .simulate import HOMOGENEOUS, StudyConfig, run_study


def _parse_propensity(text: str) -> PropensityRule:
    if text == "empirical":
        return PropensityRule(kind="empirical")
    if text == "known":
        return PropensityRule(kind="known", value=None)
    if text.startswith("known:"):
        return PropensityRule(kind="known", value=float(text.split(":", 1)[1]))
    raise ConfigError(f"unknown propensity rule {text!r} (use known, known:<p>, empirical)")


def _csv_text(rows: list[dict], columns: list[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        out = []
        for col in columns:
            v = row.get(col)
            if v is None:
                out.append("")
            elif isinstance(v, float):
                out.append(repr(v))
            else:
                out.append(str(v))
        writer.writerow(out)
    return buf.getvalue()


def _points_csv(doc: dict) -> str:
    methods = sorted(doc["overall"]["methods"])
    rows = []
    for p in doc["points"]:
        row = {
            "label": p["label"],
            "n": p["n"],
            "n_treated": p["n_treated"],
            "n_control": p["n_control"],
            "effect": p["effect"],
            "diff": p["diff"],
            "t": p["t"],
            "duplicate_of": p["duplicate_of"] or "",
        }
        for m in methods:
            entry = p["methods"].get(m)
            row[f"p_{m}"] = entry["p"] if entry else None
            row[f"s_{m}"] = entry["surprise"] if entry else None
        rows.append(row)
    cols = ["label", "n", "n_treated", "n_control", "effect", "diff", "t", "duplicate_of"]
    for m in methods:
        cols += [f"p_{m}", f"s_{m}"]
    return _csv_text(rows, cols)


def _regions_csv(doc: dict) -> str:
    rows = []
    for reg in doc["regions"]:
        for n, lo, hi in reg["curve"]:
            rows.append(
                {
                    "method": reg["method"],
                    "s_level": reg["s_level"],
                    "gamma": reg["gamma"],
                    "quantile": reg["quantile"],
                    "n": n,
                    "lower": lo,
                    "upper": hi,
                }
            )
    return _csv_text(rows, ["method", "s_level", "gamma", "quantile", "n", "lower", "upper"])


def _top_csv(doc: dict) -> str:
    return _csv_text(
        doc["top_table"], ["subgroup", "n_treated", "n_control", "effect", "abs_t"]
    )


def cmd_analyze(args) -> int:
    schema = parse_schema_file(args.schema)
    dataset = load_dataset(
        args.input, schema, args.outcome, args.arm, delimiter=args.delimiter
    )
    config = RunConfig(
        outcome_col=args.outcome,
        arm_col=args.arm,
        methods=tuple(args.methods.split(",")),
        s_levels=tuple(float(s) for s in args.s_levels.split(",")),
        min_per_arm=args.min_per_arm,
        max_depth=args.max_depth,
        n_perm=args.n_perm,
        folds=args.folds,
        learner=LearnerSpec(kind=args.learner),
        propensity=_parse_propensity(args.propensity),
        seed=args.seed,
        input_path=args.input,
        schema_path=args.schema,
        delimiter=args.delimiter,
        timestamp=args.timestamp,
    )
    report = analyze(dataset, config)
    doc = document_from_report(report)

    os.makedirs(args.out, exist_ok=True)
    write_atomic(os.path.join(args.out, "report.json"), dumps_canonical(doc))
    write_atomic(os.path.join(args.out, "points.csv"), _points_csv(doc))
    write_atomic(os.path.join(args.out, "regions.csv"), _regions_csv(doc))
    write_atomic(os.path.join(args.out, "top_table.csv"), _top_csv(doc))
    if args.export_pseudo:
        lines = "\n".join(repr(float(v)) for v in report.pseudo.values) + "\n"
        write_atomic(os.path.join(args.out, "pseudo_outcomes.txt"), lines)
    if args.export_perm_draws and PERMUTATION in report.methods:
        ref = report_permutation_reference(report)
        lines = "\n".join(repr(float(v)) for v in ref.sample) + "\n"
        write_atomic(os.path.join(args.out, "permutation_draws.txt"), lines)
    for method in report.methods:
        fig = funnel_figure(doc, method)
        save_figure(fig, os.path.join(args.out, f"funnel_{method}.png"))
    if not report.methods:  # baseline-only run still gets the raw funnel
        fig = funnel_figure(doc, SIMPLE_MEANS)
        save_figure(fig, os.path.join(args.out, "funnel.png"))
    print(f"report written to {args.out} (k={doc['overall']['k']})")
    return 0


def report_permutation_reference(report):
    """Rebuild the permutation draws for export (same seed as the analysis)."""
    from .inference import permutation_reference

    seeds = np.random.SeedSequence(entropy=report.config.seed)
    _, perm_seed, _ = (int(s.generate_state(1)[0]) for s in seeds.spawn(3))
    return permutation_reference(
        report.pseudo, report.subgroups, report.config.n_perm, perm_seed
    )


def _study_from_json(path) -> StudyConfig:
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    learner = LearnerSpec(**raw.get("learner", {}))
    prop = raw.get("propensity", {})
    propensity = PropensityRule(kind=prop.get("kind", "known"), value=prop.get("value"))
    kwargs = {
        k: raw[k]
        for k in (
            "reps",
            "min_per_arm",
            "n_perm",
            "folds",
            "seed",
            "calibration_reps",
            "n_jobs",
        )
        if k in raw
    }
    return StudyConfig(
        scenarios=tuple(raw.get("scenarios", [1])),
        effects=tuple(raw.get("effects", [HOMOGENEOUS])),
        methods=tuple(raw.get("methods", [PERMUTATION])),
        learner=learner,
        propensity=propensity,
        gammas=tuple(raw.get("gammas", [0.75, 0.97])),
        **kwargs,
    )


def _summary_document(summary) -> dict:
    cal = {
        f"{scenario}:{effect}": {
            "beta0": c.beta0,
            "beta1_star": c.beta1_star,
            "beta1": c.beta1,
            "reps": c.reps,
            "achieved_overall_power": c.achieved_overall_power,
            "achieved_overall_se": c.achieved_overall_se,
            "achieved_interaction_power": c.achieved_interaction_power,
            "achieved_interaction_se": c.achieved_interaction_se,
        }
        for (scenario, effect), c in summary.calibrations.items()
    }
    groups = {
        f"{scenario}:{effect}:{method}": {
            "n_reps": g.n_reps,
            "ks_uniform": g.ks_uniform,
            "prop_below_0_1": g.prop_below_0_1,
            "prop_below_se": g.prop_below_se,
            "ecdf_grid": [float(x) for x in g.ecdf_grid],
            "ecdf": [float(x) for x in g.ecdf],
        }
        for (scenario, effect, method), g in summary.groups.items()
    }
    coverage = {
        f"{scenario}:{effect}:{gamma:g}": v
        for (scenario, effect, gamma), v in summary.coverage.items()
    }
    return {
        "schema_version": "1.0",
        "config": summary.config.to_dict(),
        "calibrations": cal,
        "groups": groups,
        "coverage": coverage,
        "n_failures": summary.n_failures,
    }


def _rep_rows_csv(summary) -> str:
    keys: list[str] = []
    for row in summary.rows:
        for key in row:
            if key not in keys:
                keys.append(key)
    return _csv_text(summary.rows, keys)


def cmd_simulate(args) -> int:
    cfg = _study_from_json(args.study)
    if args.jobs is not None:
        cfg = StudyConfig(**{**cfg.__dict__, "n_jobs": args.jobs})

    def progress(done, total):
        if done % 50 == 0 or done == total:
            print(f"  {done}/{total} repetitions", file=sys.stderr, flush=True)

    summary = run_study(cfg, progress=progress if args.verbose else None)
    os.makedirs(args.out, exist_ok=True)
    write_atomic(
        os.path.join(args.out, "summary.json"),
        dumps_canonical(_summary_document(summary)),
    )
    write_atomic(os.path.join(args.out, "reps.csv"), _rep_rows_csv(summary))

    ecdf_groups = [
        {
            "label": f"s{scenario} {method}",
            "ecdf_grid": g.ecdf_grid,
            "ecdf": g.ecdf,
        }
        for (scenario, effect, method), g in sorted(summary.groups.items())
        if effect == HOMOGENEOUS
    ]
    if ecdf_groups:
        save_figure(ecdf_figure(ecdf_groups), os.path.join(args.out, "ecdf_homogeneous.png"))
    entries = [
        {
            "label": f"s{scenario} {effect[:3]} {method}",
            "proportion": g.prop_below_0_1,
            "se": g.prop_below_se,
        }
        for (scenario, effect, method), g in sorted(summary.groups.items())
    ]
    if entries:
        save_figure(proportion_figure(entries), os.path.join(args.out, "proportions.png"))
    total = sum(summary.timings)
    print(
        f"study written to {args.out}: {len(summary.rows)} repetitions, "
        f"{summary.n_failures} failures, {total:.1f}s of repetition time"
    )
    return 0


def cmd_serve(args) -> int:
    if not os.path.isfile(args.report):
        print(f"error: report {args.report!r} does not exist", file=sys.stderr)
        return 1
    ui_dir = args.ui
    if ui_dir is not None and not os.path.isdir(ui_dir):
        print(f"error: ui directory {ui_dir!r} does not exist", file=sys.stderr)
        return 1
    from .serve import serve_forever

    serve_forever(args.report, args.port, ui_dir)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hetfunnel",
        description="Evidence against treatment-effect homogeneity across exhaustive subgroups",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("analyze", help="analyze one dataset and write a report")
    pa.add_argument("--input", required=True, help="delimited data file with a header row")
    pa.add_argument("--schema", required=True, help="sidecar schema file")
    pa.add_argument("--outcome", required=True, help="outcome column name")
    pa.add_argument("--arm", required=True, help="arm column name")
    pa.add_argument("--min-per-arm", type=int, default=10)
    pa.add_argument(
        "--methods",
        default="permutation",
        help="comma list of permutation,bonferroni,mvn,simple_means",
    )
    pa.add_argument("--s-levels", default="2,5,10", help="comma list of surprise thresholds")
    pa.add_argument("--n-perm", type=int, default=500)
    pa.add_argument("--folds", type=int, default=5)
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--out", required=True, help="output directory")
    pa.add_argument("--delimiter", default=",", help="field delimiter (use '\\t' for tabs)")
    pa.add_argument("--max-depth", type=int, default=2, choices=(1, 2))
    pa.add_argument("--learner", default="lasso", choices=("lasso", "ols"))
    pa.add_argument("--propensity", default="known", help="known, known:<p>, or empirical")
    pa.add_argument("--export-pseudo", action="store_true")
    pa.add_argument("--export-perm-draws", action="store_true")
    pa.add_argument("--timestamp", default=None, help="string embedded in report metadata")
    pa.set_defaults(func=cmd_analyze)

    ps = sub.add_parser("simulate", help="run a repeated-sampling study")
    ps.add_argument("--study", required=True, help="study configuration JSON")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--jobs", type=int, default=None, help="worker processes")
    ps.add_argument("--verbose", action="store_true")
    ps.set_defaults(func=cmd_simulate)

    pv = sub.add_parser("serve", help="serve a report and the explorer UI locally")
    pv.add_argument("--report", required=True)
    pv.add_argument("--port", type=int, default=8008)
    pv.add_argument("--ui", default=None, help="directory with built UI assets")
    pv.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "analyze" and args.delimiter == "\\t":
        args.delimiter = "\t"
    try:
        return args.func(args)
    except HetfunnelError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
