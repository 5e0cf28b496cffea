"""Command line interface: ``cjcausal dag|fit|analyze|sweep|synth``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

from .citest import DEFAULT_LEVEL, DEFAULT_THRESHOLD, validate_dag
from .dag import (DagError, adjustment_sets, backdoor_paths, classify_path, enumerate_paths,
                  implied_independencies, parse_dag)
from .glm import ModelError, fit, parse_formula, wald_intervals
from .pipeline import (AnalysisConfig, DataError, FilterConfig, aggregate, analyze, bundled_dags,
                       effect_rows, filter_dataset, load_csv, sweep, synth)
from .scm import DAG_VARIANTS, CodeJamParams, ScmError, load_dag_fixture

logger = logging.getLogger("cjcausal")


def _load_dag(ref):
    """A DAG file path, or one of the bundled variant names."""
    if ref in DAG_VARIANTS and not Path(ref).exists():
        return ref, load_dag_fixture(ref)
    path = Path(ref)
    return path.stem, parse_dag(path.read_text(encoding="utf-8"))


def _int_range(text):
    lo, sep, hi = text.partition("-")
    try:
        lo = int(lo)
        hi = int(hi) if sep else lo
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or N-M, got {text!r}") from None
    if lo < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return list(range(lo, hi + 1))


def _filters(args):
    return FilterConfig(args.min_years, args.min_rounds, args.top_languages)


def _rows(args):
    rows, errors = load_csv(args.data)
    for msg in errors[:10]:
        print(f"warning: {msg}", file=sys.stderr)
    if len(errors) > 10:
        print(f"warning: ... {len(errors) - 10} more malformed rows", file=sys.stderr)
    return aggregate(rows)


def _dataset(args):
    return filter_dataset(_rows(args), _filters(args))


def _emit(args, payload, text):
    """Write JSON or text to --out (or stdout)."""
    body = json.dumps(payload, indent=2) if args.format == "json" else text
    if args.out:
        Path(args.out).write_text(body + "\n", encoding="utf-8")
    else:
        print(body)


def _write_rows(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def _interval_text(name, e):
    return f"  {name:<12} {e['estimate']:+.3f}  [{e['lower']:+.3f}, {e['upper']:+.3f}]  {e['verdict']}"


# --------------------------------------------------------------------------
# subcommands


def cmd_dag_paths(args):
    _, dag = _load_dag(args.dag)
    given = set(args.given)
    backdoor = {str(p) for p in backdoor_paths(dag, args.treatment, args.outcome)}
    out, lines = [], []
    for i, p in enumerate(enumerate_paths(dag, args.treatment, args.outcome)):
        c = classify_path(p, dag, given)
        out.append({"path": str(p), "kind": c.kind, "status": c.status,
                    "blockers": list(c.blockers), "colliders": list(p.colliders())})
        lines.append(f"{i + 1:>3}. {p}  [{c.kind}, {c.status}]")
    payload = {"treatment": args.treatment, "outcome": args.outcome, "given": sorted(given),
               "paths": out, "n_backdoor": len(backdoor)}
    lines.append(f"{len(out)} paths, {len(backdoor)} backdoor")
    _emit(args, payload, "\n".join(lines))


def cmd_dag_independencies(args):
    _, dag = _load_dag(args.dag)
    stmts = implied_independencies(dag, testable_only=not args.all)
    _emit(args, [s.to_dict() for s in stmts], "\n".join(repr(s) for s in stmts) or "(none)")


def cmd_dag_adjust(args):
    _, dag = _load_dag(args.dag)
    rep = adjustment_sets(dag, args.treatment, args.outcome)
    fmt = lambda s: "{" + ", ".join(sorted(s)) + "}"
    text = "valid:   " + " ".join(fmt(s) for s in rep.all_valid) + \
        "\nminimal: " + " ".join(fmt(s) for s in rep.minimal)
    _emit(args, rep.to_dict(), text)


def cmd_dag_validate(args):
    dag_id, dag = _load_dag(args.dag)
    data = _dataset(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = validate_dag(dag, data, args.level, args.threshold, dag_id)
    lines = [f"{dag_id}: {rep.verdict}"]
    for ci, r in rep.entries:
        lines.append(f"  {ci!r}: {r.verdict} (nonzero {r.nonzero_fraction:.3f}, {r.family})")
    _emit(args, rep.to_dict(), "\n".join(lines))


def cmd_fit(args):
    data = _dataset(args)
    spec = parse_formula(args.formula)
    res = fit(data, spec)
    payload = res.to_dict()
    payload.pop("covariance")
    payload["intervals"] = {k: {"estimate": e, "lower": lo, "upper": hi}
                            for k, (e, lo, hi) in wald_intervals(res, args.level).items()}
    payload["level"] = args.level
    lines = [f"{spec.formula}", f"n={res.n_obs} loglik={res.loglik:.3f} aic={res.aic:.3f} "
             f"dispersion={res.dispersion:.4g} converged={res.converged}"]
    for k, iv in payload["intervals"].items():
        lines.append(f"  {k:<28} {iv['estimate']:+.4f}  [{iv['lower']:+.4f}, {iv['upper']:+.4f}]")
    _emit(args, payload, "\n".join(lines))


def cmd_analyze(args):
    data = _dataset(args)
    dags = dict(_load_dag(ref) for ref in args.dag) if args.dag else bundled_dags()
    cfg = AnalysisConfig(level=args.level, threshold=args.threshold, models=tuple(args.models),
                         reference_dag=args.reference_dag, forward_selection=args.selection,
                         filters=_filters(args), seed=args.seed)
    rep = analyze(data, dags, cfg)
    payload = json.loads(rep.to_json())
    le = payload["language_effects"]
    lines = [f"rows={payload['dataset_summary']['rows']} "
             f"participants={payload['dataset_summary']['participants']}"]
    for r in payload["model_ranking"]["ranking"]:
        lines.append(f"{r['model']}: aic={r['aic']:.1f} (+{r['delta_aic']:.1f})")
    for label in (le["predictive_model"], le["causal_model"]):
        if label in le["by_model"]:
            lines.append(f"language effects, {label}:")
            lines += [_interval_text(k, e) for k, e in le["by_model"][label].items()]
    lines.append(f"predictive answer ({le['predictive_model']}): {le['predictive_verdicts']}")
    lines.append(f"adjusted answer ({le['causal_model']}): {le['causal_verdicts']}")
    for dag_id, v in payload["dag_validation"].items():
        lines.append(f"dag {dag_id}: {v['verdict']}")
    lines += [f"warning: {w}" for w in rep.warnings]
    if args.plot_data:
        _write_rows(Path(args.plot_data) / "language_effects.csv", effect_rows(rep))
    _emit(args, payload, "\n".join(lines))


def cmd_sweep(args):
    rows = _rows(args)
    cfg = AnalysisConfig(level=args.level, threshold=args.threshold, models=tuple(args.models),
                         seed=args.seed)
    cells = sweep(rows, args.years, args.rounds, cfg, args.top_languages)
    payload = {"config": cfg.to_dict(), "cells": [c.to_dict() for c in cells]}
    lines = ["index years rounds datapoints participants"]
    for c in cells:
        lines.append(f"{c.index:>5} {c.years:>5} {c.rounds:>6} {c.datapoints:>10} {c.participants:>12}"
                     + (f"  error: {c.error}" if c.error else ""))
    if args.plot_data:
        flat = [{"index": c.index, "years": c.years, "rounds": c.rounds, "datapoints": c.datapoints,
                 "model": m, "level": lev, **e}
                for c in cells for m, effects in c.effects.items() for lev, e in effects.items()]
        _write_rows(Path(args.plot_data) / "sweep_effects.csv", flat)
    _emit(args, payload, "\n".join(lines))


def cmd_synth(args):
    params = CodeJamParams.from_text(Path(args.params).read_text()) if args.params else CodeJamParams()
    paths = synth(params, args.n, args.seed, args.out, args.variant, args.truth_samples)
    for key, p in paths.items():
        print(f"{key}: {p}")


# --------------------------------------------------------------------------
# parser


def _common(p, data=True, filters=True, out=True):
    if data:
        p.add_argument("--data", required=True, help="contest CSV")
    if filters:
        p.add_argument("--min-years", type=int, default=2)
        p.add_argument("--min-rounds", type=int, default=6)
        p.add_argument("--top-languages", type=int, default=3)
    p.add_argument("--level", type=float, default=DEFAULT_LEVEL)
    p.add_argument("--threshold", type=float, default=DEFAULT_THRESHOLD)
    p.add_argument("--seed", type=int, default=0)
    if out:
        p.add_argument("--out", help="output file (default stdout)")
        p.add_argument("--format", choices=("json", "text"), default="text")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cjcausal", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="cmd", required=True)

    dag_p = sub.add_parser("dag", help="analyze a causal DAG")
    dag_sub = dag_p.add_subparsers(dest="dag_cmd", required=True)

    p = dag_sub.add_parser("paths", help="list treatment-outcome paths")
    p.add_argument("--dag", required=True, help="DAG file or d0/d1/d2")
    p.add_argument("--treatment", default="language")
    p.add_argument("--outcome", default="rank")
    p.add_argument("--given", nargs="*", default=[])
    _common(p, data=False, filters=False)
    p.set_defaults(func=cmd_dag_paths)

    p = dag_sub.add_parser("independencies", help="implied conditional independencies")
    p.add_argument("--dag", required=True)
    p.add_argument("--all", action="store_true", help="include statements on latent nodes")
    _common(p, data=False, filters=False)
    p.set_defaults(func=cmd_dag_independencies)

    p = dag_sub.add_parser("adjust", help="backdoor adjustment sets")
    p.add_argument("--dag", required=True)
    p.add_argument("--treatment", default="language")
    p.add_argument("--outcome", default="rank")
    _common(p, data=False, filters=False)
    p.set_defaults(func=cmd_dag_adjust)

    p = dag_sub.add_parser("validate", help="test a DAG's independencies on data")
    p.add_argument("--dag", required=True)
    _common(p)
    p.set_defaults(func=cmd_dag_validate)

    p = sub.add_parser("fit", help="fit one regression")
    p.add_argument("--formula", required=True, help='e.g. "rank ~ language + nickname"')
    _common(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("analyze", help="full language-effect analysis report")
    p.add_argument("--dag", action="append", help="DAG file or d0/d1/d2 (repeatable; default all three)")
    p.add_argument("--models", nargs="+", default=["m1", "m2", "m3", "m4"],
                   choices=["m1", "m2", "m3", "m4"])
    p.add_argument("--reference-dag", default="d2")
    p.add_argument("--selection", action="store_true", help="also run AIC forward selection")
    p.add_argument("--plot-data", help="directory for plot-ready CSVs")
    _common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("sweep", help="repeat the analysis over filter cutoffs")
    p.add_argument("--years", type=_int_range, default=_int_range("1-7"))
    p.add_argument("--rounds", type=_int_range, default=_int_range("1-6"))
    p.add_argument("--models", nargs="+", default=["m3", "m4"], choices=["m1", "m2", "m3", "m4"])
    p.add_argument("--plot-data", help="directory for plot-ready CSVs")
    _common(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="generate synthetic contest data")
    p.add_argument("--n", type=int, default=20000)
    p.add_argument("--variant", choices=DAG_VARIANTS, default="d2")
    p.add_argument("--params", help="key = value parameter file")
    p.add_argument("--truth-samples", type=int, default=200_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DagError, DataError, ModelError, ScmError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
