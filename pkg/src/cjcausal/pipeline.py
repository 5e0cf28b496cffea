"""Contest data ingestion, filtering, and the end-to-end analysis report."""

from __future__ import annotations

import csv
import json
import logging
import warnings
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import pandas as pd

from .citest import DEFAULT_LEVEL, DEFAULT_THRESHOLD, validate_dag
from .dag import Dag, adjustment_sets
from .dataset import CANONICAL_KINDS, Dataset
from .glm import (ModelError, ModelSpec, centered_effects, compare_models, factor, fit,
                  forward_selection, slope)
from .scm import (DAG_VARIANTS, CodeJamParams, codejam_scm, dag_fixture_text, language_effects_mc,
                  load_dag_fixture, sample)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ("challenge", "nickname", "language", "size", "rank")
TREATMENT, OUTCOME = "language", "rank"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class RawSubmission:
    challenge: str
    nickname: str
    language: str
    size: int
    rank: int

    def __post_init__(self):
        for name in ("challenge", "nickname", "language"):
            if not str(getattr(self, name)).strip():
                raise DataError(f"empty {name}")
        if self.size < 1:
            raise DataError(f"size must be >= 1, got {self.size}")
        if self.rank < 1:
            raise DataError(f"rank must be >= 1, got {self.rank}")


@dataclass(frozen=True)
class FilterConfig:
    min_years: int = 2
    min_rounds: int = 6
    top_k_languages: int = 3

    def __post_init__(self):
        for name in ("min_years", "min_rounds", "top_k_languages"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be positive")


# --------------------------------------------------------------------------
# CSV


def _as_int(text, name):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"non-numeric {name} {text!r}") from None
    if value != int(value):
        raise DataError(f"non-integer {name} {text!r}")
    return int(value)


def load_csv(path) -> tuple[list[RawSubmission], list[str]]:
    """Read a contest CSV; returns ``(rows, errors)`` with one message per rejected row."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path} is empty") from None
        if tuple(header) != CSV_COLUMNS:
            raise DataError(f"{path}: header must be {','.join(CSV_COLUMNS)}, got {','.join(header)}")
        rows, errors = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != len(CSV_COLUMNS):
                errors.append(f"line {lineno}: expected {len(CSV_COLUMNS)} fields, got {len(rec)}")
                continue
            ch, nick, lang, size, rank = (f.strip() for f in rec)
            try:
                rows.append(RawSubmission(ch, nick, lang, _as_int(size, "size"), _as_int(rank, "rank")))
            except DataError as exc:
                errors.append(f"line {lineno}: {exc}")
    if not rows and not errors:
        raise DataError(f"{path} has no data rows")
    if errors:
        logger.warning("%s: %d malformed row(s) skipped", path, len(errors))
    return rows, errors


def write_csv(data, path) -> None:
    """Write RawSubmissions or a canonical Dataset in the contest CSV schema."""
    if isinstance(data, Dataset):
        frame = data.frame
        records = zip(*(frame[c] for c in CSV_COLUMNS))
    else:
        records = ((r.challenge, r.nickname, r.language, r.size, r.rank) for r in data)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for ch, nick, lang, size, rank in records:
            w.writerow([ch, nick, lang, int(size), int(rank)])


# --------------------------------------------------------------------------
# aggregation and filtering


def aggregate(rows: Iterable[RawSubmission]) -> list[RawSubmission]:
    """Merge rows sharing (nickname, challenge): sizes add, ranks must agree,
    language by majority (alphabetical tie-break)."""
    groups: dict[tuple, list[RawSubmission]] = defaultdict(list)
    for r in rows:
        groups[(r.nickname, r.challenge)].append(r)
    out = []
    for (nick, ch), items in groups.items():
        if len(items) == 1:
            out.append(items[0])
            continue
        ranks = {r.rank for r in items}
        if len(ranks) > 1:
            raise DataError(f"conflicting ranks {sorted(ranks)} for nickname {nick!r} in challenge {ch!r}")
        votes = Counter(r.language for r in items)
        top = max(votes.values())
        lang = min(l for l, c in votes.items() if c == top)
        out.append(RawSubmission(ch, nick, lang, sum(r.size for r in items), items[0].rank))
    return out


def parse_challenge(cid: str) -> tuple[int, str]:
    """Split a ``<year>-<round>`` challenge id."""
    year, sep, rnd = cid.partition("-")
    if not sep or not rnd or not year.isdigit():
        raise DataError(f"challenge id {cid!r} is not of the form <year>-<round>")
    return int(year), rnd


def to_dataset(rows: Sequence[RawSubmission]) -> Dataset:
    frame = pd.DataFrame([asdict(r) for r in rows], columns=list(CSV_COLUMNS))
    return Dataset(frame, CANONICAL_KINDS)


def filter_dataset(rows: Sequence[RawSubmission], cfg: FilterConfig) -> Dataset:
    """Keep the most used languages, then experienced participants.

    A participant qualifies with at least ``min_years`` distinct years and, in
    some single year, at least ``min_rounds`` distinct rounds.
    """
    rows = list(rows)
    counts = Counter(r.language for r in rows)
    ranked = sorted(counts, key=lambda l: (-counts[l], l))
    languages = set(ranked[:cfg.top_k_languages])
    kept = [r for r in rows if r.language in languages]
    rounds_by_year: dict[str, dict[int, set]] = defaultdict(lambda: defaultdict(set))
    for r in kept:
        year, rnd = parse_challenge(r.challenge)
        rounds_by_year[r.nickname][year].add(rnd)
    experienced = {nick for nick, years in rounds_by_year.items()
                   if len(years) >= cfg.min_years
                   and max(len(v) for v in years.values()) >= cfg.min_rounds}
    kept = [r for r in kept if r.nickname in experienced]
    if not kept:
        raise DataError("no rows left after filtering")
    return to_dataset(kept)


# --------------------------------------------------------------------------
# analysis


MODEL_TERMS = {
    "m1": (factor("language"),),
    "m2": (factor("language"), factor("nickname")),
    "m3": (factor("language"), factor("nickname"), factor("challenge")),
    "m4": (factor("language"), factor("nickname"), factor("challenge"), slope("size", "log")),
}


def model_spec(label: str) -> ModelSpec:
    return ModelSpec(OUTCOME, "negbin", MODEL_TERMS[label])


@dataclass
class AnalysisConfig:
    level: float = DEFAULT_LEVEL
    threshold: float = DEFAULT_THRESHOLD
    models: tuple = ("m1", "m2", "m3", "m4")
    reference_dag: str = "d2"
    forward_selection: bool = False
    filters: FilterConfig | None = None
    seed: int | None = None

    def to_dict(self):
        d = asdict(self)
        d["models"] = list(self.models)
        return d


@dataclass
class AnalysisReport:
    config: dict
    dataset_summary: dict
    models: dict
    language_effects: dict
    model_ranking: dict
    dag_validation: dict
    adjustment_sets: dict
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return {
            "config": self.config,
            "dataset_summary": self.dataset_summary,
            "models": self.models,
            "language_effects": self.language_effects,
            "model_ranking": self.model_ranking,
            "dag_validation": self.dag_validation,
            "adjustment_sets": self.adjustment_sets,
        }

    def to_json(self, **kw) -> str:
        return json.dumps(_jsonable(self.to_dict()), **kw)

    def verdicts(self, model: str) -> dict[str, str]:
        effects = self.language_effects["by_model"].get(model) or {}
        return {lang: e["verdict"] for lang, e in effects.items()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj) if np.isfinite(obj) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def summarize(dataset: Dataset) -> dict:
    cols = dataset.columns
    out = {"rows": len(dataset)}
    for name, key in (("nickname", "participants"), ("challenge", "challenges")):
        out[key] = len(dataset.levels(name)) if name in cols else 0
    out["languages"] = dataset.levels("language") if "language" in cols else []
    if OUTCOME in cols:
        r = dataset.column(OUTCOME).astype(float)
        out["rank_mean"] = float(r.mean())
        out["rank_variance"] = float(r.var(ddof=1)) if len(r) > 1 else 0.0
    return out


def _causal_models(dags, reference, models):
    """Models whose non-treatment predictors form a valid adjustment set in the reference DAG."""
    dag = dags.get(reference) if dags else None
    if dag is None:
        return [], None
    report = adjustment_sets(dag, TREATMENT, OUTCOME)
    valid = set(report.all_valid)
    ok = [m for m in models
          if frozenset(t.column for t in MODEL_TERMS[m] if t.column != TREATMENT) in valid]
    return ok, report


def analyze(dataset: Dataset, dags: Mapping[str, Dag] | None = None,
            config: AnalysisConfig | None = None) -> AnalysisReport:
    """Fit the four rank models, rank them, test the DAGs and compare the
    predictive-best and adjustment-set-consistent language answers."""
    cfg = config or AnalysisConfig()
    dags = dict(dags or {})
    notes = []
    for col in CSV_COLUMNS:
        if col not in dataset.columns:
            raise DataError(f"dataset lacks column {col!r}")
    languages = dataset.levels(TREATMENT)
    single_language = len(languages) < 2
    if single_language:
        msg = f"only one language level ({languages}); language effects are undefined"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)

    fits, models = {}, {}
    for label in cfg.models:
        spec = model_spec(label)
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = fit(dataset, spec)
            fits[label] = res
            models[label] = {"formula": spec.formula, "loglik": res.loglik, "aic": res.aic,
                             "dispersion": res.dispersion, "n_params": res.n_free,
                             "converged": res.converged, "iterations": res.iterations,
                             "error": None}
        except (ModelError, np.linalg.LinAlgError) as exc:
            models[label] = {"formula": spec.formula, "error": str(exc)}
            notes.append(f"{label}: {exc}")

    by_model = {}
    if not single_language:
        for label, res in fits.items():
            try:
                summary = centered_effects(res, TREATMENT, cfg.level)
            except ModelError as exc:
                notes.append(f"{label} effects: {exc}")
                continue
            by_model[label] = {lev: {"estimate": e.estimate, "lower": e.lower, "upper": e.upper,
                                     "stderr": e.stderr, "verdict": e.verdict()}
                               for lev, e in summary.effects.items()}

    ranking = compare_models(fits) if fits else []
    predictive = ranking[0].label if ranking else None
    causal_ok, adj_report = _causal_models(dags, cfg.reference_dag, cfg.models)
    causal_ranked = [r.label for r in ranking if r.label in causal_ok]
    causal = causal_ranked[0] if causal_ranked else None

    selection = None
    if cfg.forward_selection:
        steps = []
        base = model_spec("m1")
        chosen = forward_selection(dataset, base, [factor("nickname"), factor("challenge"),
                                                   slope("size", "log")], history=steps)
        selection = {"selected": chosen.formula,
                     "steps": [{"added": t.label, "aic": a} for t, a in steps]}

    validation = {}
    for dag_id, dag in dags.items():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            validation[dag_id] = validate_dag(dag, dataset, cfg.level, cfg.threshold, dag_id).to_dict()

    adjustment = {}
    for dag_id, dag in dags.items():
        adjustment[dag_id] = adjustment_sets(dag, TREATMENT, OUTCOME).to_dict()

    return AnalysisReport(
        config=cfg.to_dict(),
        dataset_summary=summarize(dataset),
        models=models,
        language_effects={
            "level": cfg.level,
            "by_model": by_model,
            "predictive_model": predictive,
            "causal_model": causal,
            "causal_candidates": causal_ok,
            "predictive_verdicts": {k: v["verdict"] for k, v in by_model.get(predictive, {}).items()},
            "causal_verdicts": {k: v["verdict"] for k, v in by_model.get(causal, {}).items()},
            "warnings": notes,
        },
        model_ranking={
            "criterion": "aic",
            "ranking": [{"model": r.label, "aic": r.aic, "delta_aic": r.delta_aic} for r in ranking],
            "forward_selection": selection,
        },
        dag_validation=validation,
        adjustment_sets=adjustment,
        warnings=notes,
    )


def effect_rows(report: AnalysisReport) -> list[dict]:
    """Flat per-model, per-language interval table for external plotting."""
    out = []
    for model, effects in report.language_effects["by_model"].items():
        for lev, e in effects.items():
            out.append({"model": model, "factor": TREATMENT, "level": lev, **e})
    return out


# --------------------------------------------------------------------------
# robustness sweep


@dataclass(frozen=True)
class SweepCell:
    index: int
    years: int
    rounds: int
    datapoints: int
    participants: int
    effects: dict          # model -> {language: {estimate, lower, upper, stderr, verdict}}
    error: str | None = None

    def to_dict(self):
        return asdict(self)


def sweep(rows: Sequence[RawSubmission], years: Iterable[int], rounds: Iterable[int],
          config: AnalysisConfig | None = None, top_k_languages: int = 3) -> list[SweepCell]:
    """Re-run the language-effect analysis for every (min years, min rounds) cutoff.

    Cells with no data are dropped; the rest are sorted by datapoint count
    and numbered from 1.
    """
    years, rounds = list(years), list(rounds)
    if not years or not rounds:
        raise DataError("sweep ranges must be nonempty")
    cfg = config or AnalysisConfig()
    cells = []
    for y in years:
        for r in rounds:
            try:
                data = filter_dataset(rows, FilterConfig(y, r, top_k_languages))
            except DataError:
                continue
            summary = summarize(data)
            try:
                rep = analyze(data, None, cfg)
                effects, err = rep.language_effects["by_model"], None
                failed = [m for m, info in rep.models.items() if info.get("error")]
                if failed:
                    err = "; ".join(f"{m}: {rep.models[m]['error']}" for m in failed)
            except (DataError, ModelError) as exc:
                effects, err = {}, str(exc)
            cells.append((summary["rows"], y, r, summary["participants"], effects, err))
    cells.sort(key=lambda c: (c[0], -c[1], -c[2]))
    return [SweepCell(i + 1, y, r, n, p, eff, err)
            for i, (n, y, r, p, eff, err) in enumerate(cells)]


# --------------------------------------------------------------------------
# synthetic data


def bundled_dags() -> dict[str, Dag]:
    return {v: load_dag_fixture(v) for v in DAG_VARIANTS}


def synth(params: CodeJamParams | None, n: int, seed: int, out_dir, variant: str = "d2",
          truth_samples: int = 200_000) -> dict[str, Path]:
    """Write a synthetic contest CSV, a ground-truth JSON sidecar and the DAG used."""
    params = params or CodeJamParams()
    scm = codejam_scm(params, variant)
    data = sample(scm, n, seed)
    effects, se = language_effects_mc(scm, params.languages, truth_samples, seed + 1)
    truth = {
        "variant": variant,
        "n": n,
        "seed": seed,
        "truth_samples": truth_samples,
        "language_effects": effects,
        "language_effects_mc_se": se,
        "injected_language_effects": params.true_centered_rank_effects(),
        "params": params.to_dict(),
    }
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"data": out / "data.csv", "truth": out / "ground_truth.json",
             "dag": out / f"{variant}.dag", "params": out / "params.txt"}
    # compute everything before touching the filesystem
    dag_text = dag_fixture_text(variant)
    truth_text = json.dumps(truth, indent=2)
    write_csv(data, paths["data"])
    paths["truth"].write_text(truth_text)
    paths["dag"].write_text(dag_text)
    paths["params"].write_text(params.to_text())
    return paths


def report_schema() -> dict:
    return json.loads(resources.files("cjcausal").joinpath("data", "report.schema.json").read_text())
