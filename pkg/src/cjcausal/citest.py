"""Regression-based tests of a DAG's implied conditional independencies."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .dag import CondIndep, Dag, implied_independencies
from .dataset import CONTINUOUS, COUNT, FACTOR, Dataset
from .glm import (GAUSSIAN, NEGBIN, ModelError, ModelSpec, NotConvergedError, Term, centered_effects,
                  factor, fit, slope, wald_intervals)

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
DEFAULT_LEVEL = 0.5
DEFAULT_THRESHOLD = 0.2

_OUTCOME_PRIORITY = {COUNT: 2, CONTINUOUS: 1, FACTOR: 0}


class CiTestError(ValueError):
    pass


@dataclass(frozen=True)
class CiTestSpec:
    statement: CondIndep
    regression: ModelSpec
    focus: Term

    @property
    def family(self) -> str:
        return self.regression.family


@dataclass(frozen=True)
class CiTestResult:
    statement: CondIndep
    family: str
    formula: str
    intervals: dict          # focus column -> (estimate, lower, upper)
    nonzero_fraction: float
    verdict: str
    threshold: float
    level: float
    notes: tuple = ()

    def to_dict(self):
        return {
            "statement": repr(self.statement),
            "x": self.statement.x,
            "y": self.statement.y,
            "given": sorted(self.statement.given),
            "family": self.family,
            "formula": self.formula,
            "nonzero_fraction": self.nonzero_fraction,
            "verdict": self.verdict,
            "threshold": self.threshold,
            "level": self.level,
            "intervals": {k: {"estimate": v[0], "lower": v[1], "upper": v[2]}
                          for k, v in self.intervals.items()},
            "notes": list(self.notes),
        }


@dataclass(frozen=True)
class DagValidationReport:
    dag_id: str
    entries: tuple = ()      # (CondIndep, CiTestResult)
    verdict: str = PASS

    def to_dict(self):
        return {"dag": self.dag_id, "verdict": self.verdict,
                "tests": [r.to_dict() for _, r in self.entries]}


def _schema(schema) -> tuple[dict, Dataset | None]:
    if isinstance(schema, Dataset):
        return schema.kinds, schema
    return dict(schema), None


def _predictor(column, kind, data):
    if kind == FACTOR:
        return factor(column)
    if kind in (COUNT, CONTINUOUS):
        positive = data is None or np.all(data.column(column) > 0)
        return slope(column, "log" if positive else "identity")
    raise CiTestError(f"unsupported column class {kind!r} for {column!r}")


def regression_for_ci(ci: CondIndep, schema: Dataset | Mapping[str, str]) -> CiTestSpec:
    """Build the regression that tests `ci`.

    The outcome is the statement variable with the highest class priority
    (count, then continuous, then factor; ties keep ``ci.x``). Count and
    factor outcomes use the negative-binomial family (factors as integer
    codes); continuous outcomes are modelled on the log scale with a gaussian.
    """
    kinds, data = _schema(schema)
    for v in sorted(ci.variables()):
        if v not in kinds:
            raise CiTestError(f"variable {v!r} is latent or missing from the data")
        if kinds[v] not in _OUTCOME_PRIORITY:
            raise CiTestError(f"unsupported column class {kinds[v]!r} for {v!r}")
    x, y = ci.x, ci.y
    if _OUTCOME_PRIORITY[kinds[y]] > _OUTCOME_PRIORITY[kinds[x]]:
        x, y = y, x
    if kinds[x] == CONTINUOUS:
        positive = data is None or np.all(data.column(x) > 0)
        family, transform = GAUSSIAN, "log" if positive else "identity"
    else:
        family, transform = NEGBIN, "identity"
    focus = _predictor(y, kinds[y], data)
    terms = [focus] + [_predictor(z, kinds[z], data) for z in sorted(ci.given)]
    return CiTestSpec(ci, ModelSpec(x, family, tuple(terms), transform, True), focus)


def run_ci_test(dataset: Dataset, spec: CiTestSpec, level: float = DEFAULT_LEVEL,
                threshold: float = DEFAULT_THRESHOLD) -> CiTestResult:
    """Fit the test regression and judge the focus coefficients.

    A factor focus is judged through its centered per-level effects. The
    verdict is ``pass`` when the share of focus coefficients whose interval
    excludes zero is at most `threshold`; a non-converged fit gives
    ``inconclusive``.
    """
    formula = spec.regression.formula
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        res = fit(dataset, spec.regression)
    notes = tuple(sorted({str(w.message) for w in caught}))
    design = res.design
    if spec.focus.kind == "factor":
        idx = [j for j in design.factor_columns[spec.focus.column].values() if j is not None]
    else:
        idx = [design.slope_columns[spec.focus.column]]
    if not idx:
        raise CiTestError(f"empty focus group: {spec.focus.column!r} has a single level")
    if not res.converged:
        return CiTestResult(spec.statement, spec.family, formula, {}, float("nan"), INCONCLUSIVE,
                            threshold, level, notes + ("fit did not converge",))
    if spec.focus.kind == "factor":
        # per-level deviations from the level mean; reference-coded contrasts all share the
        # reference level's noise and exclude zero together when it happens to sit off-centre
        summary = centered_effects(res, spec.focus.column, level)
        focus = {f"{spec.focus.column}[{lev}]": (e.estimate, e.lower, e.upper)
                 for lev, e in summary.effects.items()}
    else:
        intervals = wald_intervals(res, level)
        focus = {res.columns[j]: intervals[res.columns[j]] for j in idx}
    nonzero = float(np.mean([not (lo <= 0.0 <= hi) for _, lo, hi in focus.values()]))
    verdict = PASS if nonzero <= threshold else FAIL
    return CiTestResult(spec.statement, spec.family, formula, focus, nonzero, verdict,
                        threshold, level, notes)


def validate_dag(dag: Dag, dataset: Dataset, level: float = DEFAULT_LEVEL,
                 threshold: float = DEFAULT_THRESHOLD, dag_id: str = "dag") -> DagValidationReport:
    """Test every testable implied independence of `dag` against `dataset`.

    Overall verdict: ``fail`` if any test fails, otherwise ``inconclusive`` if
    any test could not be run, otherwise ``pass`` (vacuously so when there is
    nothing to test).
    """
    entries = []
    for ci in implied_independencies(dag, testable_only=True):
        try:
            result = run_ci_test(dataset, regression_for_ci(ci, dataset), level, threshold)
        except (CiTestError, ModelError, NotConvergedError, KeyError) as exc:
            result = CiTestResult(ci, "", "", {}, float("nan"), INCONCLUSIVE, threshold, level, (str(exc),))
        entries.append((ci, result))
    verdicts = {r.verdict for _, r in entries}
    overall = FAIL if FAIL in verdicts else INCONCLUSIVE if INCONCLUSIVE in verdicts else PASS
    return DagValidationReport(dag_id, tuple(entries), overall)
