"""Structural causal models: ancestral sampling, do-interventions, ground-truth effects."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping

import numpy as np
import pandas as pd

from .dag import Dag, parse_dag
from .dataset import CONTINUOUS, COUNT, FACTOR, Dataset

CATEGORICAL = "categorical-logit"
GAUSSIAN = "gaussian"
LOGNORMAL = "lognormal"
NEGBIN = "negative-binomial-log"
DETERMINISTIC = "deterministic"
MECHANISM_KINDS = (CATEGORICAL, GAUSSIAN, LOGNORMAL, NEGBIN, DETERMINISTIC)

DAG_VARIANTS = ("d0", "d1", "d2")


class ScmError(ValueError):
    pass


@dataclass(frozen=True)
class Mechanism:
    """Generative rule for one node given its parents.

    ``coefficients`` maps ``(parent, level)`` to a weight for factor parents and
    ``(parent, None)`` to a slope for numeric parents. For categorical
    mechanisms both ``baseline`` and ``coefficients`` are keyed by output level
    first. ``noise`` is sigma (gaussian, lognormal) or phi (negative binomial).
    """

    kind: str
    parents: tuple[str, ...] = ()
    baseline: object = 0.0
    coefficients: Mapping = field(default_factory=dict)
    noise: float | None = None
    levels: tuple[str, ...] = ()
    value: object = None
    integer: bool = False
    min_value: float | None = None
    output: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "parents", tuple(self.parents))
        object.__setattr__(self, "levels", tuple(self.levels))
        if self.kind not in MECHANISM_KINDS:
            raise ScmError(f"unknown mechanism kind {self.kind!r}")
        if self.kind in (GAUSSIAN, LOGNORMAL, NEGBIN):
            if self.noise is None or not self.noise > 0:
                raise ScmError(f"{self.kind} mechanism needs a positive noise parameter")
        if self.kind == CATEGORICAL:
            if len(self.levels) < 2:
                raise ScmError("categorical mechanisms need at least two levels")
            logits = [self.baseline.get(lev, 0.0) for lev in self.levels] if isinstance(self.baseline, Mapping) else []
            if not np.all(np.isfinite(logits)):
                raise ScmError("categorical logits must be finite")
            unknown = set(self.coefficients) - set(self.levels)
            if unknown:
                raise ScmError(f"coefficients for unknown output levels {sorted(unknown)}")
            refs = {p for table in self.coefficients.values() for p, _ in table}
        else:
            refs = {p for p, _ in self.coefficients}
        stray = refs - set(self.parents)
        if stray:
            raise ScmError(f"coefficients reference non-parents {sorted(stray)}")

    @classmethod
    def point_mass(cls, value, output: str) -> "Mechanism":
        return cls(DETERMINISTIC, value=value, output=output)

    @property
    def output_kind(self) -> str:
        if self.output:
            return self.output
        if self.kind == CATEGORICAL:
            return FACTOR
        if self.kind == NEGBIN:
            return COUNT
        if self.kind == DETERMINISTIC and isinstance(self.value, str):
            return FACTOR
        return CONTINUOUS

    def _linear(self, table, values, n):
        eta = np.full(n, float(self.baseline) if not isinstance(self.baseline, Mapping) else 0.0)
        for parent in self.parents:
            eta = eta + _parent_contribution(table, parent, values[parent])
        return eta

    def draw(self, values: dict, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == DETERMINISTIC:
            if self.value is not None:
                return np.full(n, self.value, dtype=object if isinstance(self.value, str) else float)
            return self._linear(self.coefficients, values, n)
        if self.kind == CATEGORICAL:
            return self._draw_categorical(values, n, rng)
        eta = self._linear(self.coefficients, values, n)
        if not np.all(np.isfinite(eta)):
            raise ScmError("non-finite linear predictor")
        if self.kind == GAUSSIAN:
            out = eta + rng.normal(0.0, self.noise, n)
        elif self.kind == LOGNORMAL:
            out = np.exp(eta + rng.normal(0.0, self.noise, n))
        else:
            lam = np.exp(eta)
            # gamma-Poisson mixture: mean lam, variance lam + lam^2 / phi
            out = rng.poisson(rng.gamma(self.noise, lam / self.noise)).astype(float)
        if self.integer:
            out = np.round(out)
        if self.min_value is not None:
            out = np.maximum(out, self.min_value)
        if not np.all(np.isfinite(out)):
            raise ScmError("non-finite sampled value")
        return out

    def _draw_categorical(self, values, n, rng):
        L = len(self.levels)
        base = np.array([float(self.baseline.get(lev, 0.0)) if isinstance(self.baseline, Mapping)
                         else float(self.baseline) for lev in self.levels])
        u = rng.random(n)
        out_index = {lev: i for i, lev in enumerate(self.levels)}
        factor_parts, numeric_logits = [], np.zeros((n, L)) if self._numeric_parents(values) else None
        for parent in self.parents:
            pv = values[parent]
            entries = {(lev, plev): w for lev, table in self.coefficients.items()
                       for (p, plev), w in table.items() if p == parent}
            if pv.dtype.kind in "OUS":
                plevels, codes = np.unique(pv, return_inverse=True)
                index = {str(v): i for i, v in enumerate(plevels)}
                W = np.zeros((len(plevels), L))
                for (lev, plev), w in entries.items():
                    if plev in index:
                        W[index[plev], out_index[lev]] = w
                factor_parts.append((codes, W))
            else:
                slopes = np.array([entries.get((lev, None), 0.0) for lev in self.levels])
                numeric_logits += np.outer(pv.astype(float), slopes)
        idx = np.empty(n, dtype=int)
        if numeric_logits is None:
            # rows sharing all factor-parent levels share one distribution
            if factor_parts:
                combos, group = np.unique(np.stack([c for c, _ in factor_parts]), axis=1,
                                          return_inverse=True)
                group = group.ravel()
            else:
                combos, group = np.zeros((0, 1), dtype=int), np.zeros(n, dtype=int)
            order = np.argsort(group, kind="stable")
            bounds = np.searchsorted(group[order], np.arange(combos.shape[1] + 1))
            for g in range(combos.shape[1]):
                rows = order[bounds[g]:bounds[g + 1]]
                logits = base + sum(W[combos[i, g]] for i, (_, W) in enumerate(factor_parts))
                idx[rows] = self._pick(logits[None, :], u[rows])
        else:
            logits = base + numeric_logits
            for codes, W in factor_parts:
                logits += W[codes]
            idx = self._pick(logits, u)
        return np.asarray(self.levels, dtype=object)[idx]

    def _numeric_parents(self, values):
        return any(values[p].dtype.kind not in "OUS" for p in self.parents)

    def _pick(self, logits, u):
        if not np.all(np.isfinite(logits)):
            raise ScmError("non-finite categorical logits")
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        cum = np.cumsum(p, axis=1)
        if cum.shape[0] == 1:
            idx = np.searchsorted(cum[0], u * cum[0, -1], side="left")
        else:
            idx = (cum < (u * cum[:, -1])[:, None]).sum(axis=1)
        return np.minimum(idx, logits.shape[1] - 1)


def _parent_contribution(table, parent, pv):
    if pv.dtype.kind in "OUS":
        weights = {lev: w for (p, lev), w in table.items() if p == parent and lev is not None}
        if not weights:
            return 0.0
        return pd.Series(pv).map(weights).fillna(0.0).to_numpy(dtype=float)
    return table.get((parent, None), 0.0) * pv.astype(float)


@dataclass(frozen=True)
class Scm:
    """A DAG with one mechanism per node.

    ``row_key`` optionally names nodes whose value combination must be unique
    across sampled rows (e.g. one row per participant and challenge).
    """

    dag: Dag
    mechanisms: Mapping[str, Mechanism]
    row_key: tuple[str, ...] = ()

    def __post_init__(self):
        missing = [n for n in self.dag.nodes if n not in self.mechanisms]
        extra = [n for n in self.mechanisms if n not in self.dag.nodes]
        if missing or extra:
            raise ScmError(f"mechanism/DAG mismatch: missing {missing}, extra {extra}")
        for node in self.dag.nodes:
            mech = self.mechanisms[node]
            if set(mech.parents) != set(self.dag.parents(node)):
                raise ScmError(f"mechanism parents of {node!r} {sorted(mech.parents)} differ "
                               f"from DAG parents {sorted(self.dag.parents(node))}")
        for k in self.row_key:
            if k not in self.dag.nodes:
                raise ScmError(f"row key node {k!r} not in DAG")

    @property
    def levels(self) -> dict[str, tuple[str, ...]]:
        return {n: m.levels for n, m in self.mechanisms.items() if m.kind == CATEGORICAL}


@dataclass(frozen=True)
class Intervention:
    assignments: Mapping[str, object]


def _draw_nodes(scm, nodes, n, rng, values):
    for node in nodes:
        values[node] = scm.mechanisms[node].draw(values, n, rng)
    return values


def sample(scm: Scm, n: int, seed: int, include_latent: bool = False,
           distinct: bool | None = None) -> Dataset:
    """Ancestral sampling of `n` rows; a pure function of (scm, n, seed).

    When the Scm declares a ``row_key`` and `distinct` is not False, key
    combinations already drawn are rejected and redrawn, so keys are unique.
    """
    if n < 1:
        raise ScmError("n must be at least 1")
    rng = np.random.default_rng(seed)
    order = scm.dag.topological_order()
    use_key = bool(scm.row_key) and distinct is not False
    if use_key:
        values = _sample_distinct_keys(scm, n, rng)
        rest = [v for v in order if v not in values]
    else:
        values, rest = {}, list(order)
    _draw_nodes(scm, rest, n, rng, values)
    keep = [v for v in order if include_latent or v not in scm.dag.latent]
    frame = pd.DataFrame({v: values[v] for v in keep})
    kinds = {v: scm.mechanisms[v].output_kind for v in keep}
    return Dataset(frame, kinds)


def _sample_distinct_keys(scm, n, rng):
    key = scm.row_key
    closure = set(key)
    for k in key:
        closure |= scm.dag.ancestors(k)
    nodes = [v for v in scm.dag.topological_order() if v in closure]
    space = 1
    for k in key:
        mech = scm.mechanisms[k]
        if mech.kind != CATEGORICAL and mech.value is None:
            raise ScmError(f"row key node {k!r} must be categorical")
        space *= len(mech.levels) if mech.kind == CATEGORICAL else 1
    if n > space:
        raise ScmError(f"cannot draw {n} distinct keys from {space} combinations")
    chunks = {v: [] for v in nodes}
    seen = set()
    count, stalls = 0, 0
    while count < n:
        batch = max(2 * (n - count), n // 4, 256)
        vals = _draw_nodes(scm, nodes, batch, rng, {})
        keys = list(zip(*(vals[k] for k in key)))
        take = []
        for i, kv in enumerate(keys):
            if kv not in seen:
                seen.add(kv)
                take.append(i)
                if count + len(take) == n:
                    break
        stalls = stalls + 1 if not take else 0
        if stalls > 50:
            raise ScmError("row key space exhausted while sampling")
        for v in nodes:
            chunks[v].append(vals[v][take])
        count += len(take)
    return {v: np.concatenate(chunks[v]) for v in nodes}


def intervene(scm: Scm, iv: Intervention | Mapping[str, object]) -> Scm:
    """Graph surgery: cut incoming edges of each assigned node and fix its value."""
    assignments = iv.assignments if isinstance(iv, Intervention) else dict(iv)
    mechanisms = dict(scm.mechanisms)
    cut = []
    for node, value in assignments.items():
        if node not in scm.mechanisms:
            raise ScmError(f"intervention on unknown node {node!r}")
        mech = scm.mechanisms[node]
        kind = mech.output_kind
        if kind == FACTOR:
            if mech.kind == CATEGORICAL and value not in mech.levels:
                raise ScmError(f"{value!r} is not a level of {node!r}")
            value = str(value)
        else:
            try:
                value = float(value)
            except (TypeError, ValueError):
                raise ScmError(f"{node!r} needs a numeric value, got {value!r}") from None
        mechanisms[node] = Mechanism.point_mass(value, kind)
        cut += [(p, node) for p in scm.dag.parents(node)]
    return Scm(scm.dag.without_edges(cut), mechanisms, scm.row_key)


def language_effects_mc(scm: Scm, languages, n: int, seed: int,
                        treatment: str = "language", outcome: str = "rank"):
    """Centered interventional log-mean outcome per level and Monte Carlo standard errors.

    All levels share the seed, so contrasts use common random numbers.
    """
    for node in (treatment, outcome):
        if node not in scm.dag.nodes:
            raise ScmError(f"Scm has no node {node!r}")
    if n < 1000:
        raise ScmError("n must be at least 1000")
    raw, se = {}, {}
    for lev in languages:
        data = sample(intervene(scm, {treatment: lev}), n, seed, distinct=False)
        y = data.column(outcome).astype(float)
        m = y.mean()
        raw[lev] = float(np.log(m))
        se[lev] = float(y.std(ddof=1) / (np.sqrt(n) * m))
    centre = float(np.mean(list(raw.values())))
    return {lev: v - centre for lev, v in raw.items()}, se


def true_language_effects(scm: Scm, languages, n: int, seed: int) -> dict[str, float]:
    """Ground-truth centered effects of each language on the log-mean rank."""
    return language_effects_mc(scm, languages, n, seed)[0]


# --------------------------------------------------------------------------
# Code Jam generative model


@dataclass(frozen=True)
class CodeJamParams:
    """Coefficient bundle for the Code Jam Scm; all effects are on the log scale."""

    n_nicknames: int = 600
    first_year: int = 2008
    n_years: int = 8
    n_rounds: int = 6
    languages: tuple = ("Cpp", "Java", "Python")
    language_shares: tuple = (0.55, 0.25, 0.20)
    stickiness: float = 0.9
    language_skill_confounding: float = 0.6
    selection_sd: float = 1.0
    skill_nickname_sd: float = 0.7
    skill_challenge_sd: float = 0.4
    skill_noise_sd: float = 1.0
    rank_baseline: float = 5.7
    rank_language_effects: tuple = (-0.2, 0.0, 0.2)
    rank_skill_weight: float = -0.8
    rank_challenge_sd: float = 0.5
    rank_phi: float = 3.0
    size_baseline: float = 7.5
    size_language_effects: tuple = (0.0, 0.5, -0.7)
    size_nickname_sd: float = 0.3
    size_skill_weight: float = 0.6
    size_sigma: float = 0.35
    structure_seed: int = 20240101

    def __post_init__(self):
        for name in ("n_nicknames", "n_years", "n_rounds"):
            if getattr(self, name) < 1:
                raise ScmError(f"{name} must be positive")
        L = len(self.languages)
        if L < 2:
            raise ScmError("need at least two languages")
        for name in ("language_shares", "rank_language_effects", "size_language_effects"):
            if len(getattr(self, name)) != L:
                raise ScmError(f"{name} needs one entry per language")
        if not 0 <= self.stickiness <= 1:
            raise ScmError("stickiness must lie in [0, 1]")
        for name in ("rank_phi", "size_sigma", "skill_noise_sd"):
            if not getattr(self, name) > 0:
                raise ScmError(f"{name} must be positive")

    @property
    def challenges(self) -> tuple[str, ...]:
        return tuple(f"{self.first_year + y}-{r + 1}"
                     for y in range(self.n_years) for r in range(self.n_rounds))

    @property
    def nicknames(self) -> tuple[str, ...]:
        width = len(str(self.n_nicknames))
        return tuple(f"p{i:0{width}d}" for i in range(self.n_nicknames))

    def true_centered_rank_effects(self) -> dict[str, float]:
        eff = np.asarray(self.rank_language_effects, dtype=float)
        return dict(zip(self.languages, map(float, eff - eff.mean())))

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {','.join(map(str, v)) if isinstance(v, tuple) else v}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {f.name: list(v) if isinstance(v := getattr(self, f.name), tuple) else v
                for f in dataclasses.fields(self)}

    @classmethod
    def from_text(cls, text: str) -> "CodeJamParams":
        defaults = cls()
        kw = {}
        names = {f.name for f in dataclasses.fields(cls)}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ScmError(f"line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in names:
                raise ScmError(f"line {lineno}: unknown key {key!r}")
            kw[key] = _coerce(getattr(defaults, key), value)
        return cls(**kw)


def _coerce(default, text):
    if isinstance(default, tuple):
        items = [s.strip() for s in text.split(",") if s.strip()]
        if default and isinstance(default[0], str):
            return tuple(items)
        return tuple(float(s) for s in items)
    if isinstance(default, bool):
        return text.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(text)
    return float(text)


def load_dag_fixture(variant: str) -> Dag:
    if variant not in DAG_VARIANTS:
        raise ScmError(f"unknown DAG variant {variant!r}; expected one of {DAG_VARIANTS}")
    return parse_dag(dag_fixture_text(variant))


def dag_fixture_text(variant: str) -> str:
    if variant not in DAG_VARIANTS:
        raise ScmError(f"unknown DAG variant {variant!r}; expected one of {DAG_VARIANTS}")
    return resources.files("cjcausal").joinpath("data", f"{variant}.dag").read_text()


def codejam_scm(params: CodeJamParams | None = None, variant: str = "d2") -> Scm:
    """Scm over challenge, nickname, skill (latent), language, size and rank.

    Per-nickname and per-challenge coefficients are drawn once from
    ``params.structure_seed``; sampling randomness is separate.
    """
    p = params or CodeJamParams()
    dag = load_dag_fixture(variant)
    rng = np.random.default_rng(p.structure_seed)
    challenges, nicknames, langs = p.challenges, p.nicknames, tuple(p.languages)
    N, C, L = len(nicknames), len(challenges), len(langs)

    skill_nick = rng.normal(0.0, p.skill_nickname_sd, N)
    skill_chal = rng.normal(0.0, p.skill_challenge_sd, C)
    rank_chal = rng.normal(0.0, p.rank_challenge_sd, C)
    size_nick = rng.normal(0.0, p.size_nickname_sd, N)
    activity = rng.normal(0.0, 1.0, N)
    selection = rng.normal(0.0, p.selection_sd, (C, N))

    # preferred language: population shares tilted by skill (skilled players lean to the first language)
    tilt = np.linspace(1.0, -1.0, L) * p.language_skill_confounding
    pref_logits = np.log(np.asarray(p.language_shares))[None, :] + np.outer(skill_nick, tilt)
    pref_p = np.exp(pref_logits - pref_logits.max(axis=1, keepdims=True))
    pref_p /= pref_p.sum(axis=1, keepdims=True)
    preferred = np.array([rng.choice(L, p=row) for row in pref_p])

    mechs = {}
    mechs["challenge"] = Mechanism(CATEGORICAL, levels=challenges,
                                   baseline={c: 0.0 for c in challenges})
    mechs["nickname"] = Mechanism(
        CATEGORICAL, parents=("challenge",), levels=nicknames,
        baseline={nk: float(activity[j]) for j, nk in enumerate(nicknames)},
        coefficients={nk: {("challenge", c): float(selection[i, j]) for i, c in enumerate(challenges)}
                      for j, nk in enumerate(nicknames)})

    stay = np.log(p.stickiness * (L - 1) / max(1.0 - p.stickiness, 1e-12))
    mechs["language"] = Mechanism(
        CATEGORICAL, parents=("nickname",), levels=langs, baseline={lev: 0.0 for lev in langs},
        coefficients={lev: {("nickname", nk): float(stay) for j, nk in enumerate(nicknames)
                            if preferred[j] == k}
                      for k, lev in enumerate(langs)})

    skill_coef = {("nickname", nk): float(skill_nick[j]) for j, nk in enumerate(nicknames)}
    skill_coef.update({("challenge", c): float(skill_chal[i]) for i, c in enumerate(challenges)})
    mechs["skill"] = Mechanism(GAUSSIAN, parents=dag.parents("skill"), coefficients=skill_coef,
                               noise=p.skill_noise_sd)

    size_coef = {("language", lev): float(e) for lev, e in zip(langs, p.size_language_effects)}
    if "nickname" in dag.parents("size"):
        size_coef.update({("nickname", nk): float(size_nick[j]) for j, nk in enumerate(nicknames)})
    if "skill" in dag.parents("size"):
        size_coef[("skill", None)] = p.size_skill_weight
    mechs["size"] = Mechanism(LOGNORMAL, parents=dag.parents("size"), baseline=p.size_baseline,
                              coefficients=size_coef, noise=p.size_sigma, integer=True, min_value=1.0)

    rank_coef = {("language", lev): float(e) for lev, e in zip(langs, p.rank_language_effects)}
    rank_coef.update({("challenge", c): float(rank_chal[i]) for i, c in enumerate(challenges)})
    rank_coef[("skill", None)] = p.rank_skill_weight
    mechs["rank"] = Mechanism(NEGBIN, parents=dag.parents("rank"), baseline=p.rank_baseline,
                              coefficients=rank_coef, noise=p.rank_phi, min_value=1.0)
    return Scm(dag, mechs, row_key=("challenge", "nickname"))
