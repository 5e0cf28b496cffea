import json
import warnings

import jsonschema
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cjcausal.dataset import Dataset
from cjcausal.pipeline import (CSV_COLUMNS, AnalysisConfig, DataError, FilterConfig, RawSubmission,
                               aggregate, analyze, bundled_dags, effect_rows, filter_dataset,
                               load_csv, parse_challenge, report_schema, sweep, synth, to_dataset,
                               write_csv)
from cjcausal.scm import CodeJamParams, codejam_scm, sample

from conftest import codejam_sample


def rows_of(data: Dataset):
    f = data.frame
    return [RawSubmission(c, n, l, int(s), int(r))
            for c, n, l, s, r in zip(*(f[k] for k in CSV_COLUMNS))]


def write_text(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def quiet(fn, *a, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return fn(*a, **kw)


# ---------------------------------------------------------------- CSV


def test_load_well_formed(tmp_path):
    p = write_text(tmp_path / "a.csv", "challenge,nickname,language,size,rank\n"
                   "2008-1,ann,Cpp,120,3\n2008-1,bob,Java,400,1\n\"2009-2\",\"c, d\",Python,90,7\n")
    rows, errors = load_csv(p)
    assert errors == []
    assert len(rows) == 3
    assert rows[2] == RawSubmission("2009-2", "c, d", "Python", 90, 7)


def test_load_rejects_bad_rows(tmp_path):
    p = write_text(tmp_path / "a.csv", "challenge,nickname,language,size,rank\n"
                   "2008-1,ann,Cpp,120,0\n2008-1,bob,Java,abc,1\n2008-1,cy,Java,10\n2008-2,dee,Cpp,5,2\n")
    rows, errors = load_csv(p)
    assert [r.nickname for r in rows] == ["dee"]
    assert len(errors) == 3
    assert "rank" in errors[0] and "line 2" in errors[0]
    assert "size" in errors[1]


@pytest.mark.parametrize("text", ["", "challenge,nick,language,size,rank\n2008-1,a,C,1,1\n",
                                  "challenge,nickname,language,size\n"])
def test_load_schema_errors(tmp_path, text):
    with pytest.raises(DataError):
        load_csv(write_text(tmp_path / "a.csv", text))


def test_csv_roundtrip(tmp_path, d2_data):
    p = tmp_path / "d.csv"
    write_csv(d2_data, p)
    rows, errors = load_csv(p)
    assert not errors
    assert to_dataset(rows) == d2_data


def test_raw_submission_invariants():
    with pytest.raises(DataError):
        RawSubmission("2008-1", "a", "Cpp", 0, 1)
    with pytest.raises(DataError):
        RawSubmission("2008-1", "", "Cpp", 1, 1)


# ---------------------------------------------------------------- aggregation and filtering


def test_aggregate_sums_sizes():
    rows = [RawSubmission("2008-1", "a", "Cpp", 100, 4), RawSubmission("2008-1", "a", "Cpp", 250, 4)]
    assert aggregate(rows) == [RawSubmission("2008-1", "a", "Cpp", 350, 4)]


def test_aggregate_noop_and_majority():
    rows = [RawSubmission("2008-1", "a", "Cpp", 1, 1), RawSubmission("2008-2", "a", "Java", 2, 2)]
    assert aggregate(rows) == rows
    tie = [RawSubmission("2008-1", "a", "Python", 1, 3), RawSubmission("2008-1", "a", "Java", 1, 3)]
    assert aggregate(tie)[0].language == "Java"
    maj = tie + [RawSubmission("2008-1", "a", "Python", 1, 3)]
    assert aggregate(maj)[0].language == "Python"


def test_aggregate_conflicting_ranks():
    rows = [RawSubmission("2008-1", "zed", "Cpp", 1, 5), RawSubmission("2008-1", "zed", "Cpp", 1, 7)]
    with pytest.raises(DataError, match="zed"):
        aggregate(rows)


def test_parse_challenge():
    assert parse_challenge("2015-3") == (2015, "3")
    assert parse_challenge("2015-1A") == (2015, "1A")
    for bad in ("2015", "x-1", "2015-"):
        with pytest.raises(DataError):
            parse_challenge(bad)


def test_vacuous_filter_keeps_everything(d2_data):
    rows = rows_of(d2_data)
    assert filter_dataset(rows, FilterConfig(1, 1, 10)) == d2_data


def toy_rows():
    rows = [RawSubmission(f"{y}-{r}", "vet", "Cpp", 10, 1) for y in (2010, 2011) for r in range(1, 7)]
    rows += [RawSubmission(f"2010-{r}", f"new{r}", "Java", 10, 2) for r in range(1, 7)]
    rows += [RawSubmission("2011-1", "once", "Python", 10, 3)]
    return rows


def test_experience_boundary():
    d = filter_dataset(toy_rows(), FilterConfig(2, 6, 3))
    assert d.levels("nickname") == ["vet"]
    assert len(d) == 12
    with pytest.raises(DataError):
        filter_dataset(toy_rows(), FilterConfig(3, 6, 3))
    with pytest.raises(DataError):
        filter_dataset([RawSubmission("bad", "a", "Cpp", 1, 1)], FilterConfig(1, 1, 1))


def test_top_languages():
    d = filter_dataset(toy_rows(), FilterConfig(1, 1, 1))
    assert d.levels("language") == ["Cpp"]
    # ties in language frequency are broken alphabetically
    d2 = filter_dataset(toy_rows(), FilterConfig(1, 1, 2))
    assert d2.levels("language") == ["Cpp", "Java"]


def test_filter_monotone_on_grid(d2_data):
    rows = rows_of(d2_data)
    counts = {}
    for y in range(1, 8):
        for r in range(1, 7):
            try:
                counts[y, r] = len(filter_dataset(rows, FilterConfig(y, r, 3)))
            except DataError:
                counts[y, r] = 0
    for (y, r), c in counts.items():
        if (y + 1, r) in counts:
            assert counts[y + 1, r] <= c
        if (y, r + 1) in counts:
            assert counts[y, r + 1] <= c
    assert counts[1, 1] == len(d2_data) and counts[7, 6] < counts[1, 1]


@st.composite
def raw_rows(draw):
    n = draw(st.integers(1, 60))
    return [RawSubmission(f"{draw(st.integers(2008, 2012))}-{draw(st.integers(1, 4))}",
                          f"p{draw(st.integers(0, 8))}", draw(st.sampled_from(["A", "B", "C", "D"])),
                          1, 1) for _ in range(n)]


@settings(max_examples=80, deadline=None)
@given(raw_rows(), st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.sampled_from(["y", "r", "k"]))
def test_property_filter_monotone(rows, y, r, k, which):
    def count(cfg):
        try:
            return filter_dataset(rows, cfg).frame
        except DataError:
            return None

    base = count(FilterConfig(y, r, k))
    tighter = count(FilterConfig(y + (which == "y"), r + (which == "r"), max(1, k - (which == "k"))))
    if tighter is None:
        return
    assert base is not None and len(tighter) <= len(base)
    keys = lambda f: set(map(tuple, f.to_numpy().tolist()))
    assert keys(tighter) <= keys(base)
    assert len(base) <= len(rows)


# ---------------------------------------------------------------- analysis


@pytest.fixture(scope="module")
def report(d2_data):
    return analyze(d2_data, bundled_dags(), AnalysisConfig())


def test_report_schema(report):
    blob = json.loads(report.to_json())
    jsonschema.validate(blob, report_schema())
    assert set(blob) == {"config", "dataset_summary", "models", "language_effects",
                         "model_ranking", "dag_validation", "adjustment_sets"}


def test_report_contents(report):
    le = report.language_effects
    assert le["predictive_model"] == "m4"
    assert le["causal_model"] == "m3"
    assert le["causal_candidates"] == ["m2", "m3"]
    assert [r["model"] for r in report.model_ranking["ranking"]] == ["m4", "m3", "m2", "m1"]
    assert {k: v["verdict"] for k, v in report.dag_validation.items()} == \
        {"d0": "fail", "d1": "pass", "d2": "pass"}
    assert report.adjustment_sets["d2"]["minimal"] == [["nickname"]]


def test_causal_answer_matches_truth(report):
    m3 = report.language_effects["by_model"]["m3"]
    assert m3["Cpp"]["verdict"] == "better"
    assert m3["Python"]["verdict"] == "worse"
    assert abs(m3["Java"]["estimate"]) < 3 * m3["Java"]["stderr"]


def test_collider_model_differs(report):
    assert report.verdicts("m4") != report.verdicts("m3")


def test_verdict_consistency(report):
    for effects in report.language_effects["by_model"].values():
        for e in effects.values():
            want = "better" if e["upper"] < 0 else "worse" if e["lower"] > 0 else "none"
            assert e["verdict"] == want
            assert e["lower"] <= e["estimate"] <= e["upper"]
        assert abs(sum(e["estimate"] for e in effects.values())) < 1e-10


def test_analyze_is_deterministic(report, d2_data):
    again = analyze(d2_data, bundled_dags(), AnalysisConfig())
    assert again.to_json() == report.to_json()
    assert report.config["level"] == 0.5


def test_single_language_warns():
    data = codejam_sample(0)
    one = data.subset(data.column("language") == "Cpp")
    with pytest.warns(RuntimeWarning, match="one language"):
        rep = analyze(one, None, AnalysisConfig(models=("m1", "m2")))
    assert rep.language_effects["by_model"] == {}
    jsonschema.validate(json.loads(rep.to_json()), report_schema())


def test_fit_failures_are_marked():
    data = codejam_sample(0).frame.iloc[:3000].copy()
    data["size"] = 100.0
    d = Dataset(data, codejam_sample(0).kinds)
    rep = quiet(analyze, d, None, AnalysisConfig(models=("m1", "m4")))
    assert rep.models["m4"]["error"]
    assert rep.models["m1"]["error"] is None
    assert "m4" not in rep.language_effects["by_model"]
    jsonschema.validate(json.loads(rep.to_json()), report_schema())


def test_effect_rows(report):
    rows = effect_rows(report)
    assert len(rows) == 12
    assert set(rows[0]) >= {"model", "level", "estimate", "lower", "upper", "verdict"}


def test_forward_selection_in_report():
    data = codejam_sample(1, n=4000)
    rep = quiet(analyze, data, None, AnalysisConfig(models=("m1",), forward_selection=True))
    sel = rep.model_ranking["forward_selection"]
    assert sel["steps"] and "language" in sel["selected"]


# ---------------------------------------------------------------- sweep


def test_sweep_degenerate_grid():
    data = codejam_sample(2, n=3000)
    cfg = AnalysisConfig(models=("m1", "m3"))
    cells = quiet(sweep, rows_of(data), [1], [1], cfg)
    assert len(cells) == 1
    c = cells[0]
    assert (c.index, c.years, c.rounds, c.datapoints) == (1, 1, 1, 3000)
    direct = quiet(analyze, data, None, cfg)
    assert c.effects == direct.language_effects["by_model"]


def test_sweep_table_structure():
    data = codejam_sample(3, n=3000)
    cells = quiet(sweep, rows_of(data), range(1, 8), range(1, 7), AnalysisConfig(models=("m1",)))
    counts = [c.datapoints for c in cells]
    assert counts == sorted(counts)
    assert [c.index for c in cells] == list(range(1, len(cells) + 1))
    grid = {(c.years, c.rounds): c.datapoints for c in cells}
    for (y, r), n in grid.items():
        for nxt in ((y + 1, r), (y, r + 1)):
            if nxt in grid:
                assert grid[nxt] <= n
    assert all(c.participants >= 1 for c in cells)
    with pytest.raises(DataError):
        sweep(rows_of(data), [], [1])


def test_sweep_sign_pattern_stable(d2_data):
    cells = quiet(sweep, rows_of(d2_data), [2, 3, 4], [2, 3, 4], AnalysisConfig(models=("m3",)))
    assert len(cells) == 9
    for c in cells:
        m3 = c.effects["m3"]
        assert m3["Cpp"]["verdict"] == "better" and m3["Python"]["verdict"] == "worse"


# ---------------------------------------------------------------- synth


def test_synth_roundtrip_and_recovery(tmp_path):
    paths = synth(CodeJamParams(), 20000, 0, tmp_path)
    rows, errors = load_csv(paths["data"])
    assert len(rows) == 20000 and not errors
    truth = json.loads(paths["truth"].read_text())
    assert abs(sum(truth["language_effects"].values())) < 1e-9
    assert truth["variant"] == "d2"
    assert paths["dag"].read_text().strip().startswith("#")
    assert to_dataset(rows) == sample(codejam_scm(), 20000, 0)
    rep = quiet(analyze, to_dataset(rows), None, AnalysisConfig(models=("m3",)))
    m3 = rep.language_effects["by_model"]["m3"]
    for lev, want in truth["language_effects"].items():
        assert abs(m3[lev]["estimate"] - want) < 3 * m3[lev]["stderr"]
