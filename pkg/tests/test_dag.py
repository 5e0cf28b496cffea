import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cjcausal.dag import (BACKWARD, FORWARD, CondIndep, CycleError, Dag, DagError, DagSyntaxError,
                          Path, adjustment_sets, backdoor_paths, classify_path, d_separated,
                          enumerate_paths, implied_independencies, is_valid_adjustment, parse_dag)
from cjcausal.scm import load_dag_fixture

from oracles import (all_paths_closed, brute_adjustment_sets, moral_dsep, permutation_paths,
                     random_dag)

# the 14 language -> rank paths of d2, lettered A..N
D2_PATHS = {
    "A": "language -> rank",
    "B": "language -> size <- nickname -> skill -> rank",
    "C": "language -> size <- nickname -> skill <- challenge -> rank",
    "D": "language -> size <- nickname <- challenge -> rank",
    "E": "language -> size <- nickname <- challenge -> skill -> rank",
    "F": "language -> size <- skill -> rank",
    "G": "language -> size <- skill <- challenge -> rank",
    "H": "language -> size <- skill <- nickname <- challenge -> rank",
    "I": "language <- nickname -> size <- skill -> rank",
    "J": "language <- nickname -> size <- skill <- challenge -> rank",
    "K": "language <- nickname -> skill -> rank",
    "L": "language <- nickname -> skill <- challenge -> rank",
    "M": "language <- nickname <- challenge -> rank",
    "N": "language <- nickname <- challenge -> skill -> rank",
}


@pytest.fixture(scope="module")
def d2():
    return load_dag_fixture("d2")


def path_from_text(text):
    toks = text.split()
    return Path(tuple(toks[::2]), tuple(toks[1::2]))


# ---------------------------------------------------------------- parsing


def test_parse_minimal():
    dag = parse_dag("nickname -> language\nlanguage -> rank")
    assert dag.nodes == ("nickname", "language", "rank")
    assert dag.edges == {("nickname", "language"), ("language", "rank")}
    assert not dag.latent


def test_parse_d2_fixture(d2):
    assert len(d2.nodes) == 6
    assert len(d2.edges) == 10
    assert d2.latent == {"skill"}
    assert {("nickname", "size"), ("skill", "size"), ("language", "size")} <= d2.edges


def test_fixture_variants_differ_in_size_parents():
    d0, d1 = load_dag_fixture("d0"), load_dag_fixture("d1")
    assert ("nickname", "size") in d0.edges and ("skill", "size") not in d0.edges
    assert ("skill", "size") in d1.edges and ("nickname", "size") not in d1.edges


def test_cycle_rejected():
    with pytest.raises(CycleError):
        parse_dag("a -> b\nb -> a")
    with pytest.raises(CycleError):
        Dag(["a", "b", "c"], [("a", "b"), ("b", "c"), ("c", "a")])


@pytest.mark.parametrize("text, line", [
    ("a -> b\na => c", 2),
    ("a -> b\n\n  a -> 9x", 3),
    ("a -> b\nlatent zz", 2),
    ("a -> b\na -> b", 2),
    ("a -> a", 1),
])
def test_syntax_errors_report_line(text, line):
    with pytest.raises(DagSyntaxError) as err:
        parse_dag(text)
    assert err.value.line == line
    assert err.value.column >= 1


def test_comments_and_roundtrip(d2):
    assert parse_dag(d2.to_dsl()) == d2
    assert parse_dag("# header\na -> b  # trailing\n") == Dag(["a", "b"], [("a", "b")])


def test_dag_invariants():
    with pytest.raises(DagError):
        Dag(["a"], [("a", "b")])
    with pytest.raises(DagError):
        Dag(["a", "b"], [("a", "b"), ("a", "b")])
    with pytest.raises(DagError):
        Dag(["a"], [("a", "a")])


# ---------------------------------------------------------------- paths


def test_d2_has_the_fourteen_paths(d2):
    paths = enumerate_paths(d2, "language", "rank")
    assert {str(p) for p in paths} == set(D2_PATHS.values())
    assert len(paths) == 14
    assert [p.nodes for p in paths] == sorted(p.nodes for p in paths)


def test_d2_backdoor_paths_are_i_to_n(d2):
    bd = {str(p) for p in backdoor_paths(d2, "language", "rank")}
    assert bd == {D2_PATHS[k] for k in "IJKLMN"}


def test_chain_has_one_path():
    dag = parse_dag("x -> y\ny -> z")
    assert [p.nodes for p in enumerate_paths(dag, "x", "z")] == [("x", "y", "z")]


def test_single_edge_has_no_backdoor():
    assert backdoor_paths(parse_dag("x -> y"), "x", "y") == []


def test_unknown_node_errors(d2):
    with pytest.raises(DagError):
        enumerate_paths(d2, "language", "nope")
    with pytest.raises(DagError):
        d_separated(d2, "nope", "rank")


def test_path_validation(d2):
    with pytest.raises(DagError):
        path_from_text("language -> nickname").validate(d2)
    with pytest.raises(DagError):
        Path(("a", "b", "a"), (FORWARD, BACKWARD))


def test_classify_path_j(d2):
    j = path_from_text(D2_PATHS["J"])
    c = classify_path(j, d2, set())
    assert (c.kind, c.status) == ("backdoor", "closed")
    assert "size" in c.blockers
    assert classify_path(j, d2, {"size"}).status == "open"
    closed = classify_path(j, d2, {"nickname"})
    assert closed.status == "closed" and "nickname" in closed.blockers
    with pytest.raises(DagError):
        classify_path(j, d2, {"language"})


def test_causal_path_kind(d2):
    assert classify_path(path_from_text(D2_PATHS["A"]), d2).kind == "causal"


@pytest.mark.parametrize("seed", range(30))
def test_paths_match_permutation_oracle(seed):
    rng = np.random.default_rng(seed)
    dag = random_dag(rng, int(rng.integers(3, 7)))
    for x, y in itertools.permutations(dag.nodes, 2):
        paths = enumerate_paths(dag, x, y)
        assert {p.nodes for p in paths} == permutation_paths(dag, x, y)
        for p in paths:
            p.validate(dag)
            assert len(set(p.nodes)) == len(p.nodes)
        assert [p.nodes for p in backdoor_paths(dag, x, y)] == \
            [p.nodes for p in paths if p.directions[0] == BACKWARD]


# ---------------------------------------------------------------- d-separation


def test_d2_separation_facts(d2):
    assert d_separated(d2, "language", "challenge", {"nickname"})
    assert not d_separated(d2, "size", "challenge", {"nickname"})
    d0 = load_dag_fixture("d0")
    assert d_separated(d0, "size", "challenge", {"nickname"})
    assert d_separated(d0, "rank", "size", {"nickname", "language"})


@pytest.mark.parametrize("seed", range(20))
def test_dsep_matches_both_oracles(seed):
    rng = np.random.default_rng(1000 + seed)
    dag = random_dag(rng, int(rng.integers(3, 7)))
    for x, y in itertools.combinations(dag.nodes, 2):
        rest = [v for v in dag.nodes if v not in (x, y)]
        for k in range(len(rest) + 1):
            for z in itertools.combinations(rest, k):
                got = d_separated(dag, x, y, z)
                assert got == all_paths_closed(dag, x, y, z)
                assert got == moral_dsep(dag, x, y, z)
                assert got == d_separated(dag, y, x, z)


# ---------------------------------------------------------------- independencies


def test_testable_independencies_of_fixtures():
    eq1 = CondIndep("language", "challenge", {"nickname"})
    eq2 = CondIndep("size", "challenge", {"nickname"})
    eq3 = CondIndep("rank", "size", {"nickname", "language"})
    for v in ("d1", "d2"):
        assert implied_independencies(load_dag_fixture(v), testable_only=True) == [eq1]
    assert set(implied_independencies(load_dag_fixture("d0"), testable_only=True)) == {eq1, eq2, eq3}


def test_chain_independence():
    dag = parse_dag("x -> y\ny -> z")
    assert implied_independencies(dag) == [CondIndep("x", "z", {"y"})]


def test_untestable_statements_mention_latents(d2):
    testable = implied_independencies(d2, testable_only=True)
    assert any(s.variables() & d2.latent for s in implied_independencies(d2))
    for s in testable:
        assert not (s.variables() & d2.latent)


def test_condindep_symmetric():
    a = CondIndep("x", "y", {"z"})
    b = CondIndep("y", "x", ["z"])
    assert a == b and hash(a) == hash(b)
    with pytest.raises(DagError):
        CondIndep("x", "x")
    with pytest.raises(DagError):
        CondIndep("x", "y", {"x"})


@pytest.mark.parametrize("seed", range(15))
def test_independencies_use_minimal_separators(seed):
    rng = np.random.default_rng(2000 + seed)
    dag = random_dag(rng, int(rng.integers(3, 7)))
    stmts = implied_independencies(dag)
    assert stmts == sorted(set(stmts), key=CondIndep.sort_key)
    covered = {frozenset((s.x, s.y)) for s in stmts}
    for a, b in itertools.combinations(dag.nodes, 2):
        rest = [v for v in dag.nodes if v not in (a, b)]
        seps = [set(z) for k in range(len(rest) + 1)
                for z in itertools.combinations(rest, k) if moral_dsep(dag, a, b, z)]
        assert (frozenset((a, b)) in covered) == bool(seps)
    for s in stmts:
        assert moral_dsep(dag, s.x, s.y, s.given)
        rest = [v for v in dag.nodes if v not in (s.x, s.y)]
        smaller = [z for k in range(len(s.given)) for z in itertools.combinations(rest, k)]
        assert not any(moral_dsep(dag, s.x, s.y, z) for z in smaller)


# ---------------------------------------------------------------- adjustment


def test_d2_adjustment_sets(d2):
    rep = adjustment_sets(d2, "language", "rank")
    assert set(rep.all_valid) == {frozenset({"nickname"}), frozenset({"nickname", "challenge"})}
    assert list(rep.minimal) == [frozenset({"nickname"})]
    assert all("size" not in z for z in rep.all_valid)


def test_single_edge_adjustment():
    rep = adjustment_sets(parse_dag("x -> y"), "x", "y")
    assert frozenset() in rep.all_valid
    assert rep.minimal == (frozenset(),)


@pytest.mark.parametrize("seed", range(25))
def test_adjustment_matches_subset_oracle(seed):
    rng = np.random.default_rng(3000 + seed)
    n = int(rng.integers(3, 9))
    dag = random_dag(rng, n, n_latent=int(rng.integers(0, 2)))
    for x, y in itertools.permutations(dag.nodes, 2):
        if x in dag.latent or y in dag.latent:
            continue
        rep = adjustment_sets(dag, x, y)
        assert set(rep.all_valid) == brute_adjustment_sets(dag, x, y)
        bd = backdoor_paths(dag, x, y)
        forbidden = {x, y} | dag.descendants(x) | dag.latent
        for z in rep.all_valid:
            assert not (z & forbidden)
            assert all(classify_path(p, dag, z).status == "closed" for p in bd)
        for z in rep.minimal:
            assert z in rep.all_valid
            assert not any(o < z for o in rep.all_valid)
            for v in z:
                assert any(classify_path(p, dag, z - {v}).status == "open" for p in bd)
        pool = [v for v in dag.nodes if v not in forbidden]
        for k in range(len(pool) + 1):
            for z in map(frozenset, itertools.combinations(pool, k)):
                if z not in rep.all_valid:
                    assert any(classify_path(p, dag, z).status == "open" for p in bd)
                assert is_valid_adjustment(dag, x, y, z) == (z in rep.all_valid)


# ---------------------------------------------------------------- properties


@st.composite
def dags(draw, max_nodes=6):
    n = draw(st.integers(2, max_nodes))
    perm = draw(st.permutations(range(n)))
    names = [f"n{i}" for i in range(n)]
    edges = [(names[perm[i]], names[perm[j]])
             for i in range(n) for j in range(i + 1, n) if draw(st.booleans())]
    return Dag(names, edges)


@settings(max_examples=60, deadline=None)
@given(dags(), st.data())
def test_property_dsep_symmetry_and_oracle(dag, data):
    x, y = data.draw(st.permutations(dag.nodes))[:2]
    rest = [v for v in dag.nodes if v not in (x, y)]
    z = data.draw(st.sets(st.sampled_from(rest)) if rest else st.just(set()))
    assert d_separated(dag, x, y, z) == d_separated(dag, y, x, z) == moral_dsep(dag, x, y, z)


@settings(max_examples=60, deadline=None)
@given(dags())
def test_property_topological_order(dag):
    order = {v: i for i, v in enumerate(dag.topological_order())}
    assert set(order) == set(dag.nodes)
    assert all(order[a] < order[b] for a, b in dag.edges)


@settings(max_examples=40, deadline=None)
@given(dags(max_nodes=5))
def test_property_adding_back_edge_makes_cycle(dag):
    for a, b in dag.edges:
        if b in dag.descendants(a):
            with pytest.raises(CycleError):
                Dag(dag.nodes, list(dag.edges) + [(b, a)])
            break
