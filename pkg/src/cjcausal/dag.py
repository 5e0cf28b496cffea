"""Causal DAGs: parsing, path analysis, d-separation and backdoor adjustment."""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable

FORWARD = "->"
BACKWARD = "<-"

_NAME = r"[A-Za-z_][A-Za-z0-9_]*"
_EDGE_RE = re.compile(rf"^({_NAME})\s*->\s*({_NAME})$")
_LATENT_RE = re.compile(rf"^latent\s+({_NAME})$")

MAX_ADJUSTMENT_CANDIDATES = 20


class DagError(ValueError):
    """Raised for malformed graphs or invalid graph queries."""


class CycleError(DagError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("edge set contains the cycle " + " -> ".join(self.cycle))


class DagSyntaxError(DagError):
    def __init__(self, message, line, column):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class Dag:
    """Immutable directed acyclic graph with optional latent (unobserved) nodes.

    Node order is insertion order; it is used for deterministic output and for
    orienting conditional independence statements.
    """

    __slots__ = ("_nodes", "_latent", "_edges", "_parents", "_children", "_index", "_topo")

    def __init__(self, nodes: Iterable[str] = (), edges: Iterable[tuple[str, str]] = (),
                 latent: Iterable[str] = ()):
        node_list = list(dict.fromkeys(nodes))
        edge_list = list(edges)
        seen_edges = set()
        for a, b in edge_list:
            for n in (a, b):
                if n not in node_list:
                    raise DagError(f"edge ({a}, {b}) references undeclared node {n!r}")
            if a == b:
                raise DagError(f"self-loop on {a!r}")
            if (a, b) in seen_edges:
                raise DagError(f"duplicate edge {a} -> {b}")
            seen_edges.add((a, b))
        latent_set = frozenset(latent)
        unknown = latent_set.difference(node_list)
        if unknown:
            raise DagError(f"latent declaration for unknown node(s): {sorted(unknown)}")

        self._nodes = tuple(node_list)
        self._index = {n: i for i, n in enumerate(self._nodes)}
        self._latent = latent_set
        self._edges = frozenset(seen_edges)
        parents = {n: [] for n in self._nodes}
        children = {n: [] for n in self._nodes}
        for a, b in edge_list:
            parents[b].append(a)
            children[a].append(b)
        self._parents = {n: tuple(sorted(p, key=self._index.get)) for n, p in parents.items()}
        self._children = {n: tuple(sorted(c, key=self._index.get)) for n, c in children.items()}
        self._topo = self._toposort()

    def _toposort(self):
        indegree = {n: len(self._parents[n]) for n in self._nodes}
        ready = [n for n in self._nodes if indegree[n] == 0]
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in self._children[n]:
                indegree[c] -= 1
                if indegree[c] == 0:
                    ready.append(c)
        if len(order) != len(self._nodes):
            raise CycleError(self._find_cycle(set(self._nodes) - set(order)))
        return tuple(order)

    def _find_cycle(self, remaining):
        # every node left after Kahn's algorithm has a parent inside `remaining`
        start = min(remaining, key=self._index.get)
        trail, node = [], start
        while node not in trail:
            trail.append(node)
            node = next(p for p in self._parents[node] if p in remaining)
        cycle = trail[trail.index(node):]
        cycle.reverse()
        return cycle + [cycle[0]]

    @property
    def nodes(self) -> tuple[str, ...]:
        return self._nodes

    @property
    def edges(self) -> frozenset[tuple[str, str]]:
        return self._edges

    @property
    def latent(self) -> frozenset[str]:
        return self._latent

    @property
    def observed(self) -> tuple[str, ...]:
        return tuple(n for n in self._nodes if n not in self._latent)

    def topological_order(self) -> tuple[str, ...]:
        return self._topo

    def parents(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._parents[node]

    def children(self, node: str) -> tuple[str, ...]:
        self._check(node)
        return self._children[node]

    def has_edge(self, a: str, b: str) -> bool:
        return (a, b) in self._edges

    def adjacent(self, a: str, b: str) -> bool:
        return (a, b) in self._edges or (b, a) in self._edges

    def descendants(self, node: str) -> frozenset[str]:
        """Strict descendants of `node`."""
        self._check(node)
        out, stack = set(), list(self._children[node])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._children[n])
        return frozenset(out)

    def ancestors(self, node: str) -> frozenset[str]:
        self._check(node)
        out, stack = set(), list(self._parents[node])
        while stack:
            n = stack.pop()
            if n not in out:
                out.add(n)
                stack.extend(self._parents[n])
        return frozenset(out)

    def order_key(self, node: str) -> int:
        return self._index[node]

    def without_edges(self, edges: Iterable[tuple[str, str]]) -> "Dag":
        drop = set(edges)
        kept = [e for e in self._sorted_edges() if e not in drop]
        return Dag(self._nodes, kept, self._latent)

    def _sorted_edges(self):
        return sorted(self._edges, key=lambda e: (self._index[e[0]], self._index[e[1]]))

    def _check(self, *nodes):
        for n in nodes:
            if n not in self._index:
                raise DagError(f"unknown node {n!r}")

    def to_dsl(self) -> str:
        lines = [f"{a} -> {b}" for a, b in self._sorted_edges()]
        lines += [f"latent {n}" for n in self._nodes if n in self._latent]
        isolated = [n for n in self._nodes
                    if not self._parents[n] and not self._children[n]]
        if isolated:
            raise DagError(f"isolated nodes cannot be written in the DSL: {isolated}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return (set(self._nodes) == set(other._nodes) and self._edges == other._edges
                and self._latent == other._latent)

    def __hash__(self):
        return hash((frozenset(self._nodes), self._edges, self._latent))

    def __repr__(self):
        return f"Dag(nodes={list(self._nodes)}, edges={len(self._edges)}, latent={sorted(self._latent)})"


def parse_dag(text: str) -> Dag:
    """Parse the line-oriented DAG DSL.

    Lines are ``a -> b`` edges or ``latent name`` declarations; ``#`` starts a
    comment. Nodes are declared on first mention.
    """
    nodes: list[str] = []
    edges: list[tuple[str, str]] = []
    latent: list[tuple[str, int]] = []
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        stripped = line.strip()
        if not stripped:
            continue
        col = len(line) - len(line.lstrip()) + 1
        m = _LATENT_RE.match(stripped)
        if m:
            latent.append((m.group(1), lineno))
            continue
        m = _EDGE_RE.match(stripped)
        if not m:
            raise DagSyntaxError(_describe_syntax_error(stripped), lineno, col + _error_offset(stripped))
        a, b = m.group(1), m.group(2)
        if (a, b) in seen:
            raise DagSyntaxError(f"duplicate edge {a} -> {b}", lineno, col)
        if a == b:
            raise DagSyntaxError(f"self-loop on {a!r}", lineno, col)
        seen.add((a, b))
        for n in (a, b):
            if n not in nodes:
                nodes.append(n)
        edges.append((a, b))
    for name, lineno in latent:
        if name not in nodes:
            raise DagSyntaxError(f"latent declaration for unknown node {name!r}", lineno, 1)
    return Dag(nodes, edges, [n for n, _ in latent])


def _describe_syntax_error(line):
    if "->" not in line:
        return f"expected '<name> -> <name>' or 'latent <name>', got {line!r}"
    return f"invalid node name in {line!r}"


def _error_offset(line):
    # column of the first character that cannot start/continue a valid edge
    m = re.match(rf"{_NAME}\s*(->\s*)?({_NAME})?", line)
    return m.end() if m else 0


@dataclass(frozen=True)
class Path:
    """Simple path; ``directions[i]`` orients the edge between nodes i and i+1."""

    nodes: tuple[str, ...]
    directions: tuple[str, ...]

    def __post_init__(self):
        if len(self.nodes) < 2:
            raise DagError("a path needs at least one edge")
        if len(set(self.nodes)) != len(self.nodes):
            raise DagError(f"path repeats a node: {self.nodes}")
        if len(self.directions) != len(self.nodes) - 1:
            raise DagError("directions must have one entry per edge")

    @property
    def start(self):
        return self.nodes[0]

    @property
    def end(self):
        return self.nodes[-1]

    def colliders(self) -> tuple[str, ...]:
        return tuple(self.nodes[i] for i in range(1, len(self.nodes) - 1)
                     if self.directions[i - 1] == FORWARD and self.directions[i] == BACKWARD)

    def validate(self, dag: Dag) -> None:
        for i, d in enumerate(self.directions):
            a, b = self.nodes[i], self.nodes[i + 1]
            ok = dag.has_edge(a, b) if d == FORWARD else dag.has_edge(b, a)
            if not ok:
                raise DagError(f"no edge {a} {d} {b} in graph")

    def __str__(self):
        parts = [self.nodes[0]]
        for d, n in zip(self.directions, self.nodes[1:]):
            parts += [d, n]
        return " ".join(parts)


@dataclass(frozen=True)
class PathClassification:
    kind: str  # "causal" | "backdoor"
    status: str  # "open" | "closed"
    blockers: tuple[str, ...]


class CondIndep:
    """Statement ``x _||_ y | given``; equality ignores the order of x and y."""

    __slots__ = ("x", "y", "given")

    def __init__(self, x: str, y: str, given: Iterable[str] = ()):
        given = frozenset(given)
        if x == y:
            raise DagError("x and y must differ")
        if x in given or y in given:
            raise DagError("x and y may not appear in the conditioning set")
        self.x, self.y, self.given = x, y, given

    def _key(self):
        return (frozenset((self.x, self.y)), self.given)

    def __eq__(self, other):
        if not isinstance(other, CondIndep):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def variables(self) -> frozenset[str]:
        return frozenset((self.x, self.y)) | self.given

    def sort_key(self):
        return (tuple(sorted((self.x, self.y))), tuple(sorted(self.given)))

    def __repr__(self):
        z = ", ".join(sorted(self.given))
        return f"{self.x} _||_ {self.y} | {{{z}}}"

    def to_dict(self):
        return {"x": self.x, "y": self.y, "given": sorted(self.given)}


@dataclass(frozen=True)
class AdjustmentReport:
    treatment: str
    outcome: str
    all_valid: tuple[frozenset, ...]
    minimal: tuple[frozenset, ...]
    candidates: tuple[str, ...] = field(default=())

    def to_dict(self):
        return {
            "treatment": self.treatment,
            "outcome": self.outcome,
            "all_valid": [sorted(s) for s in self.all_valid],
            "minimal": [sorted(s) for s in self.minimal],
        }


def enumerate_paths(dag: Dag, x: str, y: str) -> list[Path]:
    """All simple paths between x and y ignoring direction, sorted by node sequence."""
    dag._check(x, y)
    if x == y:
        raise DagError("path endpoints must differ")
    neighbours = {
        n: [(c, FORWARD) for c in dag.children(n)] + [(p, BACKWARD) for p in dag.parents(n)]
        for n in dag.nodes
    }
    found = []

    def walk(node, trail, dirs, on_trail):
        for nxt, d in neighbours[node]:
            if nxt in on_trail:
                continue
            if nxt == y:
                found.append(Path(tuple(trail + [nxt]), tuple(dirs + [d])))
                continue
            on_trail.add(nxt)
            walk(nxt, trail + [nxt], dirs + [d], on_trail)
            on_trail.discard(nxt)

    walk(x, [x], [], {x})
    found.sort(key=lambda p: p.nodes)
    return found


def classify_path(path: Path, dag: Dag, given: Iterable[str] = ()) -> PathClassification:
    """Backdoor/causal kind and open/closed status of `path` given a conditioning set.

    A collider blocks unless it or one of its descendants is conditioned on;
    any conditioned non-collider blocks.
    """
    given = frozenset(given)
    path.validate(dag)
    if path.start in given or path.end in given:
        raise DagError("path endpoints may not be in the conditioning set")
    kind = "backdoor" if path.directions[0] == BACKWARD else "causal"
    blockers = []
    for i in range(1, len(path.nodes) - 1):
        n = path.nodes[i]
        collider = path.directions[i - 1] == FORWARD and path.directions[i] == BACKWARD
        if collider:
            if n not in given and not (dag.descendants(n) & given):
                blockers.append(n)
        elif n in given:
            blockers.append(n)
    status = "closed" if blockers else "open"
    return PathClassification(kind, status, tuple(blockers))


def backdoor_paths(dag: Dag, x: str, y: str) -> list[Path]:
    return [p for p in enumerate_paths(dag, x, y) if p.directions[0] == BACKWARD]


def d_separated(dag: Dag, x: str, y: str, given: Iterable[str] = ()) -> bool:
    """d-separation via reachability over (node, direction) states.

    Equivalent to every path between x and y being closed, without
    enumerating paths.
    """
    given = frozenset(given)
    dag._check(x, y, *given)
    if x == y:
        raise DagError("x and y must differ")
    if x in given or y in given:
        raise DagError("x and y may not be in the conditioning set")

    # nodes that are in `given` or have a descendant in it
    opens_collider = set()
    stack = list(given)
    while stack:
        n = stack.pop()
        if n not in opens_collider:
            opens_collider.add(n)
            stack.extend(dag.parents(n))

    # direction "up": arrived from a child; "down": arrived from a parent
    visited = set()
    stack = [(x, "up")]
    while stack:
        node, direction = stack.pop()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node == y:
            return False
        if direction == "up":
            if node in given:
                continue
            stack.extend((p, "up") for p in dag.parents(node))
            stack.extend((c, "down") for c in dag.children(node))
        else:
            if node not in given:
                stack.extend((c, "down") for c in dag.children(node))
            if node in opens_collider:
                stack.extend((p, "up") for p in dag.parents(node))
    return True


def _separating_set(dag, a, b, pool):
    pool = sorted(pool)
    for size in range(len(pool) + 1):
        for combo in itertools.combinations(pool, size):
            if d_separated(dag, a, b, combo):
                return frozenset(combo)
    return None


def implied_independencies(dag: Dag, testable_only: bool = False) -> list[CondIndep]:
    """One conditional independence per separable non-adjacent pair.

    The conditioning set is the smallest separating set (lexicographic
    tie-break). With `testable_only`, latent nodes are excluded from the
    statement and from the candidate conditioning sets. The later node in the
    graph's node order becomes ``x``.
    """
    nodes = dag.observed if testable_only else dag.nodes
    out = []
    for a, b in itertools.combinations(nodes, 2):
        if dag.adjacent(a, b):
            continue
        pool = [n for n in nodes if n not in (a, b)]
        z = _separating_set(dag, a, b, pool)
        if z is None:
            continue
        first, second = sorted((a, b), key=dag.order_key)
        out.append(CondIndep(second, first, z))
    out.sort(key=CondIndep.sort_key)
    return out


def adjustment_sets(dag: Dag, x: str, y: str) -> AdjustmentReport:
    """Enumerate observed covariate sets satisfying the backdoor criterion for x -> y."""
    dag._check(x, y)
    if x == y:
        raise DagError("treatment and outcome must differ")
    forbidden = {x, y} | dag.descendants(x) | dag.latent
    candidates = [n for n in dag.nodes if n not in forbidden]
    if len(candidates) > MAX_ADJUSTMENT_CANDIDATES:
        raise DagError(f"{len(candidates)} candidate nodes exceeds the enumeration bound "
                       f"of {MAX_ADJUSTMENT_CANDIDATES}")
    paths = backdoor_paths(dag, x, y)
    valid = []
    for size in range(len(candidates) + 1):
        for combo in itertools.combinations(candidates, size):
            z = frozenset(combo)
            if all(classify_path(p, dag, z).status == "closed" for p in paths):
                valid.append(z)
    minimal = [z for z in valid if not any(o < z for o in valid)]
    return AdjustmentReport(x, y, tuple(valid), tuple(minimal), tuple(candidates))


def is_valid_adjustment(dag: Dag, x: str, y: str, z: Iterable[str]) -> bool:
    z = frozenset(z)
    if z & ({x, y} | dag.descendants(x) | dag.latent):
        return False
    return all(classify_path(p, dag, z).status == "closed" for p in backdoor_paths(dag, x, y))
