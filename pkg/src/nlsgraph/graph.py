"""Metric graphs with bounded edges and truncated half-lines, and sampled functions on them.

A :class:`MetricGraph` is the combinatorial/metric description. Calling
:meth:`MetricGraph.grid` with a target step ``h`` gives a :class:`GraphGrid`
where every edge carries its own uniform grid, and a :class:`GraphFunction`
stores one sample array per edge on that grid.

Edges are oriented from ``tail`` to ``head``; arclength is measured from the
tail. A half-line only has a tail (its graph-side vertex) and is cut at the
truncation length ``R`` where the function is pinned to zero.
"""

from __future__ import annotations

import csv
import io
import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping

import numpy as np

__all__ = [
    "Edge",
    "GraphSpecError",
    "MetricGraph",
    "GraphGrid",
    "GraphFunction",
    "load_graph",
    "serialize",
    "mass",
    "lp_core_norm",
    "kirchhoff_residual",
    "tadpole_graph",
]


class GraphSpecError(ValueError):
    """Raised when a graph description is malformed or violates an invariant.

    ``element`` holds the id of the offending vertex or edge, when there is one.
    """

    def __init__(self, message: str, element: str | None = None):
        self.element = element
        if element is not None:
            message = f"{message} (element {element!r})"
        super().__init__(message)


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str
    head: str | None
    length: float
    halfline: bool = False
    kappa: bool = False

    @property
    def is_loop(self) -> bool:
        return not self.halfline and self.tail == self.head

    def endpoints(self) -> tuple[str, ...]:
        return (self.tail,) if self.halfline else (self.tail, self.head)


class MetricGraph:
    """Finite metric graph with bounded edges and (truncated) half-lines.

    Parameters
    ----------
    vertices : iterable of str
        Vertex identifiers.
    edges : iterable of Edge
        Bounded edges and half-lines. ``Edge.length`` is the edge length for a
        bounded edge and the truncation length ``R`` for a half-line.
    require_core : bool
        Enforce the standing assumption of a non-trivial compact core on which
        the nonlinearity acts and at least one half-line. Compact test graphs
        (circles, intervals) are built with ``require_core=False``.
    """

    def __init__(self, vertices: Iterable[str], edges: Iterable[Edge], require_core: bool = True):
        self.vertices: tuple[str, ...] = tuple(vertices)
        self.edges: tuple[Edge, ...] = tuple(edges)
        self.require_core = require_core
        self._edge_index = {e.id: e for e in self.edges}
        self._validate()

    def _validate(self) -> None:
        if len(set(self.vertices)) != len(self.vertices):
            raise GraphSpecError("duplicate vertex id")
        if len(self._edge_index) != len(self.edges):
            raise GraphSpecError("duplicate edge id")
        if not self.vertices:
            raise GraphSpecError("graph has no vertices")
        known = set(self.vertices)
        for e in self.edges:
            if not np.isfinite(e.length):
                raise GraphSpecError("non-finite length", e.id)
            if e.length <= 0:
                kind = "truncation length" if e.halfline else "length"
                raise GraphSpecError(f"negative {kind}" if e.length < 0 else f"zero {kind}", e.id)
            if e.halfline and e.head is not None:
                raise GraphSpecError("half-line must have exactly one graph-side vertex", e.id)
            for v in e.endpoints():
                if v not in known:
                    raise GraphSpecError(f"unknown vertex {v!r}", e.id)
            if e.kappa and e.halfline:
                raise GraphSpecError("nonlinearity flag set on a half-line", e.id)
        if not self._connected():
            raise GraphSpecError("disconnected graph")
        if self.require_core:
            if not any(e.kappa for e in self.edges):
                raise GraphSpecError("empty compact core")
            if not any(e.halfline for e in self.edges):
                raise GraphSpecError("no half-line")

    def _connected(self) -> bool:
        adj: dict[str, set[str]] = defaultdict(set)
        for e in self.edges:
            ends = e.endpoints()
            for a in ends:
                adj[a].update(ends)
        seen = {self.vertices[0]}
        stack = [self.vertices[0]]
        while stack:
            for w in adj[stack.pop()]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == len(self.vertices)

    def edge(self, edge_id: str) -> Edge:
        return self._edge_index[edge_id]

    @property
    def bounded_edges(self) -> list[Edge]:
        return [e for e in self.edges if not e.halfline]

    @property
    def halflines(self) -> list[Edge]:
        return [e for e in self.edges if e.halfline]

    @property
    def core_edges(self) -> list[Edge]:
        return [e for e in self.edges if e.kappa]

    @property
    def core_length(self) -> float:
        """Total length of the edges carrying the nonlinearity."""
        return float(sum(e.length for e in self.core_edges))

    def incidence(self) -> dict[str, list[tuple[str, str]]]:
        """Map each vertex to the edge ends touching it, as ``(edge_id, 'tail'|'head')``."""
        inc: dict[str, list[tuple[str, str]]] = {v: [] for v in self.vertices}
        for e in self.edges:
            inc[e.tail].append((e.id, "tail"))
            if not e.halfline:
                inc[e.head].append((e.id, "head"))
        return inc

    def degree(self, vertex: str) -> int:
        return len(self.incidence()[vertex])

    def grid(self, h: float, edge_steps: Mapping[str, float] | None = None) -> "GraphGrid":
        return GraphGrid(self, h, edge_steps)

    def to_dict(self) -> dict:
        edges = []
        for e in self.edges:
            d = {"id": e.id, "from": e.tail, "to": e.head, "kappa": e.kappa}
            d["halfline_truncation" if e.halfline else "length"] = e.length
            edges.append(d)
        return {"vertices": list(self.vertices), "edges": edges}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MetricGraph):
            return NotImplemented
        return self.vertices == other.vertices and self.edges == other.edges

    def __repr__(self) -> str:
        return (
            f"MetricGraph(vertices={len(self.vertices)}, bounded={len(self.bounded_edges)}, "
            f"halflines={len(self.halflines)}, core_length={self.core_length:.6g})"
        )


def _parse_edge(raw: Mapping) -> Edge:
    if not isinstance(raw, Mapping):
        raise GraphSpecError(f"edge entry must be an object, got {type(raw).__name__}")
    if "id" not in raw:
        raise GraphSpecError("edge without 'id'")
    eid = str(raw["id"])
    has_len = "length" in raw
    has_trunc = "halfline_truncation" in raw
    if has_len == has_trunc:
        raise GraphSpecError("edge needs exactly one of 'length' or 'halfline_truncation'", eid)
    try:
        length = float(raw["length"] if has_len else raw["halfline_truncation"])
    except (TypeError, ValueError):
        raise GraphSpecError("length is not a number", eid) from None
    tail, head = raw.get("from"), raw.get("to")
    if has_trunc:
        ends = [v for v in (tail, head) if v is not None]
        if len(ends) != 1:
            raise GraphSpecError("half-line must have exactly one graph-side vertex", eid)
        tail, head = str(ends[0]), None
    else:
        if tail is None or head is None:
            raise GraphSpecError("bounded edge needs both 'from' and 'to'", eid)
        tail, head = str(tail), str(head)
    kappa = raw.get("kappa", False)
    if not isinstance(kappa, bool):
        raise GraphSpecError("'kappa' must be a boolean", eid)
    return Edge(eid, tail, head, length, halfline=has_trunc, kappa=kappa)


def load_graph(source: str | Path | Mapping, require_core: bool = True) -> MetricGraph:
    """Parse and validate a graph description.

    ``source`` may be a JSON string, a path to a JSON file or an already
    decoded mapping with keys ``vertices`` and ``edges``.
    """
    if isinstance(source, Path):
        source = source.read_text()
    if isinstance(source, str):
        try:
            data = json.loads(source)
        except json.JSONDecodeError as exc:
            raise GraphSpecError(f"parse error: {exc}") from None
    else:
        data = source
    if not isinstance(data, Mapping) or "vertices" not in data or "edges" not in data:
        raise GraphSpecError("parse error: expected an object with 'vertices' and 'edges'")
    if not isinstance(data["vertices"], list) or not isinstance(data["edges"], list):
        raise GraphSpecError("parse error: 'vertices' and 'edges' must be lists")
    vertices = [str(v) for v in data["vertices"]]
    edges = [_parse_edge(raw) for raw in data["edges"]]
    return MetricGraph(vertices, edges, require_core=require_core)


def serialize(graph: MetricGraph) -> str:
    return json.dumps(graph.to_dict(), indent=2)


def tadpole_graph(loop_length: float, truncation: float = 10.0) -> MetricGraph:
    """One loop (the compact core) glued to one half-line at vertex ``v``."""
    return MetricGraph(
        ["v"],
        [
            Edge("loop", "v", "v", float(loop_length), kappa=True),
            Edge("tail", "v", None, float(truncation), halfline=True),
        ],
    )


class GraphGrid:
    """Per-edge uniform grids for a target step ``h``.

    Edge ``e`` gets ``n_e = max(1, round(len_e / h_e))`` intervals of step
    ``len_e / n_e``, hence ``n_e + 1`` samples including both ends. ``h_e`` is
    ``h`` unless ``edge_steps`` overrides it for that edge.
    """

    def __init__(self, graph: MetricGraph, h: float, edge_steps: Mapping[str, float] | None = None):
        edge_steps = dict(edge_steps or {})
        for eid, step in [(None, h), *edge_steps.items()]:
            if not step > 0:
                raise ValueError(f"grid step must be positive, got {step}")
            if eid is not None and eid not in graph._edge_index:
                raise ValueError(f"step override for unknown edge {eid!r}")
        self.graph = graph
        self.h = float(h)
        self.edge_steps = edge_steps
        self.intervals = {
            e.id: max(1, int(round(e.length / edge_steps.get(e.id, h)))) for e in graph.edges
        }

    def step(self, edge_id: str) -> float:
        return self.graph.edge(edge_id).length / self.intervals[edge_id]

    def arclength(self, edge_id: str) -> np.ndarray:
        return np.linspace(0.0, self.graph.edge(edge_id).length, self.intervals[edge_id] + 1)

    def zeros(self) -> "GraphFunction":
        return GraphFunction(self, {e.id: np.zeros(self.intervals[e.id] + 1) for e in self.graph.edges})

    def sample(self, f: Callable[[Edge, np.ndarray], np.ndarray]) -> "GraphFunction":
        """Sample ``f(edge, x)`` on each edge; half-line far ends are forced to zero."""
        values = {}
        for e in self.graph.edges:
            v = np.asarray(f(e, self.arclength(e.id)), dtype=float).copy()
            if e.halfline:
                v[-1] = 0.0
            values[e.id] = v
        return GraphFunction(self, values)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GraphGrid):
            return NotImplemented
        return self.graph is other.graph and self.intervals == other.intervals


class GraphFunction:
    """A continuous function on a metric graph, sampled on a :class:`GraphGrid`.

    Parameters
    ----------
    grid : GraphGrid
    values : mapping edge id -> ndarray
        Samples including both endpoints. Samples meeting at a vertex must
        agree, and half-line far ends must vanish.
    check : bool
        Validate continuity and the far-end condition.
    """

    def __init__(self, grid: GraphGrid, values: Mapping[str, np.ndarray], check: bool = True):
        self.grid = grid
        self.values = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        for v in self.values.values():
            v.setflags(write=False)
        if check:
            self._validate()

    @property
    def graph(self) -> MetricGraph:
        return self.grid.graph

    def _validate(self, rtol: float = 1e-9) -> None:
        g = self.graph
        for e in g.edges:
            if e.id not in self.values:
                raise ValueError(f"missing samples for edge {e.id!r}")
            if self.values[e.id].shape != (self.grid.intervals[e.id] + 1,):
                raise ValueError(
                    f"edge {e.id!r}: expected {self.grid.intervals[e.id] + 1} samples, "
                    f"got {self.values[e.id].shape}"
                )
        scale = max((np.max(np.abs(v)) for v in self.values.values()), default=0.0)
        tol = rtol * max(scale, 1.0)
        for vtx, ends in g.incidence().items():
            vals = [self.endpoint(eid, side) for eid, side in ends]
            if vals and max(vals) - min(vals) > tol:
                raise ValueError(f"samples disagree at vertex {vtx!r}: {vals}")
        for e in g.halflines:
            if abs(self.values[e.id][-1]) > tol:
                raise ValueError(f"half-line {e.id!r} does not vanish at its truncation end")

    def endpoint(self, edge_id: str, side: str) -> float:
        v = self.values[edge_id]
        return float(v[0] if side == "tail" else v[-1])

    def vertex_value(self, vertex: str) -> float:
        eid, side = self.graph.incidence()[vertex][0]
        return self.endpoint(eid, side)

    def map(self, f: Callable[[np.ndarray], np.ndarray]) -> "GraphFunction":
        return GraphFunction(self.grid, {k: f(v) for k, v in self.values.items()}, check=False)

    def __mul__(self, c: float) -> "GraphFunction":
        return self.map(lambda v: c * v)

    __rmul__ = __mul__

    def __neg__(self) -> "GraphFunction":
        return self.map(np.negative)

    def _binary(self, other: "GraphFunction", op) -> "GraphFunction":
        if self.grid != other.grid:
            raise ValueError("functions live on different grids")
        return GraphFunction(self.grid, {k: op(v, other.values[k]) for k, v in self.values.items()}, check=False)

    def __add__(self, other: "GraphFunction") -> "GraphFunction":
        return self._binary(other, np.add)

    def __sub__(self, other: "GraphFunction") -> "GraphFunction":
        return self._binary(other, np.subtract)

    def max_abs(self) -> float:
        return float(max(np.max(np.abs(v)) for v in self.values.values()))

    def to_csv(self, path: str | Path | None = None) -> str:
        """Export as CSV with columns ``edge_id, arclength, value``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["edge_id", "arclength", "value"])
        for e in self.graph.edges:
            for x, y in zip(self.grid.arclength(e.id), self.values[e.id]):
                w.writerow([e.id, repr(float(x)), repr(float(y))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, grid: GraphGrid, source: str | Path) -> "GraphFunction":
        text = Path(source).read_text() if isinstance(source, Path) else source
        rows: dict[str, list[float]] = defaultdict(list)
        for row in csv.DictReader(io.StringIO(text)):
            rows[row["edge_id"]].append(float(row["value"]))
        return cls(grid, {k: np.array(v) for k, v in rows.items()})


def _trapezoid_weights(n_intervals: int, step: float) -> np.ndarray:
    w = np.full(n_intervals + 1, step)
    w[0] = w[-1] = 0.5 * step
    return w


def _edge_integral(u: GraphFunction, edges: Iterable[Edge], integrand: Callable[[np.ndarray], np.ndarray]) -> float:
    total = 0.0
    for e in edges:
        w = _trapezoid_weights(u.grid.intervals[e.id], u.grid.step(e.id))
        total += float(w @ integrand(u.values[e.id]))
    return total


def mass(u: GraphFunction) -> float:
    """Composite trapezoid value of the integral of ``u**2`` over the graph."""
    return _edge_integral(u, u.graph.edges, np.square)


def lp_core_norm(u: GraphFunction, p: float) -> float:
    """Composite trapezoid value of the integral of ``|u|**p`` over the core edges only.

    Returns the ``p``-th power of the norm, not the norm itself.
    """
    return _edge_integral(u, u.graph.core_edges, lambda v: np.abs(v) ** p)


def _outgoing_slope(v: np.ndarray, step: float, side: str) -> float:
    # derivative pointing into the edge, one-sided, second order when possible
    if side == "head":
        v = v[::-1]
    if v.size >= 3:
        return float((-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * step))
    return float((v[1] - v[0]) / step)


def kirchhoff_residual(u: GraphFunction) -> dict[str, float]:
    """Absolute sum of outgoing derivatives at every vertex."""
    out = {}
    for vtx, ends in u.graph.incidence().items():
        flux = sum(_outgoing_slope(u.values[eid], u.grid.step(eid), side) for eid, side in ends)
        out[vtx] = abs(flux)
    return out
