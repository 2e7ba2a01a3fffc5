"""Metric graphs, edge-end slot indexing, and boundary traces.

A metric graph is a finite collection of vertices joined by directed edges,
each edge carrying a finite positive length and identified with the interval
``[0, length]`` (coordinate 0 at the start vertex, ``length`` at the end
vertex).  Boundary data of functions on the graph live in the total vertex
space: one complex slot per incident edge-end, so a loop contributes two
slots at its vertex and the total slot count is ``2 * |E|``.

Slot ordering convention (fixed so serialized outputs are reproducible):
vertices in ascending id order; within a vertex, incident edge-ends in
ascending edge-id order, with a loop's start-end slot listed before its
end-end slot.

Sign conventions: the oriented evaluation carries a minus sign at start
ends, and the normal derivative is ``-psi'(0)`` at a start end and
``+psi'(length)`` at an end end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

MINUS = 0  # start end of an edge (x = 0)
PLUS = 1   # end end of an edge (x = length)


class GraphFormatError(ValueError):
    """Raised for malformed graph descriptions."""


@dataclass(frozen=True)
class Edge:
    id: str
    start: str
    end: str
    length: float

    @property
    def is_loop(self) -> bool:
        return self.start == self.end


@dataclass(frozen=True)
class MetricGraph:
    """Finite compact metric graph.

    ``vertices`` is sorted ascending and ``edges`` is sorted by edge id;
    use :func:`build_graph` to construct a validated instance.
    """

    vertices: tuple[str, ...]
    edges: tuple[Edge, ...]

    @cached_property
    def vertex_index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.vertices)}

    @cached_property
    def edge_index(self) -> dict[str, int]:
        return {e.id: i for i, e in enumerate(self.edges)}

    @cached_property
    def degrees(self) -> dict[str, int]:
        deg = {v: 0 for v in self.vertices}
        for e in self.edges:
            deg[e.start] += 1
            deg[e.end] += 1
        return deg

    def degree(self, v: str) -> int:
        return self.degrees[v]

    @cached_property
    def lengths(self) -> np.ndarray:
        return np.array([e.length for e in self.edges])

    @property
    def n_slots(self) -> int:
        return 2 * len(self.edges)

    @cached_property
    def slots(self) -> "VertexSlotIndex":
        return VertexSlotIndex.build(self)

    def incident_ends(self, v: str) -> list[tuple[int, int]]:
        """(edge index, end) pairs incident to ``v`` in slot order."""
        out = []
        for i, e in enumerate(self.edges):
            if e.start == v:
                out.append((i, MINUS))
            if e.end == v:
                out.append((i, PLUS))
        return out


@dataclass(frozen=True)
class VertexSlotIndex:
    """Total ordering of the ``2|E|`` edge-end slots.

    ``order[s] = (vertex position, edge index, end)`` and the inverse map
    ``slot_of[(edge index, end)] = s`` form a bijection; slots of one vertex
    are contiguous, so per-vertex operators embed block-diagonally.
    """

    graph: MetricGraph
    order: tuple[tuple[int, int, int], ...]

    @staticmethod
    def build(graph: MetricGraph) -> "VertexSlotIndex":
        order = []
        for vi, v in enumerate(graph.vertices):
            for ei, end in graph.incident_ends(v):
                order.append((vi, ei, end))
        return VertexSlotIndex(graph, tuple(order))

    @cached_property
    def slot_of(self) -> dict[tuple[int, int], int]:
        return {(ei, end): s for s, (_, ei, end) in enumerate(self.order)}

    @cached_property
    def vertex_ranges(self) -> dict[str, range]:
        lo: dict[str, int] = {}
        hi: dict[str, int] = {}
        for s, (vi, _, _) in enumerate(self.order):
            v = self.graph.vertices[vi]
            lo.setdefault(v, s)
            hi[v] = s + 1
        # isolated vertices get an empty range so per-vertex loops stay total
        cursor = 0
        out: dict[str, range] = {}
        for v in self.graph.vertices:
            if v in lo:
                out[v] = range(lo[v], hi[v])
                cursor = hi[v]
            else:
                out[v] = range(cursor, cursor)
        return out

    @cached_property
    def orientation_signs(self) -> np.ndarray:
        """-1 at start-end slots, +1 at end-end slots."""
        return np.array([-1.0 if end == MINUS else 1.0 for (_, _, end) in self.order])

    @cached_property
    def coordinates(self) -> np.ndarray:
        """Edge coordinate of each slot (0 at start ends, length at end ends)."""
        g = self.graph
        return np.array(
            [0.0 if end == MINUS else g.edges[ei].length for (_, ei, end) in self.order]
        )

    @cached_property
    def edge_of_slot(self) -> np.ndarray:
        return np.array([ei for (_, ei, _) in self.order], dtype=int)

    def __len__(self) -> int:
        return len(self.order)


def build_graph(spec: dict) -> MetricGraph:
    """Validate a graph description and construct a :class:`MetricGraph`.

    ``spec`` has keys ``"vertices"`` (list of string ids) and ``"edges"``
    (list of dicts with ``"id"``, ``"from"``, ``"to"``, ``"length"``).
    Rejects duplicate ids, dangling endpoint references and nonpositive or
    non-finite lengths.
    """
    try:
        raw_vertices = list(spec["vertices"])
        raw_edges = list(spec["edges"])
    except (KeyError, TypeError) as exc:
        raise GraphFormatError(f"graph description must contain 'vertices' and 'edges': {exc}")

    vertices = [str(v) for v in raw_vertices]
    if len(set(vertices)) != len(vertices):
        dupes = sorted({v for v in vertices if vertices.count(v) > 1})
        raise GraphFormatError(f"duplicate vertex ids: {dupes}")
    vset = set(vertices)

    edges = []
    seen = set()
    for item in raw_edges:
        try:
            eid = str(item["id"])
            start = str(item["from"])
            end = str(item["to"])
            length = float(item["length"])
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphFormatError(f"malformed edge entry {item!r}: {exc}")
        if eid in seen:
            raise GraphFormatError(f"duplicate edge id: {eid!r}")
        seen.add(eid)
        if start not in vset or end not in vset:
            raise GraphFormatError(f"edge {eid!r} references unknown vertex {start!r} or {end!r}")
        if not (length > 0.0 and math.isfinite(length)):
            raise GraphFormatError(f"edge {eid!r} must have finite positive length, got {length}")
        edges.append(Edge(eid, start, end, length))

    return MetricGraph(tuple(sorted(vertices)), tuple(sorted(edges, key=lambda e: e.id)))


@dataclass(frozen=True)
class BoundaryTrace:
    """Vertex evaluations and normal derivatives of a function, per slot.

    ``values[s]`` is the endpoint value of the edge function at slot ``s``
    and ``derivatives[s]`` the outward normal derivative there (so
    ``-psi'(0)`` at start ends, ``+psi'(length)`` at end ends).
    """

    graph: MetricGraph
    values: np.ndarray
    derivatives: np.ndarray

    def __post_init__(self):
        n = self.graph.n_slots
        if self.values.shape != (n,) or self.derivatives.shape != (n,):
            raise ValueError(
                f"trace arrays must have shape ({n},), got "
                f"{self.values.shape} and {self.derivatives.shape}"
            )

    @property
    def oriented_values(self) -> np.ndarray:
        """Signed evaluation: -value at start ends, +value at end ends."""
        return self.graph.slots.orientation_signs * self.values

    def norm_values(self) -> float:
        return float(np.linalg.norm(self.values))

    def norm_derivatives(self) -> float:
        return float(np.linalg.norm(self.derivatives))


@dataclass
class GridFunction:
    """Complex nodal values on a uniform per-edge grid.

    Edge ``e`` with ``cells[e]`` elements carries ``cells[e] + 1`` nodes at
    ``x_j = j * length / cells[e]``.  Treated as a value type: operations
    return new instances and never mutate shared state.
    """

    graph: MetricGraph
    cells: tuple[int, ...]
    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        if len(self.cells) != len(self.graph.edges) or len(self.values) != len(self.graph.edges):
            raise ValueError("one cell count and one value array required per edge")
        for ne, vals in zip(self.cells, self.values):
            if ne < 2:
                raise ValueError(f"each edge needs at least 2 cells, got {ne}")
            if vals.shape != (ne + 1,):
                raise ValueError(f"value array shape {vals.shape} does not match {ne + 1} nodes")

    @staticmethod
    def from_callable(
        graph: MetricGraph,
        fn: Callable[[Edge, np.ndarray], np.ndarray] | dict[str, Callable[[np.ndarray], np.ndarray]],
        cells: int | Sequence[int],
    ) -> "GridFunction":
        ne_list = _cells_per_edge(graph, cells)
        vals = []
        for e, ne in zip(graph.edges, ne_list):
            x = np.linspace(0.0, e.length, ne + 1)
            fe = fn[e.id](x) if isinstance(fn, dict) else fn(e, x)
            vals.append(np.asarray(fe, dtype=complex))
        return GridFunction(graph, tuple(ne_list), tuple(vals))

    @staticmethod
    def zeros(graph: MetricGraph, cells: int | Sequence[int]) -> "GridFunction":
        ne_list = _cells_per_edge(graph, cells)
        return GridFunction(
            graph, tuple(ne_list), tuple(np.zeros(ne + 1, dtype=complex) for ne in ne_list)
        )

    def nodes(self, edge_idx: int) -> np.ndarray:
        e = self.graph.edges[edge_idx]
        return np.linspace(0.0, e.length, self.cells[edge_idx] + 1)

    def map_values(self, fn: Callable[[int, np.ndarray], np.ndarray]) -> "GridFunction":
        return GridFunction(
            self.graph,
            self.cells,
            tuple(np.asarray(fn(i, v), dtype=complex) for i, v in enumerate(self.values)),
        )

    def inner(self, other: "GridFunction") -> complex:
        """Trapezoidal L2 inner product, conjugate-linear in ``self``."""
        _check_same_grid(self, other)
        acc = 0.0 + 0.0j
        for i, e in enumerate(self.graph.edges):
            h = e.length / self.cells[i]
            prod = np.conj(self.values[i]) * other.values[i]
            acc += h * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
        return complex(acc)

    def norm(self) -> float:
        return math.sqrt(max(self.inner(self).real, 0.0))


def _cells_per_edge(graph: MetricGraph, cells: int | Sequence[int]) -> list[int]:
    if isinstance(cells, (int, np.integer)):
        return [int(cells)] * len(graph.edges)
    ne_list = [int(c) for c in cells]
    if len(ne_list) != len(graph.edges):
        raise ValueError("cell count list length must equal the edge count")
    return ne_list


def _check_same_grid(a: GridFunction, b: GridFunction) -> None:
    if a.graph is not b.graph and (a.graph.vertices != b.graph.vertices or a.graph.edges != b.graph.edges):
        raise ValueError("grid functions live on different graphs")
    if a.cells != b.cells:
        raise ValueError(f"grid mismatch: {a.cells} vs {b.cells}")


def trace(psi: GridFunction) -> BoundaryTrace:
    """Boundary trace of a grid function.

    Endpoint values are read off the grid; endpoint derivatives use the
    second-order one-sided 3-point stencil, keeping the trace error O(h^2).
    """
    g = psi.graph
    n = g.n_slots
    values = np.zeros(n, dtype=complex)
    derivs = np.zeros(n, dtype=complex)
    for s, (_, ei, end) in enumerate(g.slots.order):
        f = psi.values[ei]
        h = g.edges[ei].length / psi.cells[ei]
        if end == MINUS:
            values[s] = f[0]
            dpsi = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
            derivs[s] = -dpsi
        else:
            values[s] = f[-1]
            dpsi = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * h)
            derivs[s] = dpsi
    return BoundaryTrace(g, values, derivs)


def boundary_form_traces(t_psi: BoundaryTrace, t_phi: BoundaryTrace) -> complex:
    """Boundary sesquilinear form on traces.

    Returns ``<phi_values, psi_derivs> - <phi_derivs, psi_values>`` in the
    total vertex space (inner products conjugate-linear in the first slot).
    This is the defect of integration by parts for the second derivative:
    for smooth functions it equals ``<phi, psi''> - <phi'', psi>``.
    """
    if t_psi.graph.n_slots != t_phi.graph.n_slots:
        raise ValueError("traces live on different graphs")
    return complex(
        np.vdot(t_phi.values, t_psi.derivatives) - np.vdot(t_phi.derivatives, t_psi.values)
    )


def boundary_form(psi: GridFunction, phi: GridFunction) -> complex:
    """Boundary form of two grid functions (see :func:`boundary_form_traces`)."""
    _check_same_grid(psi, phi)
    return boundary_form_traces(trace(psi), trace(phi))
