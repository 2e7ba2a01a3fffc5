"""Gauge transformations between phase-twisted and magnetic realizations.

Multiplying a wave function by ``exp(i chi(x))`` with an edgewise-smooth
phase ``chi`` intertwines second-derivative operators whose tangential
potentials differ by ``chi'``.  Restricted to affine phases
``chi_e(x) = A_e x + b_e`` this exchanges

* the plain second derivative with quasi-delta-type conditions built from
  the endpoint phases ``chi`` on each slot, and
* the magnetic operator ``-(d/dx - iA)^2`` (edge-constant ``A = chi'``) with
  plain delta-type conditions.

Direction convention used throughout this package (fixed by the loop
worked example): with ``T_v = diag(exp(i chi_slot))`` the conjugation
``V = T_v^{-1} U T_v`` maps the quasi-delta unitary ``U`` to the delta-type
unitary ``V``, and on functions the matching map multiplies by
``exp(-i chi(x))`` (the ``inverse`` direction of :func:`apply_gauge`).

Edge-constant potentials that sum to zero around every vertex (counting
orientation) are called *simple*; they are exactly the potentials whose
time variation leaves the delta-type domain fixed, and they form the null
space of the signed vertex-edge incidence-sum matrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np
import scipy.linalg

from .extensions import VertexConditions
from .graphs import MINUS, BoundaryTrace, GridFunction, MetricGraph

SIMPLE_TOL = 1e-12


@dataclass(frozen=True)
class EdgePotential:
    """Edge-constant tangential potential with optional per-edge offsets."""

    graph: MetricGraph
    A: np.ndarray
    b: np.ndarray | None = None

    def __post_init__(self):
        ne = len(self.graph.edges)
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        if self.A.shape != (ne,):
            raise ValueError(f"A must have shape ({ne},), got {self.A.shape}")
        if not np.all(np.isfinite(self.A)):
            raise ValueError("potential entries must be finite")
        if self.b is not None:
            object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
            if self.b.shape != (ne,) or not np.all(np.isfinite(self.b)):
                raise ValueError(f"b must be a finite array of shape ({ne},)")

    @staticmethod
    def uniform(graph: MetricGraph, value: float) -> "EdgePotential":
        return EdgePotential(graph, np.full(len(graph.edges), float(value)))

    @staticmethod
    def zero(graph: MetricGraph) -> "EdgePotential":
        return EdgePotential.uniform(graph, 0.0)


@dataclass(frozen=True)
class GaugePhase:
    """Affine per-edge phase ``chi_e(x) = A_e x + b_e``.

    Edge-continuous by construction, with exact derivative ``A_e``.
    """

    graph: MetricGraph
    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        ne = len(self.graph.edges)
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        if self.A.shape != (ne,) or self.b.shape != (ne,):
            raise ValueError(f"A and b must have shape ({ne},)")

    def at(self, edge_idx: int, x: np.ndarray | float) -> np.ndarray | float:
        return self.A[edge_idx] * x + self.b[edge_idx]

    @cached_property
    def slot_phases(self) -> np.ndarray:
        """chi evaluated at each slot's endpoint coordinate."""
        slots = self.graph.slots
        return self.A[slots.edge_of_slot] * slots.coordinates + self.b[slots.edge_of_slot]


def chi_from_vertex_phases(graph: MetricGraph, chi_slots: np.ndarray) -> GaugePhase:
    """Affine phase with prescribed endpoint values per slot.

    ``A_e = (chi(end) - chi(start)) / length`` and ``b_e = chi(start)``.
    """
    chi = np.asarray(chi_slots, dtype=float)
    if chi.shape != (graph.n_slots,):
        raise ValueError(f"chi_slots must have shape ({graph.n_slots},)")
    slots = graph.slots
    ne = len(graph.edges)
    chi_minus = np.zeros(ne)
    chi_plus = np.zeros(ne)
    for s, (_, ei, end) in enumerate(slots.order):
        if end == MINUS:
            chi_minus[ei] = chi[s]
        else:
            chi_plus[ei] = chi[s]
    lengths = graph.lengths
    return GaugePhase(graph, (chi_plus - chi_minus) / lengths, chi_minus)


def apply_gauge(psi: GridFunction, chi: GaugePhase, direction: str = "forward") -> GridFunction:
    """Multiply nodal values by ``exp(+i chi)`` (forward) or ``exp(-i chi)`` (inverse).

    An isometry at the quadrature level: nodal magnitudes are unchanged, so
    any quadrature of |psi|^2 is preserved exactly.
    """
    sign = {"forward": 1.0, "inverse": -1.0}.get(direction)
    if sign is None:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    return psi.map_values(lambda i, v: np.exp(sign * 1j * chi.at(i, psi.nodes(i))) * v)


def gauge_trace(t: BoundaryTrace, chi: GaugePhase, direction: str = "inverse") -> BoundaryTrace:
    """Gauge a boundary trace slot-wise.

    The derivative slots transform with the same phases as the value slots:
    they are read as magnetic normal derivatives on the transformed side, so
    the chain-rule term is absorbed into the potential ``chi'``.
    """
    sign = {"forward": 1.0, "inverse": -1.0}.get(direction)
    if sign is None:
        raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")
    phases = np.exp(sign * 1j * chi.slot_phases)
    return BoundaryTrace(t.graph, phases * t.values, phases * t.derivatives)


def conjugate_conditions(conditions: VertexConditions, chi: GaugePhase) -> VertexConditions:
    """Conjugate local vertex unitaries: ``V_v = T_v^{-1} U_v T_v``.

    ``T_v = diag(exp(i chi_slot))`` over the slots of ``v``.  Maps the
    quasi-delta unitary built from the endpoint phases of ``chi`` to the
    delta-type unitary of the magnetic realization with ``A = chi'``.
    """
    if not conditions.is_local:
        raise ValueError("conjugation requires local conditions")
    g = conditions.graph
    phases = chi.slot_phases
    blocks = []
    for v, b in zip(g.vertices, conditions.blocks):
        r = g.slots.vertex_ranges[v]
        t = np.exp(1j * phases[r.start : r.stop])
        blocks.append((b * t[None, :]) / t[:, None])
    kind = "delta" if conditions.kind == "quasi-delta" else conditions.kind
    return VertexConditions(g, blocks=tuple(blocks), kind=kind, delta=conditions.delta)


def average_potential(
    graph: MetricGraph, samples: Sequence[np.ndarray]
) -> tuple[EdgePotential, list[np.ndarray]]:
    """Edge-constant reduction of a sampled potential.

    Returns the per-edge trapezoidal mean ``A_mean`` and the sampled phase
    ``chi_e(x) = integral_0^x (A_e - A_mean_e)``, which vanishes at both edge
    endpoints, so the reduction leaves vertex conditions untouched.
    """
    means = np.zeros(len(graph.edges))
    chis: list[np.ndarray] = []
    for i, e in enumerate(graph.edges):
        a = np.asarray(samples[i], dtype=float)
        if a.ndim != 1 or a.size < 2:
            raise ValueError(f"edge {e.id!r}: need at least two samples")
        x = np.linspace(0.0, e.length, a.size)
        means[i] = np.trapezoid(a, x) / e.length
        fluct = a - means[i]
        h = x[1] - x[0]
        chi = np.concatenate([[0.0], np.cumsum(0.5 * h * (fluct[1:] + fluct[:-1]))])
        chis.append(chi)
    return EdgePotential(graph, means), chis


def simplicity_residuals(potential: EdgePotential) -> dict[str, float]:
    """Per-vertex oriented sums ``sum_e +-A_e`` (minus at start ends)."""
    g = potential.graph
    signs = g.slots.orientation_signs
    contrib = signs * potential.A[g.slots.edge_of_slot]
    return {
        v: float(contrib[r.start : r.stop].sum()) for v, r in g.slots.vertex_ranges.items()
    }


def is_simple(potential: EdgePotential) -> tuple[bool, dict[str, float]]:
    """Whether an edge-constant potential is simple for its graph.

    Simple means every vertex's oriented potential sum vanishes (tolerance
    1e-12 absolute); exactly then the delta-type domain of the magnetic
    operator does not move when the potential is scaled in time.
    """
    residuals = simplicity_residuals(potential)
    ok = all(abs(r) <= SIMPLE_TOL for r in residuals.values())
    return ok, residuals


def incidence_sum_matrix(graph: MetricGraph) -> np.ndarray:
    """|V| x |E| matrix of the per-vertex oriented sums (loops cancel)."""
    S = np.zeros((len(graph.vertices), len(graph.edges)))
    for vi, v in enumerate(graph.vertices):
        for ei, end in graph.incident_ends(v):
            S[vi, ei] += 1.0 if end != MINUS else -1.0
    return S


def simple_subspace(graph: MetricGraph) -> np.ndarray:
    """Orthonormal basis (columns) of the space of simple edge-constant potentials.

    Null space of :func:`incidence_sum_matrix`; an empty basis means only the
    zero potential is simple.
    """
    S = incidence_sum_matrix(graph)
    return scipy.linalg.null_space(S)
