"""Self-adjoint vertex conditions for graph Laplacians.

A self-adjoint realization of the second derivative on a metric graph is
selected by a unitary ``U`` on the total vertex space through the condition

    values - i * derivs = U (values + i * derivs)

on boundary traces.  Local conditions decompose ``U`` into one unitary block
per vertex.  The spectral decomposition of ``U`` splits the condition into a
Dirichlet part (eigenvalue -1), a Neumann part (eigenvalue +1) and a Robin
part coupling values to derivatives through the Hermitian map
``L = -i ((I + U)|_perp)^(-1) (I - U)``.

Families provided here:

* delta-type: continuity at each vertex plus
  ``sum_e derivs_e(v) = -deg(v) * tan(delta/2) * value(v)``; ``delta = 0``
  is the Kirchhoff case (derivative sums vanish).
* quasi-delta-type: the same up to fixed per-slot phase shifts; the allowed
  boundary values at ``v`` span the unimodular vector ``exp(i chi(v))``
  instead of the uniform vector.  With all phases zero this reduces to the
  delta-type family.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg

from .graphs import BoundaryTrace, MetricGraph

UNITARITY_TOL = 1e-12
CLUSTER_TOL = 1e-10


@dataclass(frozen=True)
class VertexConditions:
    """Unitary parametrization of a self-adjoint extension.

    Either ``blocks`` holds one unitary per vertex (in ascending vertex
    order, block sizes equal to vertex degrees), or ``matrix`` holds one
    global unitary of size ``2|E|``.  Global conditions are supported for
    representation and membership checking only.
    """

    graph: MetricGraph
    blocks: tuple[np.ndarray, ...] | None = None
    matrix: np.ndarray | None = None
    kind: str = "explicit-unitary"
    delta: float | None = None

    def __post_init__(self):
        if (self.blocks is None) == (self.matrix is None):
            raise ValueError("exactly one of blocks/matrix must be given")
        if self.blocks is not None:
            if len(self.blocks) != len(self.graph.vertices):
                raise ValueError("one block per vertex required")
            for v, b in zip(self.graph.vertices, self.blocks):
                d = self.graph.degree(v)
                if b.shape != (d, d):
                    raise ValueError(f"block for vertex {v!r} must be {d}x{d}, got {b.shape}")
                _check_unitary(b, f"block at vertex {v!r}")
        else:
            n = self.graph.n_slots
            if self.matrix.shape != (n, n):
                raise ValueError(f"global unitary must be {n}x{n}, got {self.matrix.shape}")
            _check_unitary(self.matrix, "global unitary")

    @property
    def is_local(self) -> bool:
        return self.blocks is not None

    @cached_property
    def global_matrix(self) -> np.ndarray:
        """Global unitary on the slot space (block-diagonal for local conditions)."""
        if self.matrix is not None:
            return self.matrix
        n = self.graph.n_slots
        U = np.zeros((n, n), dtype=complex)
        for v, b in zip(self.graph.vertices, self.blocks):
            r = self.graph.slots.vertex_ranges[v]
            U[r.start : r.stop, r.start : r.stop] = b
        return U

    def block(self, v: str) -> np.ndarray:
        if not self.is_local:
            raise ValueError("conditions are global; no per-vertex blocks")
        return self.blocks[self.graph.vertex_index[v]]


def _check_unitary(U: np.ndarray, what: str) -> None:
    if U.shape[0] == 0:
        return
    dev = np.abs(U @ U.conj().T - np.eye(U.shape[0])).max()
    if dev > UNITARITY_TOL:
        raise ValueError(f"{what} is not unitary: max |U U^+ - I| = {dev:.3e}")


def delta_type_conditions(graph: MetricGraph, delta: float) -> VertexConditions:
    """Delta-type conditions ``U_v = ((e^{i delta} + 1)/deg v) * ones - I``.

    ``delta`` must lie in the open interval (-pi, pi); the endpoints are the
    Dirichlet limit, which this one-parameter family does not reach.
    ``delta = 0`` gives the Kirchhoff case.
    """
    if not (-np.pi < delta < np.pi):
        raise ValueError(f"delta must lie in (-pi, pi), got {delta}")
    blocks = []
    for v in graph.vertices:
        d = graph.degree(v)
        if d == 0:
            blocks.append(np.zeros((0, 0), dtype=complex))
            continue
        blocks.append(((np.exp(1j * delta) + 1.0) / d) * np.ones((d, d)) - np.eye(d))
    return VertexConditions(graph, blocks=tuple(blocks), kind="delta", delta=float(delta))


def quasi_delta_conditions(
    graph: MetricGraph, delta: float, chi_slots: np.ndarray
) -> VertexConditions:
    """Quasi-delta-type conditions from per-slot phases ``chi_slots``.

    At each vertex the rank-one projector is onto the span of the unimodular
    vector ``exp(i chi(v))`` and ``U_v = (e^{i delta} + 1) P_v - I``.  The
    phase at each vertex's reference slot (its first slot, i.e. the lowest
    incident edge id) must be zero; with all phases zero this is exactly
    :func:`delta_type_conditions`.
    """
    if not (-np.pi < delta < np.pi):
        raise ValueError(f"delta must lie in (-pi, pi), got {delta}")
    chi = np.asarray(chi_slots, dtype=float)
    if chi.shape != (graph.n_slots,):
        raise ValueError(f"chi_slots must have shape ({graph.n_slots},), got {chi.shape}")
    blocks = []
    for v in graph.vertices:
        r = graph.slots.vertex_ranges[v]
        chi_v = chi[r.start : r.stop]
        if len(chi_v) == 0:
            blocks.append(np.zeros((0, 0), dtype=complex))
            continue
        if abs(chi_v[0]) > 1e-12:
            raise ValueError(
                f"reference-edge phase at vertex {v!r} must be zero, got {chi_v[0]}"
            )
        u = np.exp(1j * chi_v)
        d = graph.degree(v)
        proj = np.outer(u, u.conj()) / d
        blocks.append((np.exp(1j * delta) + 1.0) * proj - np.eye(d))
    return VertexConditions(graph, blocks=tuple(blocks), kind="quasi-delta", delta=float(delta))


@dataclass(frozen=True)
class ProjectorTriple:
    """Spectral split of a vertex unitary.

    ``p_minus_one`` and ``p_one`` project onto the eigenvalue -1 and +1
    eigenspaces (Dirichlet and Neumann parts), ``p_perp`` onto the rest, and
    ``robin`` is ``-i ((I+U)|_perp)^(-1) (I-U)`` on the range of ``p_perp``
    (zero elsewhere).  Membership in the extension domain is equivalent to

        p_minus_one @ values = 0,
        p_one @ derivs = 0,
        p_perp @ derivs = robin @ values.

    For the delta-type family the Robin map acts as ``-tan(delta/2)`` on the
    uniform vector, matching the derivative-sum condition.
    """

    p_minus_one: np.ndarray
    p_one: np.ndarray
    p_perp: np.ndarray
    robin: np.ndarray
    eigenphase_clusters: tuple[tuple[float, int], ...] = field(default=())

    def reconstruct(self) -> np.ndarray:
        """Rebuild the unitary: ``P_1 - P_-1 + Cayley(robin)`` on the Robin range."""
        n = self.p_one.shape[0]
        U = self.p_one - self.p_minus_one
        rank = int(round(np.trace(self.p_perp).real))
        if rank:
            # Orthonormal basis of range(p_perp) via eigendecomposition
            w, V = np.linalg.eigh(self.p_perp)
            B = V[:, w > 0.5]
            L = B.conj().T @ self.robin @ B
            Uperp = (np.eye(rank) - 1j * L) @ np.linalg.inv(np.eye(rank) + 1j * L)
            U = U + B @ Uperp @ B.conj().T
        return U


def decompose(conditions: VertexConditions | np.ndarray) -> ProjectorTriple:
    """Spectral projector decomposition of a vertex unitary.

    Eigenvalues within ``1e-10`` of each other are clustered; the clusters at
    +1 and -1 become the Neumann and Dirichlet projectors, everything else
    feeds the Robin map.  Uses the complex Schur form, which for a normal
    matrix yields an orthonormal eigenbasis even across degeneracies.
    """
    U = conditions.global_matrix if isinstance(conditions, VertexConditions) else np.asarray(conditions, dtype=complex)
    _check_unitary(U, "unitary to decompose")
    n = U.shape[0]
    T, Q = scipy.linalg.schur(U, output="complex")
    lams = np.diag(T)

    # Cluster eigenvalues by absolute distance on the unit circle.
    order = np.argsort(np.angle(lams), kind="stable")
    clusters: list[list[int]] = []
    for idx in order:
        if clusters and abs(lams[idx] - lams[clusters[-1][-1]]) <= CLUSTER_TOL:
            clusters[-1].append(idx)
        else:
            clusters.append([idx])
    # Phases wrap at +-pi: merge first and last cluster if they touch.
    if len(clusters) > 1 and abs(lams[clusters[0][0]] - lams[clusters[-1][-1]]) <= CLUSTER_TOL:
        clusters[0].extend(clusters.pop())

    p_minus = np.zeros((n, n), dtype=complex)
    p_one = np.zeros((n, n), dtype=complex)
    p_perp = np.zeros((n, n), dtype=complex)
    perp_cols: list[int] = []
    cluster_info = []
    for cl in clusters:
        lam = lams[cl].mean()
        P = Q[:, cl] @ Q[:, cl].conj().T
        cluster_info.append((float(np.angle(lam)), len(cl)))
        if abs(lam - 1.0) <= CLUSTER_TOL:
            p_one += P
        elif abs(lam + 1.0) <= CLUSTER_TOL:
            p_minus += P
        else:
            p_perp += P
            perp_cols.extend(cl)

    robin = np.zeros((n, n), dtype=complex)
    if perp_cols:
        B = Q[:, perp_cols]
        Uperp = B.conj().T @ U @ B
        k = len(perp_cols)
        L = -1j * np.linalg.solve(np.eye(k) + Uperp, np.eye(k) - Uperp)
        robin = B @ L @ B.conj().T
    return ProjectorTriple(p_minus, p_one, p_perp, robin, tuple(cluster_info))


def check_membership(
    t: BoundaryTrace, conditions: VertexConditions, tol: float
) -> tuple[bool, float]:
    """Test a boundary trace against vertex conditions.

    Returns ``(ok, residual)`` where the residual is the slot-space norm of
    ``(values - i derivs) - U (values + i derivs)`` and membership holds iff
    ``residual <= tol * (|values| + |derivs| + 1)``.
    """
    U = conditions.global_matrix
    if t.graph.n_slots != U.shape[0]:
        raise ValueError("trace and conditions have mismatched slot dimension")
    lhs = t.values - 1j * t.derivatives
    rhs = U @ (t.values + 1j * t.derivatives)
    residual = float(np.linalg.norm(lhs - rhs))
    scale = t.norm_values() + t.norm_derivatives() + 1.0
    return residual <= tol * scale, residual


def domain_trace(conditions: VertexConditions, w: np.ndarray) -> BoundaryTrace:
    """A trace in the extension domain, parametrized by an arbitrary slot vector.

    ``values = (U + I) w`` and ``derivs = i (U - I) w`` satisfy the membership
    identity exactly for unitary ``U``; every admissible trace arises this way.
    """
    U = conditions.global_matrix
    w = np.asarray(w, dtype=complex)
    values = (U + np.eye(U.shape[0])) @ w
    derivs = 1j * (U - np.eye(U.shape[0])) @ w
    return BoundaryTrace(conditions.graph, values, derivs)
