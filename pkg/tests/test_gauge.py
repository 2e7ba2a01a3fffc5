import numpy as np
import pytest

from qwires.extensions import check_membership, domain_trace, quasi_delta_conditions, delta_type_conditions
from qwires.gauge import (
    EdgePotential,
    GaugePhase,
    apply_gauge,
    average_potential,
    chi_from_vertex_phases,
    conjugate_conditions,
    gauge_trace,
    incidence_sum_matrix,
    is_simple,
    simple_subspace,
)
from qwires.graphs import GridFunction, build_graph

from conftest import bouquet, random_graph


class TestChiFromVertexPhases:
    def test_loop_linear_phase(self, loop):
        alpha = 1.3
        chi = chi_from_vertex_phases(loop, np.array([0.0, alpha]))
        assert chi.A[0] == pytest.approx(alpha)
        assert chi.b[0] == pytest.approx(0.0)
        x = np.linspace(0, 1, 7)
        assert np.allclose(chi.at(0, x), alpha * x)

    def test_constant_phase(self, interval):
        chi = chi_from_vertex_phases(interval, np.array([2.5, 2.5]))
        assert chi.A[0] == pytest.approx(0.0)
        assert chi.b[0] == pytest.approx(2.5)

    def test_affine_interpolation(self):
        g = build_graph(
            {"vertices": ["a", "b"], "edges": [{"id": "e", "from": "a", "to": "b", "length": 2.0}]}
        )
        chi = chi_from_vertex_phases(g, np.array([1.0, 3.0]))
        assert chi.A[0] == pytest.approx(1.0)
        assert chi.b[0] == pytest.approx(1.0)


class TestApplyGauge:
    def test_zero_phase_identity(self, loop):
        psi = GridFunction.from_callable(loop, lambda e, x: np.exp(2j * np.pi * x), 32)
        chi = GaugePhase(loop, np.zeros(1), np.zeros(1))
        out = apply_gauge(psi, chi, "forward")
        assert all(np.allclose(a, b) for a, b in zip(out.values, psi.values))

    def test_forward_inverse_roundtrip(self, loop):
        rng = np.random.default_rng(4)
        psi = GridFunction.from_callable(
            loop, lambda e, x: rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size), 64
        )
        chi = GaugePhase(loop, np.array([2.2]), np.array([0.4]))
        back = apply_gauge(apply_gauge(psi, chi, "forward"), chi, "inverse")
        for a, b in zip(back.values, psi.values):
            assert np.abs(a - b).max() < 1e-15

    def test_isometry(self, interval):
        rng = np.random.default_rng(9)
        psi = GridFunction.from_callable(
            interval, lambda e, x: rng.standard_normal(x.size) + 1j * rng.standard_normal(x.size), 64
        )
        chi = GaugePhase(interval, np.array([-1.7]), np.array([0.3]))
        assert apply_gauge(psi, chi).norm() == pytest.approx(psi.norm(), abs=1e-14)

    def test_bad_direction(self, loop):
        psi = GridFunction.zeros(loop, 4)
        chi = GaugePhase(loop, np.zeros(1), np.zeros(1))
        with pytest.raises(ValueError, match="direction"):
            apply_gauge(psi, chi, "sideways")


class TestConjugateConditions:
    def test_loop_example_returns_kirchhoff_swap(self, loop):
        alpha = 0.9
        U = quasi_delta_conditions(loop, 0.0, np.array([0.0, alpha]))
        chi = chi_from_vertex_phases(loop, np.array([0.0, alpha]))
        V = conjugate_conditions(U, chi)
        assert np.abs(V.block("v") - np.array([[0, 1], [1, 0]])).max() < 1e-14

    def test_zero_phase_is_identity_map(self):
        g = bouquet(2)
        U = delta_type_conditions(g, 0.7)
        chi = GaugePhase(g, np.zeros(2), np.zeros(2))
        V = conjugate_conditions(U, chi)
        assert np.abs(V.global_matrix - U.global_matrix).max() < 1e-14

    def test_result_unitary(self):
        rng = np.random.default_rng(12)
        for _ in range(10):
            g = random_graph(rng)
            U = delta_type_conditions(g, float(rng.uniform(-2.5, 2.5)))
            chi = GaugePhase(
                g, rng.standard_normal(len(g.edges)), rng.standard_normal(len(g.edges))
            )
            V = conjugate_conditions(U, chi)  # constructor validates unitarity
            assert V.is_local


class TestAveragePotential:
    def test_constant(self, loop):
        n = 128
        samples = [np.full(n + 1, 1.7)]
        pot, chis = average_potential(loop, samples)
        assert pot.A[0] == pytest.approx(1.7)
        assert np.abs(chis[0]).max() < 1e-14

    def test_zero_mean_sine(self, loop):
        n = 256
        x = np.linspace(0, 1, n + 1)
        pot, chis = average_potential(loop, [np.sin(2 * np.pi * x)])
        assert abs(pot.A[0]) < 1e-12
        # chi vanishes at both endpoints
        assert abs(chis[0][0]) < 1e-14 and abs(chis[0][-1]) < 1e-12

    def test_linear_oracle(self, loop):
        n = 256
        x = np.linspace(0, 1, n + 1)
        pot, chis = average_potential(loop, [x])
        assert abs(pot.A[0] - 0.5) <= 1e-6  # trapezoid exact for affine integrand
        assert abs(chis[0][-1]) < 1e-12

    def test_projection_idempotent(self, interval):
        n = 64
        x = np.linspace(0, 1, n + 1)
        pot, _ = average_potential(interval, [np.cos(3 * x) + 0.4])
        again, chis = average_potential(interval, [np.full(n + 1, pot.A[0])])
        assert again.A[0] == pytest.approx(pot.A[0], abs=1e-15)
        assert np.abs(chis[0]).max() < 1e-14


class TestIsSimple:
    def test_bouquet_always_simple(self):
        rng = np.random.default_rng(1)
        for n in (1, 2, 3, 5):
            g = bouquet(n)
            pot = EdgePotential(g, rng.standard_normal(n))
            ok, res = is_simple(pot)
            assert ok
            assert all(abs(v) < 1e-12 for v in res.values())

    def test_g1_simple_iff_bridge_zero(self, graph_g1):
        pot = EdgePotential(graph_g1, np.array([0.3, 0.5, -0.8]))  # e1, e2, e3
        ok, res = is_simple(pot)
        assert not ok
        assert res["v1"] == pytest.approx(0.5) or res["v1"] == pytest.approx(-0.5)
        pot0 = EdgePotential(graph_g1, np.array([0.3, 0.0, -0.8]))
        ok0, _ = is_simple(pot0)
        assert ok0

    def test_g2_constraints(self, graph_g2):
        # A1 != A4 violates the vertex equations
        bad = EdgePotential(graph_g2, np.array([1.0, 0.0, 0.0, 2.0, 0.0, 0.0]))
        ok, _ = is_simple(bad)
        assert not ok
        # satisfy all four equations: A1=A4=s, A2=s+A3, A5=s+A6
        s, a3, a6 = 0.7, -0.2, 1.1
        good = EdgePotential(graph_g2, np.array([s, s + a3, a3, s, s + a6, a6]))
        ok2, res2 = is_simple(good)
        assert ok2, res2

    def test_linearity(self, graph_g2):
        s, a3, a6 = 0.7, -0.2, 1.1
        A1 = np.array([s, s + a3, a3, s, s + a6, a6])
        t, b3, b6 = -0.4, 0.9, 0.25
        A2 = np.array([t, t + b3, b3, t, t + b6, b6])
        ok, _ = is_simple(EdgePotential(graph_g2, A1 + A2))
        assert ok


class TestSimpleSubspace:
    def test_loop_dimension(self, loop):
        B = simple_subspace(loop)
        assert B.shape == (1, 1)

    def test_bouquet_dimension(self):
        for n in (1, 2, 4):
            assert simple_subspace(bouquet(n)).shape == (n, n)

    def test_g2_dimension_rank_oracle(self, graph_g2):
        # oracle: dimension = |E| - rank of the 4x6 vertex-constraint matrix;
        # the four rows sum to zero, so the rank is 3 and the dimension 3.
        S = incidence_sum_matrix(graph_g2)
        assert S.shape == (4, 6)
        rank = np.linalg.matrix_rank(S)
        assert rank == 3
        B = simple_subspace(graph_g2)
        assert B.shape == (6, 6 - rank)
        # every simple potential has A_e1 = A_e4 (edges sorted e1..e6)
        assert np.abs(B[0, :] - B[3, :]).max() < 1e-12

    def test_basis_orthonormal_and_in_kernel(self, graph_g2):
        B = simple_subspace(graph_g2)
        S = incidence_sum_matrix(graph_g2)
        assert np.abs(B.T @ B - np.eye(B.shape[1])).max() < 1e-12
        assert np.abs(S @ B).max() < 1e-12

    def test_empty_basis_when_only_zero_simple(self):
        # single non-loop edge: residuals are -A and +A, so only A = 0 works
        g = build_graph(
            {"vertices": ["a", "b"], "edges": [{"id": "e", "from": "a", "to": "b", "length": 1.0}]}
        )
        assert simple_subspace(g).shape == (1, 0)


class TestGaugeCovariance:
    def test_membership_covariant(self):
        rng = np.random.default_rng(44)
        for _ in range(100):
            g = random_graph(rng)
            delta = float(rng.uniform(-2.0, 2.0))
            chi_slots = rng.standard_normal(g.n_slots)
            # zero out each vertex's reference slot so quasi conditions exist
            for v in g.vertices:
                r = g.slots.vertex_ranges[v]
                if len(r):
                    chi_slots[r.start] = 0.0
            U = quasi_delta_conditions(g, delta, chi_slots)
            chi = chi_from_vertex_phases(g, chi_slots)
            V = conjugate_conditions(U, chi)
            w = rng.standard_normal(g.n_slots) + 1j * rng.standard_normal(g.n_slots)
            t = domain_trace(U, w)
            ok_u, r_u = check_membership(t, U, 1e-10)
            t_gauged = gauge_trace(t, chi, "inverse")
            ok_v, r_v = check_membership(t_gauged, V, 1e-10)
            assert ok_u and ok_v
            assert abs(r_u - r_v) <= 1e-10

    def test_non_member_residual_matches_too(self, loop):
        rng = np.random.default_rng(45)
        alpha = 1.1
        U = quasi_delta_conditions(loop, 0.0, np.array([0.0, alpha]))
        chi = chi_from_vertex_phases(loop, np.array([0.0, alpha]))
        V = conjugate_conditions(U, chi)
        from qwires.graphs import BoundaryTrace

        t = BoundaryTrace(
            loop,
            rng.standard_normal(2) + 1j * rng.standard_normal(2),
            rng.standard_normal(2) + 1j * rng.standard_normal(2),
        )
        _, r_u = check_membership(t, U, 1e-10)
        _, r_v = check_membership(gauge_trace(t, chi, "inverse"), V, 1e-10)
        assert abs(r_u - r_v) <= 1e-10
