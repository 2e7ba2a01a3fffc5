import numpy as np
import pytest

from qwires.graphs import MetricGraph, build_graph


@pytest.fixture
def loop() -> MetricGraph:
    """Single vertex, single loop edge of length 1."""
    return build_graph(
        {"vertices": ["v"], "edges": [{"id": "e", "from": "v", "to": "v", "length": 1.0}]}
    )


@pytest.fixture
def interval() -> MetricGraph:
    """Single edge [0, 1] between two vertices."""
    return build_graph(
        {"vertices": ["a", "b"], "edges": [{"id": "e", "from": "a", "to": "b", "length": 1.0}]}
    )


def bouquet(n: int) -> MetricGraph:
    return build_graph(
        {
            "vertices": ["v"],
            "edges": [
                {"id": f"e{k}", "from": "v", "to": "v", "length": 1.0} for k in range(1, n + 1)
            ],
        }
    )


@pytest.fixture
def bouquet3() -> MetricGraph:
    return bouquet(3)


@pytest.fixture
def graph_g1() -> MetricGraph:
    """Two looped vertices joined by edge e2."""
    return build_graph(
        {
            "vertices": ["v1", "v2"],
            "edges": [
                {"id": "e1", "from": "v1", "to": "v1", "length": 1.0},
                {"id": "e2", "from": "v1", "to": "v2", "length": 1.0},
                {"id": "e3", "from": "v2", "to": "v2", "length": 1.0},
            ],
        }
    )


@pytest.fixture
def graph_g2() -> MetricGraph:
    """Quadrilateral v1->v2->v3->v4->v1 with anti-parallel chords e3, e6.

    Per-vertex oriented sums vanish iff A5 = A1 + A6, A2 = A1 + A3,
    A2 = A3 + A4 and A5 = A4 + A6 (which force A1 = A4).
    """
    return build_graph(
        {
            "vertices": ["v1", "v2", "v3", "v4"],
            "edges": [
                {"id": "e1", "from": "v1", "to": "v2", "length": 1.0},
                {"id": "e2", "from": "v2", "to": "v3", "length": 1.0},
                {"id": "e3", "from": "v3", "to": "v2", "length": 1.0},
                {"id": "e4", "from": "v3", "to": "v4", "length": 1.0},
                {"id": "e5", "from": "v4", "to": "v1", "length": 1.0},
                {"id": "e6", "from": "v1", "to": "v4", "length": 1.0},
            ],
        }
    )


def random_graph(rng: np.random.Generator, max_vertices: int = 4, max_edges: int = 6) -> MetricGraph:
    """Small random graph (loops and parallel edges allowed, connectivity not required)."""
    nv = int(rng.integers(1, max_vertices + 1))
    ne = int(rng.integers(1, max_edges + 1))
    vertices = [f"v{i}" for i in range(nv)]
    edges = []
    for k in range(ne):
        a, b = rng.integers(0, nv, size=2)
        edges.append(
            {
                "id": f"e{k}",
                "from": vertices[a],
                "to": vertices[b],
                "length": float(rng.uniform(0.5, 2.0)),
            }
        )
    return build_graph({"vertices": vertices, "edges": edges})


def haar_unitary(rng: np.random.Generator, n: int) -> np.ndarray:
    z = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))
