"""Small shared helpers."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .graphs import MetricGraph


def cells_per_edge(graph: MetricGraph, cells: int | Sequence[int]) -> list[int]:
    if isinstance(cells, (int, np.integer)):
        return [int(cells)] * len(graph.edges)
    ne_list = [int(c) for c in cells]
    if len(ne_list) != len(graph.edges):
        raise ValueError("cell count list length must equal the edge count")
    return ne_list


def primes(n: int) -> list[int]:
    """First n primes (trial division; n stays small here)."""
    out: list[int] = []
    k = 2
    while len(out) < n:
        if all(k % p for p in out):
            out.append(k)
        k += 1
    return out
