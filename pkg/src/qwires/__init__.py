"""Simulator for quantum dynamics on metric graphs with controllable boundary conditions.

Modules cover the pipeline end to end: graph and trace representation
(:mod:`qwires.graphs`), unitary vertex conditions (:mod:`qwires.extensions`),
gauge maps between phase-twisted and magnetic realizations
(:mod:`qwires.gauge`), finite-element operators and spectra
(:mod:`qwires.assembly`), time-dependent propagation
(:mod:`qwires.propagation`), and controllability checks plus pulse synthesis
(:mod:`qwires.control`).  The :mod:`qwires.cli` module exposes the command
line front end.
"""

__version__ = "0.1.0"

from .graphs import (
    BoundaryTrace,
    Edge,
    GraphFormatError,
    GridFunction,
    MetricGraph,
    boundary_form,
    boundary_form_traces,
    build_graph,
    trace,
)
from .extensions import (
    ProjectorTriple,
    VertexConditions,
    check_membership,
    decompose,
    delta_type_conditions,
    domain_trace,
    quasi_delta_conditions,
)
from .gauge import (
    EdgePotential,
    GaugePhase,
    apply_gauge,
    average_potential,
    chi_from_vertex_phases,
    conjugate_conditions,
    gauge_trace,
    is_simple,
    simple_subspace,
)

__all__ = [
    "__version__",
    "BoundaryTrace",
    "Edge",
    "GraphFormatError",
    "GridFunction",
    "MetricGraph",
    "boundary_form",
    "boundary_form_traces",
    "build_graph",
    "trace",
    "ProjectorTriple",
    "VertexConditions",
    "check_membership",
    "decompose",
    "delta_type_conditions",
    "domain_trace",
    "quasi_delta_conditions",
    "EdgePotential",
    "GaugePhase",
    "apply_gauge",
    "average_potential",
    "chi_from_vertex_phases",
    "conjugate_conditions",
    "gauge_trace",
    "is_simple",
    "simple_subspace",
]
