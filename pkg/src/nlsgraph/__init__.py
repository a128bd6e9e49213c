"""Bound states of the nonlinear Schroedinger equation on metric graphs."""

from .analysis import SpectralReport, beta_levels, morse_index, rayleigh_level
from .config import RunConfig
from .discretization import DiscreteOperators, assemble, energy, gradient, hessian_form, identity_residuals, pohozaev
from .estimator import BoundStateSolver
from .graph import Edge, GraphFunction, GraphGrid, GraphSpecError, MetricGraph, load_graph, tadpole_graph
from .ode import mass_threshold, orbit_mass, period, period_constant, periodic_orbit, tadpole_solution
from .solver import (
    SolutionReport,
    SolverError,
    SolverState,
    constrained_newton,
    deflated_solve,
    find_bound_states,
    rho_continuation,
    solution_report,
    verify_report,
)

__version__ = "0.1.0"
