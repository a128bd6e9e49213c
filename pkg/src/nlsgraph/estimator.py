"""Estimator-style front end to the bound-state search."""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_count, check_exponent, check_N, check_positive, check_rho_grid
from .discretization import assemble
from .graph import MetricGraph
from .solver import find_bound_states


class BoundStateSolver(BaseEstimator):
    """Search for bound states of prescribed mass on a metric graph.

    ``fit(graph)`` meshes the graph (core edges with step ``h / core_refine``),
    runs the minimax-seeded continuation for every ``N`` and keeps the
    converged, distinct solutions with positive multiplier.

    Attributes set by ``fit``: ``reports_`` (list of ``SolutionReport``),
    ``failures_`` (N -> message), ``levels_`` (``S_N``, ``L``, ``beta_N``),
    ``ops_`` (the assembled operators) and ``n_solutions_``.
    """

    def __init__(self, p=8.0, mu=1.0, h=1e-3, core_refine=25.0, N=(2, 3, 4), rho_steps=11, tol=1e-9,
                 levels_h=1e-2, random_state=0):
        self.p = p
        self.mu = mu
        self.h = h
        self.core_refine = core_refine
        self.N = N
        self.rho_steps = rho_steps
        self.tol = tol
        self.levels_h = levels_h
        self.random_state = random_state

    def _rho_grid(self):
        n = check_count(self.rho_steps, "rho_steps")
        if n == 1:
            return [1.0]
        return check_rho_grid([0.5 + 0.5 * i / (n - 1) for i in range(n)])

    def fit(self, graph: MetricGraph, y=None):
        if not isinstance(graph, MetricGraph):
            raise TypeError(f"fit expects a MetricGraph, got {type(graph).__name__}")
        p = check_exponent(self.p, supercritical=True)
        mu = check_positive(self.mu, "mu")
        h = check_positive(self.h, "h")
        refine = check_positive(self.core_refine, "core_refine")
        Ns = check_N(self.N)
        steps = {e.id: h / refine for e in graph.core_edges}
        self.ops_ = assemble(graph, h, steps)
        result = find_bound_states(self.ops_, p, mu, Ns, self._rho_grid(), seed=int(self.random_state),
                                   levels_h=check_positive(self.levels_h, "levels_h"), tol=self.tol)
        self.result_ = result
        self.reports_ = result.reports
        self.failures_ = result.failures
        self.levels_ = result.levels
        self.n_solutions_ = len(result.reports)
        return self

    def summary(self) -> list[dict]:
        check_is_fitted(self, "reports_")
        return self.result_.summary_rows()

    def write(self, directory: str | Path) -> list[Path]:
        """One JSON report and one CSV profile per solution."""
        check_is_fitted(self, "reports_")
        return [r.write(directory, f"solution_{i:02d}") for i, r in enumerate(self.reports_)]
