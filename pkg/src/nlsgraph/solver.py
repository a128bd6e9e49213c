"""Critical points of the NLS energy on the mass sphere.

The pipeline is: seed (path families, sampled minimax paths, orbit shapes)
-> constrained Newton on the Kirchhoff system with the mass constraint
appended -> continuation in the nonlinearity weight ``rho`` from 1/2 to 1 ->
deflation to push later solves away from solutions already found.
"""

from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import linalg as spla

from .discretization import DiscreteOperators, energy, gradient, hessian_form, identity_residuals
from .graph import GraphFunction, GraphGrid

logger = logging.getLogger(__name__)

__all__ = [
    "SolverError",
    "DegenerateCriticalPoint",
    "SupercriticalEscape",
    "SolverState",
    "SolutionReport",
    "almost_multiplier",
    "project_to_sphere",
    "gradient_flow",
    "constrained_newton",
    "ContinuationResult",
    "rho_continuation",
    "bump_family",
    "core_family",
    "frame_path",
    "minimax_estimate",
    "deflated_solve",
    "truncation_diagnostic",
    "solution_report",
    "SearchResult",
    "find_bound_states",
    "load_report",
    "verify_report",
    "refine",
    "transfer",
    "distance",
    "identity_threshold",
    "default_rho_grid",
    "initial_state",
    "core_dilation",
    "FramePath",
    "MinimaxEstimate",
    "fiber_seed",
    "condition_seed",
]


class SolverError(RuntimeError):
    pass


class DegenerateCriticalPoint(SolverError):
    def __init__(self, msg: str = "degenerate critical point: singular KKT matrix (try perturbing rho)"):
        super().__init__(msg)


class SupercriticalEscape(SolverError):
    pass


@dataclass(frozen=True)
class SolverState:
    u: GraphFunction
    lam: float
    rho: float
    mu: float
    level: float
    residual: float
    iterations: int = 0
    converged: bool = False

    def vector(self, ops: DiscreteOperators) -> np.ndarray:
        return ops.vector(self.u)


def almost_multiplier(ops: DiscreteOperators, u, rho: float, p: float, mu: float) -> float:
    """``-(1/mu) E'_rho(u)[u] = (rho int_K |u|^p - |u'|^2) / mu``."""
    return (rho * ops.core_lp(u, p) - ops.dirichlet_norm(u)) / mu


def project_to_sphere(ops: DiscreteOperators, x: np.ndarray, mu: float) -> np.ndarray:
    m = ops.mass(x)
    if m <= 0:
        raise SolverError("cannot project the zero function onto the mass sphere")
    return x * math.sqrt(mu / m)


def _residual_scale(ops, x, rho, p) -> float:
    return max(1.0, ops.dual_norm(ops.stiffness @ x), ops.dual_norm(rho * ops.core_load(x, p)))


def _state(ops, x, lam, rho, p, mu, iterations=0, converged=False) -> SolverState:
    r = gradient(ops, x, rho, p, lam)
    return SolverState(
        u=ops.function(x),
        lam=float(lam),
        rho=float(rho),
        mu=float(mu),
        level=energy(ops, x, rho, p),
        residual=ops.dual_norm(r),
        iterations=iterations,
        converged=converged,
    )


def initial_state(ops: DiscreteOperators, u, rho: float, p: float, mu: float, lam: float | None = None) -> SolverState:
    """Rescale ``u`` onto the mass sphere and attach the almost multiplier (or ``lam``)."""
    x = project_to_sphere(ops, ops.vector(u).copy(), mu)
    lam = almost_multiplier(ops, x, rho, p, mu) if lam is None else lam
    return _state(ops, x, lam, rho, p, mu)


def gradient_flow(ops: DiscreteOperators, u0, rho: float, p: float, mu: float, dt: float = 0.1,
                  max_steps: int = 1000, tol: float = 1e-8, escape_factor: float = 1e4,
                  callback=None) -> SolverState:
    """Projected steepest descent of ``E_rho`` on the mass sphere.

    Each step moves along the H1-preconditioned constrained gradient
    ``(K + M)^-1 r(u, lam(u))`` with ``lam`` the almost multiplier, then
    rescales to mass ``mu``. Descent in the supercritical regime usually
    escapes: the derivative norm blows up while the energy drops without
    bound, which raises :class:`SupercriticalEscape`.

    ``callback(step, residual, lam, level)`` is called before every step.
    """
    x = project_to_sphere(ops, ops.vector(u0).copy(), mu)
    solve = spla.splu((ops.stiffness + ops.massmat).tocsc()).solve
    d0 = ops.dirichlet_norm(x)
    for step in range(max_steps + 1):
        lam = almost_multiplier(ops, x, rho, p, mu)
        r = gradient(ops, x, rho, p, lam)
        res = ops.dual_norm(r)
        if callback is not None:
            callback(step, res, lam, energy(ops, x, rho, p))
        if res <= tol * _residual_scale(ops, x, rho, p):
            return _state(ops, x, lam, rho, p, mu, iterations=step, converged=True)
        if step == max_steps:
            break
        x = project_to_sphere(ops, x - dt * solve(r), mu)
        if ops.dirichlet_norm(x) > escape_factor * max(d0, 1.0):
            raise SupercriticalEscape(
                f"supercritical escape after {step + 1} steps: |u'|^2 grew from {d0:.3g} to {ops.dirichlet_norm(x):.3g}"
            )
    return _state(ops, x, lam, rho, p, mu, iterations=max_steps, converged=False)


def _kkt_matrix(ops, x, rho, p, lam):
    A = hessian_form(ops, x, rho, p, lam)
    Mx = ops.lumped * x
    col = sparse.csr_matrix(Mx[:, None])
    return sparse.bmat([[A, col], [col.T, None]]).tocsc()


def _newton_direction(ops, x, lam, rho, p, mu):
    # Block elimination of the bordered system; the dense border column makes a
    # direct LU of the full KKT matrix fill in badly.
    r = gradient(ops, x, rho, p, lam)
    g = 0.5 * (ops.mass(x) - mu)
    Mx = ops.lumped * x
    try:
        lu = spla.splu(hessian_form(ops, x, rho, p, lam).tocsc())
        a, b = lu.solve(np.column_stack([-r, Mx])).T
        denom = float(Mx @ b)
        if not np.isfinite(denom) or abs(denom) <= 1e-13 * float(Mx @ Mx):
            raise RuntimeError("singular Schur complement")
        dlam = (float(Mx @ a) + g) / denom
        d = np.append(a - dlam * b, dlam)
    except RuntimeError:
        # the Hessian alone may be singular while the KKT matrix is not
        try:
            d = spla.splu(_kkt_matrix(ops, x, rho, p, lam)).solve(-np.append(r, g))
        except RuntimeError:
            raise DegenerateCriticalPoint() from None
    if not np.all(np.isfinite(d)):
        raise DegenerateCriticalPoint()
    return d[:-1], d[-1]


def _deflation(ops, x, known, mu):
    """Deflation factor ``prod (1 + mu / |u - s u_k|^2)`` over ``s = +-1`` and its log-gradient."""
    factor, glog = 1.0, np.zeros_like(x)
    M = ops.lumped
    for y in known:
        for s in (1.0, -1.0):
            diff = x - s * y
            # a seed sitting on a known solution gets a huge but finite factor
            d2 = max(float(diff @ (M * diff)) / mu, 1e-30)
            factor *= 1.0 + 1.0 / d2
            glog += -2.0 / (mu * (d2 * d2 + d2)) * (M * diff)
    return factor, glog


def constrained_newton(ops: DiscreteOperators, state: SolverState, p: float, tol: float = 1e-9,
                       maxiter: int = 30, known=(), min_step: float = 1.0 / 1024,
                       positive: bool = False, floor_factor: float = 100.0) -> SolverState:
    """Newton on ``{K u + lam M u - rho N(u) = 0, mass(u) = mu}`` in the unknowns ``(u, lam)``.

    Every trial point is rescaled onto the mass sphere, and a damped step is
    accepted only if it lowers the merit ``|r|_{M^-1}`` (multiplied by the
    deflation factor when ``known`` solutions are given). Convergence is
    declared once the residual is below ``tol`` relative to the size of the
    terms in the equation, or when the line search stalls within
    ``floor_factor`` of that level (the rounding floor of the residual).

    With ``positive=True`` a step may lower ``lam`` by at most half, which
    keeps the iteration away from the negative-multiplier standing waves
    created by the half-line truncation.

    Raises
    ------
    DegenerateCriticalPoint
        If the KKT matrix is singular.
    """
    rho, mu = state.rho, state.mu
    known = [np.asarray(ops.vector(k)) for k in known]
    x = project_to_sphere(ops, state.vector(ops).copy(), mu)
    lam = state.lam

    def merit(x, lam):
        res = ops.dual_norm(gradient(ops, x, rho, p, lam))
        return res * (_deflation(ops, x, known, mu)[0] if known else 1.0), res

    f, res = merit(x, lam)
    for it in range(maxiter + 1):
        if res <= tol * _residual_scale(ops, x, rho, p):
            return _state(ops, x, lam, rho, p, mu, iterations=it, converged=True)
        if it == maxiter:
            break
        dx, dlam = _newton_direction(ops, x, lam, rho, p, mu)
        if known:
            factor, glog = _deflation(ops, x, known, mu)
            c = float(glog @ dx)
            if c < 1.0:
                tau = 1.0 / (1.0 - c)
                dx, dlam = tau * dx, tau * dlam
        step = 1.0
        if positive and lam > 0 and dlam < -0.5 * lam:
            step = -0.5 * lam / dlam
        while step >= min_step:
            xn = project_to_sphere(ops, x + step * dx, mu)
            ln = lam + step * dlam
            fn, rn = merit(xn, ln)
            if fn < f:
                break
            step *= 0.5
        else:
            logger.debug("line search stalled at iteration %d, residual %.3e", it, res)
            stalled_ok = res <= floor_factor * tol * _residual_scale(ops, x, rho, p)
            return _state(ops, x, lam, rho, p, mu, iterations=it, converged=stalled_ok)
        x, lam, f, res = xn, ln, fn, rn
    return _state(ops, x, lam, rho, p, mu, iterations=it, converged=False)


@dataclass
class ContinuationResult:
    states: list
    failed_at: float | None = None

    @property
    def ok(self) -> bool:
        return self.failed_at is None and bool(self.states) and self.states[-1].converged

    @property
    def final(self) -> SolverState:
        return self.states[-1]

    def trace(self) -> list[dict]:
        return [
            {"rho": s.rho, "lambda": s.lam, "level": s.level, "residual": s.residual, "iterations": s.iterations}
            for s in self.states
        ]


def default_rho_grid(steps: int = 11) -> list[float]:
    return list(np.linspace(0.5, 1.0, steps))


def rho_continuation(ops: DiscreteOperators, p: float, mu: float, rho_grid, seed, lam0: float | None = None,
                     tol: float = 1e-9, max_halvings: int = 3, known=(), **newton_options) -> ContinuationResult:
    """Solve at ``rho_grid[0]`` from ``seed`` and follow the branch along the grid.

    A failed step is retried from the last converged point with the step in
    ``rho`` halved, at most ``max_halvings`` times. On breakdown the partial
    trace is returned with ``failed_at`` set. Extra keyword arguments go to
    :func:`constrained_newton`.
    """
    grid = [float(r) for r in rho_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("rho grid must be nonempty and strictly increasing")
    if grid[0] < 0.5 - 1e-12 or abs(grid[-1] - 1.0) > 1e-12:
        raise ValueError("rho grid must lie in [1/2, 1] and end at 1")
    start = seed if isinstance(seed, SolverState) else initial_state(ops, seed, grid[0], p, mu, lam0)
    start = replace(start, rho=grid[0])
    try:
        first = constrained_newton(ops, start, p, tol=tol, known=known, **newton_options)
    except DegenerateCriticalPoint:
        return ContinuationResult([start], failed_at=grid[0])
    states = [first]
    if not first.converged:
        return ContinuationResult(states, failed_at=grid[0])
    for target in grid[1:]:
        prev = states[-1]
        halvings = 0
        while prev.rho < target:
            step = (target - prev.rho) / 2**halvings
            rho = min(target, prev.rho + step)
            try:
                nxt = constrained_newton(ops, replace(prev, rho=rho), p, tol=tol, known=known, **newton_options)
            except DegenerateCriticalPoint:
                nxt = None
            if nxt is not None and nxt.converged:
                if rho < target:
                    states.append(nxt)
                prev = nxt
                continue
            halvings += 1
            if halvings > max_halvings:
                return ContinuationResult(states, failed_at=rho)
        states.append(prev)
    return ContinuationResult(states)


# --------------------------------------------------------------------------
# path families

def _sin2(x: np.ndarray, width: float, mass: float) -> np.ndarray:
    """``c sin^2(pi x / width)`` on ``[0, width]`` with L2 mass ``mass``, zero elsewhere."""
    c = math.sqrt(8.0 * mass / (3.0 * width))
    inside = (x > 0.0) & (x < width)
    return np.where(inside, c * np.sin(np.pi * np.clip(x, 0.0, width) / width) ** 2, 0.0)


def _sin2_deriv_sq(width: float, mass: float) -> float:
    return 4.0 * math.pi**2 * mass / (3.0 * width**2)


def _sin2_lp(width: float, mass: float, p: float) -> float:
    # int_0^1 sin^(2p)(pi s) ds = Gamma(p + 1/2) / (sqrt(pi) Gamma(p + 1))
    c2 = 8.0 * mass / (3.0 * width)
    frac = math.exp(math.lgamma(p + 0.5) - math.lgamma(p + 1.0)) / math.sqrt(math.pi)
    return c2 ** (p / 2.0) * width * frac


def _bump_on_edge(grid: GraphGrid, edge_id: str, start: float, width: float, mu: float, min_points: int = 8):
    step = grid.step(edge_id)
    if width < min_points * step:
        raise ValueError(
            f"bump of width {width:.3g} on edge {edge_id!r} is resolved by fewer than {min_points} "
            f"samples (step {step:.3g}); refine that edge"
        )
    u = grid.sample(lambda e, x: _sin2(x - start, width, mu) if e.id == edge_id else np.zeros_like(x))
    return u


def _normalized(grid: GraphGrid, u: GraphFunction, mu: float) -> GraphFunction:
    from .graph import mass

    return u * math.sqrt(mu / mass(u))


def bump_family(grid: GraphGrid, n: int, beta: float, mu: float, halfline: str | None = None) -> list[GraphFunction]:
    """``n`` translated dilates of a ``sin^2`` bump on a half-line.

    Each bump has mass ``mu`` and derivative norm ``beta``; bump ``i``
    occupies ``[(i-1)/tau, i/tau]`` with ``tau = beta / |phi'|``, where
    ``phi`` is the bump of mass ``mu`` on ``[0, 1]``. Since the supports are
    disjoint and the half-line carries no nonlinearity, every unit
    combination has energy ``beta^2 / 2``. Discrete bumps are rescaled to
    mass exactly ``mu``.

    Raises
    ------
    ValueError
        If the half-line is shorter than ``n / tau``.
    """
    if n < 1 or beta <= 0 or mu <= 0:
        raise ValueError("need n >= 1, beta > 0 and mu > 0")
    graph = grid.graph
    if not graph.halflines:
        raise ValueError("the graph has no half-line")
    edge = graph.edge(halfline) if halfline else max(graph.halflines, key=lambda e: e.length)
    tau = beta / math.sqrt(_sin2_deriv_sq(1.0, mu))
    width = 1.0 / tau
    if n * width > edge.length:
        raise ValueError(
            f"half-line {edge.id!r} is truncated at {edge.length:g}; {n} bumps with beta={beta:g} need {n * width:.4g}"
        )
    return [_normalized(grid, _bump_on_edge(grid, edge.id, i * width, width, mu), mu) for i in range(n)]


@dataclass(frozen=True)
class CoreDilation:
    """Dilation data of the core family: ``t``, bump ``width`` and slot size on ``edge``."""

    edge: str
    t: float
    t0: float
    width: float
    slot: float


def core_dilation(graph, n: int, beta_bar: float, b_bar: float, mu: float, p: float,
                  edge: str | None = None, slots: int | None = None) -> CoreDilation:
    """Choose ``t = max{1, beta_bar / |phi'|, T0}`` for the core family (no sampling needed).

    ``phi`` is the ``sin^2`` bump of mass ``mu`` filling one of ``slots``
    equal slots of the edge. ``T0`` is the largest ``t`` at which
    ``(t^2/2)|phi'|^2 - C t^((p-2)/2) |phi|_p^p / (2p)`` equals ``b_bar``,
    with ``C = n^(1 - p/2)`` the minimum of ``sum |a_i|^p`` on the unit
    sphere of ``R^n``; beyond it the bound stays below ``b_bar``.
    """
    if not p > 6:
        raise ValueError("the core family needs p > 6")
    slots = n if slots is None else slots
    if slots < n:
        raise ValueError("need at least as many slots as bumps")
    core = [e for e in graph.core_edges]
    if not core:
        raise ValueError("the graph has no bounded core edge")
    e = graph.edge(edge) if edge else max(core, key=lambda e: e.length)
    slot = e.length / slots
    D2 = _sin2_deriv_sq(slot, mu)
    P = _sin2_lp(slot, mu, p)
    C = n ** (1.0 - p / 2.0)
    q = (p - 2.0) / 2.0

    def bound(t: float) -> float:
        return 0.5 * t * t * D2 - C * t**q * P / (2.0 * p) - b_bar

    # the bound rises to a single maximum and then decreases to -inf
    t_peak = (2.0 * p * D2 / (q * C * P)) ** (1.0 / (q - 2.0))
    if bound(t_peak) <= 0.0:
        t0 = 0.0
    else:
        hi = 2.0 * t_peak
        while bound(hi) > 0.0:
            hi *= 2.0
        from scipy.optimize import brentq

        t0 = brentq(bound, t_peak, hi, xtol=1e-14 * hi, rtol=1e-14)
        # land on the safe side of the root
        t0 = t0 * (1.0 + 1e-12)
    t = max(1.0, beta_bar / math.sqrt(D2), t0)
    return CoreDilation(edge=e.id, t=t, t0=t0, width=slot / t, slot=slot)


def core_family(grid: GraphGrid, n: int, beta_bar: float, b_bar: float, mu: float, p: float,
                edge: str | None = None, slots: int | None = None) -> list[GraphFunction]:
    """``n`` dilated bumps packed in one core edge, bump ``i`` starting at ``(i-1) * slot``.

    Every unit combination has derivative norm at least ``beta_bar`` and
    energy at most ``b_bar`` for all ``rho`` in ``[1/2, 1]`` (see
    :func:`core_dilation`).
    """
    d = core_dilation(grid.graph, n, beta_bar, b_bar, mu, p, edge, slots)
    return [_normalized(grid, _bump_on_edge(grid, d.edge, i * d.slot, d.width, mu), mu) for i in range(n)]


def _frame_rotation(Uc: np.ndarray, Vc: np.ndarray) -> np.ndarray:
    """A rotation ``R`` with ``R Uc = Vc`` (orthonormal columns).

    The complement map is the Procrustes fit of ``Vc -> -Uc``, which for
    disjoint frames makes ``R`` the quarter turn in every plane
    ``(u_i, v_i)``; the path is then ``cos(pi t/2) u_i + sin(pi t/2) v_i``.
    """
    m, d = Uc.shape
    R = Vc @ Uc.T
    if m == d:
        return R
    Up, Vp = linalg.null_space(Uc.T), linalg.null_space(Vc.T)
    W, _, Zt = np.linalg.svd(-(Vp.T @ Uc) @ (Up.T @ Vc).T)
    O = W @ Zt
    if np.linalg.det(R + Vp @ O @ Up.T) < 0:
        W[:, -1] *= -1.0
        O = W @ Zt
    return R + Vp @ O @ Up.T


def _log_rotation(R: np.ndarray) -> np.ndarray:
    """Real skew logarithm of ``R`` in ``SO(m)``, via the real Schur form.

    Eigenvalues ``-1`` (always an even number) are paired into half turns,
    where ``scipy.linalg.logm`` would return a complex matrix.
    """
    T, Z = linalg.schur(R, output="real")
    m = len(R)
    L = np.zeros((m, m))
    minus = []
    i = 0
    while i < m:
        if i + 1 < m and abs(T[i + 1, i]) > 1e-12:
            theta = math.atan2(T[i + 1, i], T[i, i])
            L[i, i + 1], L[i + 1, i] = -theta, theta
            i += 2
            continue
        if T[i, i] < 0:
            minus.append(i)
        i += 1
    for a, b in zip(minus[::2], minus[1::2]):
        L[a, b], L[b, a] = -math.pi, math.pi
    L = Z @ L @ Z.T
    return 0.5 * (L - L.T)


class FramePath:
    """Odd path ``gamma(t, a) = sum_i a_i R(t) u_i`` with ``R(t)`` a rotation from ``I`` to ``u_i -> v_i``.

    The rotation lives on the span of both frames (L2 geometry) and is the
    one-parameter subgroup ``expm(t log R)``. When the spans coincide and
    the frame change is orientation reversing, one extra direction is added
    so the map extends to ``SO``.
    """

    def __init__(self, ops: DiscreteOperators, u_frame, v_frame, rtol: float = 1e-8, seed: int = 0):
        if len(u_frame) != len(v_frame) or not u_frame:
            raise ValueError("frames must be nonempty and of equal size")
        self.ops = ops
        s = np.sqrt(ops.lumped)
        U = np.column_stack([ops.vector(u) for u in u_frame]) * s[:, None]
        V = np.column_stack([ops.vector(v) for v in v_frame]) * s[:, None]
        mu = float(np.mean(np.sum(U * U, axis=0)))
        for name, F in (("first", U), ("second", V)):
            G = F.T @ F
            if np.max(np.abs(G - mu * np.eye(len(G)))) > rtol * mu:
                raise ValueError(f"{name} frame is not orthogonal with equal masses (tolerance {rtol:g})")
        self.mu = mu
        d = U.shape[1]
        Q, sv, _ = np.linalg.svd(np.column_stack([U, V]), full_matrices=False)
        Q = Q[:, sv > 1e-10 * sv[0]]
        Uc, Vc = Q.T @ U / math.sqrt(mu), Q.T @ V / math.sqrt(mu)
        if Q.shape[1] == d and np.linalg.det(Vc.T @ Uc) < 0:
            # equal spans with an orientation-reversing change: borrow one more direction
            extra = np.random.default_rng(seed).standard_normal(U.shape[0])
            extra -= Q @ (Q.T @ extra)
            Q = np.column_stack([Q, extra / np.linalg.norm(extra)])
            Uc, Vc = np.vstack([Uc, np.zeros(d)]), np.vstack([Vc, np.zeros(d)])
        self.generator = _log_rotation(_frame_rotation(Uc, Vc))
        if np.max(np.abs(linalg.expm(self.generator) @ Uc - Vc)) > 1e-8:
            raise SolverError("could not build a rotation path between the frames")
        self.basis = Q / s[:, None]
        self.Uc = Uc
        self.dim = d

    def coefficients(self, t: float, a) -> np.ndarray:
        a = np.asarray(a, dtype=float)
        if a.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} coefficients")
        return math.sqrt(self.mu) * (linalg.expm(t * self.generator) @ (self.Uc @ a))

    def vector(self, t: float, a) -> np.ndarray:
        return self.basis @ self.coefficients(t, a)

    def __call__(self, t: float, a) -> GraphFunction:
        return self.ops.function(self.vector(t, a))


def frame_path(ops: DiscreteOperators, u_frame, v_frame, t: float, a) -> GraphFunction:
    """One point of the rotation path between two L2-orthogonal frames of equal mass."""
    if not 0.0 <= t <= 1.0:
        raise ValueError("t must lie in [0, 1]")
    return FramePath(ops, u_frame, v_frame)(t, a)


def unit_samples(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Coordinate vectors, diagonal directions and random points on the unit sphere, one per row."""
    if dim == 1:
        return np.ones((1, 1))
    rng = np.random.default_rng(seed)
    rows = [np.eye(dim), np.ones((1, dim)) / math.sqrt(dim)]
    rand = rng.standard_normal((max(count - dim - 1, 0), dim))
    rows.append(rand / np.linalg.norm(rand, axis=1, keepdims=True))
    return np.vstack(rows)


@dataclass
class MinimaxEstimate:
    c_upper: float
    argmax: GraphFunction
    t: float
    a: np.ndarray
    endpoint_energies: tuple[float, float]
    beta_N: float
    core_weights: np.ndarray = field(default=None, repr=False)
    dilation: CoreDilation | None = None


def minimax_estimate(ops: DiscreteOperators, p: float, mu: float, rho: float, N: int, beta_N: float,
                     t_samples: int = 41, a_samples: int = 24, seed: int = 0) -> MinimaxEstimate:
    """Sampled maximum of ``E_rho`` over one admissible path of the ``N``-th minimax class.

    ``gamma_0`` is the half-line family with ``beta = 1`` and ``gamma_1`` the
    core family with ``beta_bar = 2 beta_N``, ``b_bar = 1`` (``N - 1`` bumps
    in ``N`` slots). The energy is sampled on a ``t`` grid for each sampled
    ``a``; around the best grid point it is then maximized in ``t``. The
    value is the largest energy seen on this path, so refining the samples
    can only raise it.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    grid = ops.grid
    u_frame = bump_family(grid, N - 1, 1.0, mu)
    v_frame = core_family(grid, N - 1, 2.0 * beta_N, 1.0, mu, p, slots=N)
    path = FramePath(ops, u_frame, v_frame)
    # the energy only needs K and the core values, so work in path coordinates
    Kc = path.basis.T @ (ops.stiffness @ path.basis)

    def E(t, a):
        c = path.coefficients(t, a)
        return 0.5 * float(c @ Kc @ c) - rho / p * ops.core_lp(path.basis @ c, p)

    ts = np.linspace(0.0, 1.0, t_samples)
    best = (-math.inf, 0.0, None)
    ends = [-math.inf, -math.inf]
    for a in unit_samples(N - 1, a_samples, seed):
        vals = np.array([E(t, a) for t in ts])
        ends = [max(ends[0], vals[0]), max(ends[1], vals[-1])]
        i = int(np.argmax(vals))
        if vals[i] > best[0]:
            best = (vals[i], ts[i], a)
    from scipy.optimize import minimize_scalar

    _, t_best, a_best = best
    lo, hi = max(0.0, t_best - 1.0 / (t_samples - 1)), min(1.0, t_best + 1.0 / (t_samples - 1))
    res = minimize_scalar(lambda t: -E(t, a_best), bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
    if -res.fun > best[0]:
        best = (-res.fun, float(res.x), a_best)
    c_upper, t_best, a_best = best
    top = path.vector(t_best, a_best)
    weights = np.array([ops.inner(top, v) for v in v_frame]) / mu
    return MinimaxEstimate(
        c_upper=float(c_upper),
        argmax=ops.function(top),
        t=float(t_best),
        a=np.asarray(a_best),
        endpoint_energies=(float(ends[0]), float(ends[1])),
        beta_N=float(beta_N),
        core_weights=weights,
        dilation=core_dilation(grid.graph, N - 1, 2.0 * beta_N, 1.0, mu, p, slots=N),
    )


def fiber_seed(ops: DiscreteOperators, estimate: MinimaxEstimate, p: float, rho: float, mu: float) -> GraphFunction:
    """Newton seed from a minimax estimate: its core part, moved to the top of the dilation fiber.

    The core component of the argmax is ``sum c_i phi_i^t``. Keeping the
    weights ``c`` (renormalized), the common dilation is replaced by the
    maximizer ``s`` of ``E_rho(sum c_i phi_i^s)``: the point of the
    mass-preserving dilation orbit where ``|u'|^2 = rho (p-2)/(2p) int_K |u|^p``,
    the relation a bound state concentrated inside one edge satisfies up to
    vertex terms. Half-line components are dropped, and the ``k`` bumps are
    centred at ``(j + 1/2) len / k`` so the seed is reflection symmetric and
    away from the vertices (bumps inside an edge are only exponentially
    pinned, so Newton cannot be asked to slide them far).
    """
    d = estimate.dilation
    c = np.asarray(estimate.core_weights, dtype=float)
    if d is None or c is None or not np.any(c):
        raise ValueError("estimate carries no core weights")
    c = c / np.linalg.norm(c)
    A = _sin2_deriv_sq(d.slot, mu)
    B = float(np.sum(np.abs(c) ** p)) * _sin2_lp(d.slot, mu, p)
    q = (p - 2.0) / 2.0
    s = max(1.0, (p * A / (rho * q * B)) ** (1.0 / (q - 2.0)))
    grid = ops.grid
    share = grid.graph.edge(d.edge).length / len(c)
    width = min(d.slot / s, share)
    u = grid.zeros()
    for i, ci in enumerate(c):
        if ci != 0.0:
            start = (i + 0.5) * share - 0.5 * width
            u = u + ci * _bump_on_edge(grid, d.edge, start, width, mu)
    return _normalized(grid, u, mu)


def condition_seed(ops: DiscreteOperators, u, lam: float = 1.0, floor: float = 1.0) -> GraphFunction:
    """Keep ``u`` on bounded edges and replace every half-line by ``u(v) exp(-sqrt(lam) x)``.

    Half-line mass in a seed tends to pull Newton onto the standing waves of
    the truncated half-line (negative multipliers, supported near the far
    end). The decay rate uses ``lam`` clipped below at ``floor``.
    """
    if not isinstance(u, GraphFunction):
        u = ops.function(u)
    grid = ops.grid
    rate = math.sqrt(max(lam, floor))
    values = dict(u.values)
    for e in grid.graph.halflines:
        x = grid.arclength(e.id)
        tail = u.values[e.id][0] * np.exp(-rate * x)
        tail[-1] = 0.0
        values[e.id] = tail
    return GraphFunction(grid, values)


# --------------------------------------------------------------------------
# diagnostics, reports, multiplicity

def truncation_diagnostic(u: GraphFunction, fraction: float = 0.1) -> float:
    """``max |u|`` over the outer ``fraction`` of every half-line (0 without half-lines).

    A bound state decays like ``exp(-sqrt(lam) x)`` on half-lines, so a
    visible value near the Dirichlet end means the truncation is felt.
    """
    out = 0.0
    for e in u.graph.halflines:
        x = u.grid.arclength(e.id)
        band = x >= (1.0 - fraction) * e.length
        out = max(out, float(np.max(np.abs(u.values[e.id][band]))))
    return out


def transfer(u: GraphFunction, grid: GraphGrid) -> GraphFunction:
    """Piecewise-linear interpolation of ``u`` onto another grid of the same graph."""
    values = {}
    for e in grid.graph.edges:
        values[e.id] = np.interp(grid.arclength(e.id), u.grid.arclength(e.id), u.values[e.id])
    return GraphFunction(grid, values)


def distance(ops: DiscreteOperators, u, v) -> float:
    """Sign-aligned L2 distance ``min(|u - v|, |u + v|)``."""
    x, y = ops.vector(u), ops.vector(v)
    return math.sqrt(min(ops.mass(x - y), ops.mass(x + y)))


def _relative_gradient(ops, x, rho, p, lam) -> float:
    return ops.dual_norm(gradient(ops, x, rho, p, lam)) / _residual_scale(ops, x, rho, p)


@dataclass
class SolutionReport:
    """A converged state with its verification data.

    ``h`` is the nominal mesh step (``edge_steps`` may refine single edges);
    the identity thresholds are stated in terms of it.
    """

    state: SolverState
    p: float
    h: float
    edge_steps: dict
    identities: dict
    gradient_residual: float
    morse: int
    constrained_morse: int
    eigenvalues: list
    constrained_eigenvalues: list
    truncation: float
    provenance: dict = field(default_factory=dict)

    @property
    def u(self) -> GraphFunction:
        return self.state.u

    @property
    def graph(self):
        return self.state.u.graph

    @property
    def identity_threshold(self) -> float:
        return identity_threshold(self.h, self.truncation)

    def passes(self) -> bool:
        return all(v <= self.identity_threshold for v in self.identities.values())

    def to_dict(self, profile: str | None = None) -> dict:
        s = self.state
        return {
            "kind": "solution",
            "graph": s.u.graph.to_dict(),
            "p": self.p,
            "mu": s.mu,
            "rho": s.rho,
            "h": self.h,
            "edge_steps": dict(self.edge_steps),
            "lambda": s.lam,
            "level": s.level,
            "residual": s.residual,
            "gradient_residual": self.gradient_residual,
            "iterations": s.iterations,
            "converged": s.converged,
            "identities": dict(self.identities),
            "identity_threshold": self.identity_threshold,
            "morse": self.morse,
            "constrained_morse": self.constrained_morse,
            "eigenvalues": [float(v) for v in self.eigenvalues[:20]],
            "constrained_eigenvalues": [float(v) for v in self.constrained_eigenvalues[:20]],
            "truncation": self.truncation,
            "provenance": self.provenance,
            "profile": profile,
        }

    def write(self, directory: str | Path, stem: str) -> Path:
        """Write ``<stem>.json`` and the per-edge profile ``<stem>.csv``; returns the JSON path."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        csv_path = directory / f"{stem}.csv"
        self.state.u.to_csv(csv_path)
        json_path = directory / f"{stem}.json"
        json_path.write_text(json.dumps(self.to_dict(profile=csv_path.name), indent=2, sort_keys=True) + "\n")
        return json_path


def identity_threshold(h: float, truncation: float) -> float:
    """Acceptance level ``100 h^2 + 10 * truncation`` for the identity residuals."""
    return 100.0 * h * h + 10.0 * truncation


def nominal_step(h: float, edge_steps: dict | None) -> float:
    return max([h] + list((edge_steps or {}).values()))


def solution_report(ops: DiscreteOperators, state: SolverState, p: float, h: float | None = None,
                    provenance: dict | None = None, spectral: bool = True) -> SolutionReport:
    """Evaluate identities, Morse data and the truncation diagnostic of ``state``."""
    from .analysis import morse_index

    grid = ops.grid
    steps = {eid: grid.step(eid) for eid in grid.intervals}
    h = max(steps.values()) if h is None else h
    edge_steps = {k: v for k, v in steps.items() if not math.isclose(v, h, rel_tol=1e-9)}
    x = state.vector(ops)
    ids = identity_residuals(ops, state.u, state.rho, p, state.lam)
    free, cons = [], []
    if spectral:
        free = morse_index(ops, x, state.rho, p, state.lam).eigenvalues
        cons = morse_index(ops, x, state.rho, p, state.lam, constrained=True).eigenvalues
    return SolutionReport(
        state=state,
        p=p,
        h=h,
        edge_steps=edge_steps,
        identities=ids,
        gradient_residual=_relative_gradient(ops, x, state.rho, p, state.lam),
        morse=int(np.sum(np.asarray(free) < 0)),
        constrained_morse=int(np.sum(np.asarray(cons) < 0)),
        eigenvalues=list(map(float, free)),
        constrained_eigenvalues=list(map(float, cons)),
        truncation=truncation_diagnostic(state.u),
        provenance=dict(provenance or {}),
    )


def load_report(path: str | Path):
    """Read a report written by :meth:`SolutionReport.write`.

    Returns ``(record, ops, u)`` with the operators re-assembled on the stored
    grid and the profile read from the companion CSV.
    """
    from .discretization import assemble
    from .graph import load_graph

    path = Path(path)
    text = path.read_text()
    if not text.strip():
        raise ValueError(f"{path}: empty report")
    try:
        rec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a JSON report ({exc})") from None
    missing = {"graph", "p", "mu", "rho", "h", "lambda", "profile"} - set(rec)
    if missing:
        raise ValueError(f"{path}: report lacks {sorted(missing)}")
    graph = load_graph(rec["graph"])
    ops = assemble(graph, rec["h"], rec.get("edge_steps") or None)
    u = GraphFunction.from_csv(ops.grid, path.parent / rec["profile"])
    return rec, ops, u


def verify_report(path: str | Path, lam_rtol: float = 1e-6, grad_tol: float | None = None,
                  spectral: bool = True) -> dict:
    """Recompute residuals and Morse data from a stored report.

    Identities and the relative gradient residual are held to
    ``100 h^2 + 10 * truncation`` (``grad_tol`` overrides the latter). For
    solver reports the multiplier recomputed from the Nehari identity must
    match the stored one to ``lam_rtol``; exact-solution reports carry their
    multiplier by construction and skip that check.

    Returns ``{"checks": {name: bool}, "values": {...}, "ok": bool}``.
    """
    rec, ops, u = load_report(path)
    p, rho, lam, mu = rec["p"], rec["rho"], rec["lambda"], rec["mu"]
    x = ops.vector(u)
    ids = identity_residuals(ops, u, rho, p, lam)
    trunc = truncation_diagnostic(u)
    thr = identity_threshold(nominal_step(rec["h"], rec.get("edge_steps")), trunc)
    m = ops.mass(x)
    values = {
        **{k: float(v) for k, v in ids.items()},
        "threshold": thr,
        "gradient": _relative_gradient(ops, x, rho, p, lam),
        "mass_error": abs(m - mu) / mu,
        "nehari_lambda": almost_multiplier(ops, x, rho, p, m),
        "truncation": trunc,
    }
    checks = {k: ids[k] <= thr for k in ("nehari", "pohozaev", "link")}
    checks["gradient"] = values["gradient"] <= (thr if grad_tol is None else grad_tol)
    checks["mass"] = values["mass_error"] <= 1e-8
    if rec.get("kind", "solution") == "solution":
        checks["lambda"] = abs(values["nehari_lambda"] - lam) <= lam_rtol * max(abs(lam), 1.0)
    if spectral and "morse" in rec:
        from .analysis import morse_index

        m_free = morse_index(ops, x, rho, p, lam).morse
        m_cons = morse_index(ops, x, rho, p, lam, constrained=True).morse
        values["morse"], values["constrained_morse"] = m_free, m_cons
        checks["morse"] = m_free == rec["morse"] and m_cons == rec["constrained_morse"]
    return {"checks": checks, "values": values, "ok": all(checks.values())}


def perturbed(ops: DiscreteOperators, u, scale: float, seed: int = 0) -> GraphFunction:
    """``u`` plus smooth random noise of relative size ``scale`` on the bounded edges."""
    rng = np.random.default_rng(seed)
    x = ops.vector(u).copy()
    noise = rng.standard_normal(ops.n)
    # smooth by one H1 solve so the perturbation does not dominate |u'|
    noise = spla.splu((ops.stiffness + ops.massmat).tocsc()).solve(ops.lumped * noise)
    noise *= scale * math.sqrt(ops.mass(x) / max(ops.mass(noise), 1e-300))
    return ops.function(x + noise)


def deflated_solve(ops: DiscreteOperators, p: float, mu: float, known, seed, rho_grid=None,
                   restarts: int = 2, distinct: float = 1e-3, rng_seed: int = 0, tag: str = "seed",
                   **newton_options) -> tuple[SolutionReport, ContinuationResult]:
    """Continuation from ``seed`` with the residual deflated at ``+-u_k`` for every known ``u_k``.

    A result closer than ``distinct * sqrt(mu)`` (sign aligned) to a known
    solution triggers a restart from a perturbed seed.

    Raises
    ------
    SolverError
        If no new converged solution is found within ``restarts`` restarts.
    """
    known = list(known)
    grid_r = default_rho_grid() if rho_grid is None else rho_grid
    newton_options.setdefault("positive", True)
    current = seed
    last = None
    for attempt in range(restarts + 1):
        res = rho_continuation(ops, p, mu, grid_r, current, known=known, **newton_options)
        last = res
        if res.ok:
            d = min((distance(ops, res.final.u, k) for k in known), default=math.inf)
            if d > distinct * math.sqrt(mu):
                prov = {"seed": tag, "attempt": attempt, "trace": res.trace(), "max_lambda": max(s.lam for s in res.states)}
                return solution_report(ops, res.final, p, provenance=prov), res
            logger.info("%s: converged onto a known solution (distance %.2e); restarting", tag, d)
        current = perturbed(ops, seed, 0.05 * (attempt + 1), seed=rng_seed + attempt)
    where = "" if last is None or last.failed_at is None else f" (continuation broke down at rho={last.failed_at:.4g})"
    raise SolverError(f"{tag}: no new solution found after {restarts + 1} attempts{where}")


def refine(ops: DiscreteOperators, state: SolverState, p: float, **newton_options) -> tuple[DiscreteOperators, SolverState]:
    """Re-solve ``state`` on the grid with every step halved, starting from its interpolant."""
    from .discretization import assemble

    grid = ops.grid
    steps = {eid: grid.step(eid) for eid in grid.intervals}
    h = max(steps.values())
    fine = assemble(grid.graph, h / 2.0, {k: v / 2.0 for k, v in steps.items()})
    newton_options.setdefault("positive", True)
    newton_options.setdefault("maxiter", 60)
    start = initial_state(fine, transfer(state.u, fine.grid), state.rho, p, state.mu, lam=state.lam)
    out = constrained_newton(fine, start, p, **newton_options)
    if not out.converged:
        raise SolverError(f"re-solve on the refined grid did not converge (residual {out.residual:.2e})")
    return fine, out


@dataclass
class SearchResult:
    """Outcome of :func:`find_bound_states`: reports in discovery order and per-N failures."""

    reports: list
    failures: dict
    levels: dict

    def summary_rows(self) -> list[dict]:
        rows = []
        for i, r in enumerate(self.reports):
            rows.append({
                "index": i,
                "N": r.provenance.get("N"),
                "energy": r.state.level,
                "lambda": r.state.lam,
                "morse": r.morse,
                "constrained_morse": r.constrained_morse,
                "nehari": r.identities["nehari"],
                "pohozaev": r.identities["pohozaev"],
                "link": r.identities["link"],
            })
        return rows


def find_bound_states(ops: DiscreteOperators, p: float, mu: float, Ns, rho_grid=None, seed: int = 0,
                      levels_h: float = 1e-2, t_samples: int = 41, a_samples: int = 24,
                      **newton_options) -> SearchResult:
    """Minimax-seeded multiplicity search on the graph of ``ops``.

    For every ``N`` the level ``beta_N`` is estimated (on a uniform grid of
    step ``levels_h``), a path of the ``N``-th class is sampled, and its
    argmax is moved to a seed at ``rho = rho_grid[0]`` which is continued to
    ``rho = 1`` with deflation against the solutions found so far.
    Solutions with ``lambda <= 0`` are discarded.
    """
    from .analysis import beta_levels, rayleigh_level
    from .discretization import assemble

    Ns = sorted(set(int(n) for n in Ns))
    if not Ns or Ns[0] < 2:
        raise ValueError("N values must be at least 2")
    grid_r = default_rho_grid() if rho_grid is None else list(rho_grid)
    coarse = assemble(ops.grid.graph, levels_h)
    S = [rayleigh_level(coarse, p, N, seed=seed) for N in Ns]
    lv = beta_levels(mu, p, S)
    levels = {"N": Ns, "S": S, "L": lv["L"], "beta": list(map(float, lv["beta"]))}
    newton_options.setdefault("maxiter", 60)
    reports, failures, known = [], {}, []
    for N, beta in zip(Ns, lv["beta"]):
        tag = f"minimax-N{N}"
        try:
            est = minimax_estimate(ops, p, mu, 1.0, N, float(beta), t_samples=t_samples, a_samples=a_samples, seed=seed)
            start = fiber_seed(ops, est, p, grid_r[0], mu)
            rep, _ = deflated_solve(ops, p, mu, known, start, grid_r, rng_seed=seed, tag=tag, **newton_options)
        except (SolverError, ValueError) as exc:
            failures[N] = str(exc)
            logger.warning("N=%d: %s", N, exc)
            continue
        if rep.state.lam <= 0.0:
            failures[N] = f"converged to lambda={rep.state.lam:.4g} <= 0 (discarded)"
            continue
        rep.provenance.update({
            "N": N,
            "beta_N": float(beta),
            "c_upper": est.c_upper,
            "morse_bound": N + 1,
            "morse_bound_ok": rep.constrained_morse <= N + 1,
        })
        reports.append(rep)
        known.append(rep.u)
    return SearchResult(reports, failures, levels)
