"""Spectral and variational diagnostics for bound states on metric graphs."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as spla

from .discretization import DiscreteOperators, hessian_form
from .graph import GraphFunction

__all__ = [
    "EigensolverError",
    "SpectralReport",
    "morse_index",
    "negative_inertia",
    "HalflineSubspace",
    "halfline_test_subspace",
    "laplacian_eigenbasis",
    "rayleigh_level",
    "beta_levels",
    "levels_csv",
]


class EigensolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class SpectralReport:
    """Negative spectrum of the second-variation form against the L2 product.

    ``index`` counts eigenvalues below ``-zero_band`` (from the inertia of
    the matrix); ``near_zero`` counts those inside ``[-zero_band, zero_band]``,
    whose sign is below the resolution of the discretization.
    ``eigenvalues`` lists the counted eigenvalues, ascending, from Lanczos
    iteration.
    """

    eigenvalues: np.ndarray
    constrained: bool
    index: int
    theta: float = 0.0
    unconstrained_morse: int | None = field(default=None, compare=False)
    near_zero: int = 0
    zero_band: float = 0.0

    @property
    def morse(self) -> int:
        return self.index

    def approx_morse(self, theta: float | None = None) -> int:
        """Number of eigenvalues below ``-theta``."""
        theta = self.theta if theta is None else theta
        if theta <= self.zero_band:
            return self.index
        return int(np.sum(self.eigenvalues < -theta))

    def to_dict(self, sweep=(1e-2, 1e-4, 0.0)) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues[:20]],
            "morse": self.morse,
            "approx_morse": {repr(t): self.approx_morse(t) for t in sweep},
            "constrained": self.constrained,
            "near_zero": self.near_zero,
            "zero_band": self.zero_band,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def negative_inertia(A: sparse.spmatrix) -> int:
    """Number of negative eigenvalues of the symmetric matrix ``A`` (Sylvester's law).

    ``A`` is reordered by reverse Cuthill-McKee (a congruence) and factored
    as ``L D L^T`` through an LU without row pivoting; the signs of ``D``
    give the inertia.
    """
    A = sparse.csr_matrix(A)
    perm = csgraph.reverse_cuthill_mckee(A, symmetric_mode=True)
    P = A[perm][:, perm].tocsc()
    try:
        lu = spla.splu(P, permc_spec="NATURAL", diag_pivot_thresh=0.0, options={"SymmetricMode": True})
    except RuntimeError as exc:
        raise EigensolverError(f"singular form: {exc}") from None
    if not np.array_equal(lu.perm_r, np.arange(A.shape[0])) or not np.array_equal(lu.perm_c, np.arange(A.shape[0])):
        raise EigensolverError("inertia factorization needed off-diagonal pivots")
    return int(np.sum(lu.U.diagonal() < 0.0))


def _lowest_eigs(op, n: int, k: int, sigma: float, opinv=None) -> np.ndarray:
    """The ``k`` eigenvalues nearest ``sigma`` (a lower bound), ascending."""
    if k <= 0:
        return np.zeros(0)
    try:
        if k >= n - 1:
            dense = op @ np.eye(n) if not isinstance(op, np.ndarray) else op
            return np.sort(np.linalg.eigvalsh(np.asarray(dense)))[:k]
        vals = spla.eigsh(op, k=k, sigma=sigma, which="LM", OPinv=opinv, v0=np.ones(n), return_eigenvectors=False, tol=1e-10)
    except spla.ArpackError as exc:
        raise EigensolverError(str(exc)) from None
    return np.sort(vals.real)


def _scaled(ops: DiscreteOperators, H: sparse.spmatrix) -> tuple[sparse.csr_matrix, np.ndarray]:
    s = 1.0 / np.sqrt(ops.lumped)
    B = sparse.diags(s) @ H @ sparse.diags(s)
    return B.tocsr(), s


def _spectrum_floor(ops: DiscreteOperators, x: np.ndarray, rho: float, p: float, lam: float) -> float:
    # K >= 0 and the Gauss-quadrature core term is bounded by max V times the
    # lumped mass, so lam - (p-1) rho max|u|^(p-2) is below the spectrum
    v = (p - 1.0) * rho * float(np.max(np.abs(x))) ** (p - 2.0) if x.size else 0.0
    lo = lam - v
    return lo - 1.0 - 1e-3 * abs(lo)


ZERO_BAND = 1e-9


def morse_index(ops: DiscreteOperators, u, rho: float, p: float, lam: float, constrained: bool = False,
                theta: float = 0.0, zero_band: float = ZERO_BAND) -> SpectralReport:
    """Count negative directions of ``Q(phi) = |phi'|^2 + int (lam - kappa (p-1) rho |u|^(p-2)) phi^2``.

    Counts come from Sylvester's law: with the lumped L2 mass ``M`` positive
    definite, the number of eigenvalues of the pencil ``(H, M)`` below ``-e``
    is the negative inertia of ``H + e M``. On the tangent space
    ``{phi : (u, phi)_L2 = 0}`` it is the negative inertia of the bordered
    matrix ``[[H + e M, M u], [u^T M, 0]]`` minus one.

    ``e = zero_band * |floor|`` with ``floor = lam - (p-1) rho max|u|^(p-2)``
    a lower bound of the spectrum; eigenvalues within ``e`` of zero are
    reported as ``near_zero`` rather than counted. Near-translation modes of
    well-separated bumps sit there.

    The counted eigenvalues come from shift-invert Lanczos on
    ``M^-1/2 H M^-1/2`` below the floor.
    """
    x = ops.vector(u)
    H = hessian_form(ops, x, rho, p, lam)
    sigma = _spectrum_floor(ops, x, rho, p, lam)
    band = zero_band * max(1.0, abs(sigma))
    M = sparse.diags(ops.lumped)
    n = ops.n
    b = ops.lumped * x

    def count(shift):
        A = H + shift * M
        if not constrained:
            return negative_inertia(A)
        bordered = sparse.bmat([[A, sparse.csr_matrix(b[:, None])], [sparse.csr_matrix(b[None, :]), None]])
        return negative_inertia(bordered) - 1

    index = count(band)
    near = count(-band) - index
    free_index = negative_inertia(H + band * M) if constrained else index
    B, s = _scaled(ops, H)
    if not constrained:
        vals = _lowest_eigs(B, n, index, sigma)
        return SpectralReport(vals, constrained=False, index=index, theta=theta, unconstrained_morse=index,
                              near_zero=near, zero_band=band)

    q = x / s
    q = q / np.linalg.norm(q)
    K = sparse.bmat([[B - sigma * sparse.identity(n), sparse.csr_matrix(q[:, None])],
                     [sparse.csr_matrix(q[None, :]), None]]).tocsc()
    lu = spla.splu(K)

    def project(y):
        return y - q * (q @ y)

    def shift_invert(r):
        rhs = np.append(project(np.ravel(r)), 0.0)
        return lu.solve(rhs)[:n]

    A = spla.LinearOperator((n, n), matvec=lambda y: project(B @ project(np.ravel(y))), dtype=float)
    Op = spla.LinearOperator((n, n), matvec=shift_invert, dtype=float)
    vals = _lowest_eigs(A, n, index, sigma, opinv=Op)
    return SpectralReport(vals, constrained=True, index=index, theta=theta, unconstrained_morse=free_index,
                          near_zero=near, zero_band=band)


@dataclass(frozen=True)
class HalflineSubspace:
    functions: list
    tau: float
    required_length: float


def _sin2_profile(x: np.ndarray, width: float, mass: float) -> np.ndarray:
    """``c sin^2(pi x / width)`` on ``[0, width]`` with L2 mass ``mass``, zero elsewhere."""
    c = math.sqrt(8.0 * mass / (3.0 * width))
    inside = (x >= 0.0) & (x <= width)
    return np.where(inside, c * np.sin(np.pi * np.clip(x, 0.0, width) / width) ** 2, 0.0)


# unit-mass sin^2 bump on [0, 1]: |phi'|^2 = 4 pi^2 / 3
_PHI_DERIV_SQ = 4.0 * math.pi**2 / 3.0


def halfline_test_subspace(grid, lam: float, d: int, halfline: str | None = None,
                           margin: float = 0.5) -> HalflineSubspace:
    """``d`` disjoint unit-mass bumps on a half-line on which ``|w'|^2 + lam |w|^2 <= (lam/2) |w|_H1^2``.

    The dilation ``tau`` must satisfy ``tau^2 |phi'|^2 (1 - lam/2) <= -lam/2``;
    ``margin`` scales ``tau^2`` below the limiting value so the inequality
    survives discretization. Bump ``i`` occupies ``[(i-1)/tau, i/tau]``.

    Raises
    ------
    ValueError
        If ``lam >= 0`` or the half-line is shorter than ``d / tau``; the
        message carries the required length.
    """
    if not lam < 0:
        raise ValueError("the test subspace needs lam < 0")
    graph = grid.graph
    edge = graph.edge(halfline) if halfline else max(graph.halflines, key=lambda e: e.length)
    tau = math.sqrt(margin * (-lam / 2.0) / ((1.0 - lam / 2.0) * _PHI_DERIV_SQ))
    required = d / tau
    if required > edge.length:
        raise ValueError(
            f"half-line {edge.id!r} has length {edge.length:g} but {d} bumps at dilation tau={tau:.4g} "
            f"need {required:.4g}"
        )
    width = 1.0 / tau
    out = []
    for i in range(d):
        def f(e, x, i=i):
            if e.id != edge.id:
                return np.zeros_like(x)
            return _sin2_profile(x - i * width, width, 1.0)

        out.append(grid.sample(f))
    return HalflineSubspace(out, tau, required)


def laplacian_eigenbasis(ops: DiscreteOperators, k: int) -> np.ndarray:
    """First ``k`` eigenvectors of ``(K + M) v = s M v`` as columns, M-orthonormal."""
    if k <= 0:
        return np.zeros((ops.n, 0))
    A = (ops.stiffness + ops.massmat).tocsc()
    vals, vecs = spla.eigsh(A, k=k, M=ops.massmat.tocsc(), sigma=0.0, which="LM", v0=np.ones(A.shape[0]))
    order = np.argsort(vals)
    vecs = vecs[:, order]
    gram = vecs.T @ (ops.lumped[:, None] * vecs)
    return vecs @ np.linalg.inv(np.linalg.cholesky(gram)).T


def _quotient(ops, x, A, p):
    return float(x @ (A @ x)) / ops.core_lp(x, p) ** (2.0 / p)


def rayleigh_level(ops: DiscreteOperators, p: float, N: int, basis=None, starts: int = 6,
                   seed: int = 0, maxiter: int = 2000, tol: float = 1e-11, return_minimizer: bool = False):
    """Upper estimate of ``S_N = inf (|u'|^2 + |u|^2) / (int_K |u|^p)^(2/p)`` over ``V_{N-2}``-orthogonal ``u``.

    ``basis`` spans ``V_{N-2}`` (columns or GraphFunctions); by default the
    first ``N - 2`` eigenvectors of ``(K + M, M)``. For those, H1- and
    L2-orthogonality coincide, so the complement is taken in the L2 sense.

    Each start runs projected descent along the H1 gradient
    ``u - (a / b) A^-1 N(u)`` (``a`` the numerator, ``b`` the core integral,
    ``N`` the core load) with Armijo backtracking. The lowest value over the
    starts is returned.
    """
    if N < 2:
        raise ValueError("N must be at least 2")
    if basis is None:
        V = laplacian_eigenbasis(ops, N - 2)
    elif len(basis) and isinstance(basis[0], GraphFunction):
        V = np.column_stack([ops.vector(b) for b in basis])
    else:
        V = np.asarray(basis, dtype=float).reshape(ops.n, -1)
    if V.shape[1]:
        gram = V.T @ (ops.lumped[:, None] * V)
        V = V @ np.linalg.inv(np.linalg.cholesky(gram)).T
    M = ops.lumped

    def project(x):
        return x - V @ (V.T @ (M * x)) if V.shape[1] else x

    A = (ops.stiffness + ops.massmat).tocsc()
    solve = spla.splu(A).solve
    rng = np.random.default_rng(seed)
    best, best_x = math.inf, None
    failures = 0
    for _ in range(starts):
        x = project(solve(M * rng.standard_normal(ops.n)))
        if ops.core_lp(x, p) <= 0:
            failures += 1
            continue
        x /= math.sqrt(x @ (A @ x))
        val = _quotient(ops, x, A, p)
        for _ in range(maxiter):
            b = ops.core_lp(x, p)
            g = project(x - solve(ops.core_load(x, p)) / b)
            step = 1.0
            while step > 1e-8:
                y = x - step * g
                ny = math.sqrt(y @ (A @ y))
                y /= ny
                new = _quotient(ops, y, A, p)
                if new <= val - 1e-4 * step * (g @ (A @ g)) * val:
                    break
                step *= 0.5
            else:
                break
            done = val - new <= tol * val
            x, val = y, new
            if done:
                break
        if V.shape[1] and np.max(np.abs(V.T @ (M * x))) > 1e-8:
            failures += 1
            continue
        if val < best:
            best, best_x = val, x
    if best_x is None:
        raise RuntimeError(f"all {starts} starts failed the orthogonality constraint")
    return (best, best_x) if return_minimizer else best


def _levels_ratio(mu: float, p: float):
    def neg_log_ratio(s: float) -> float:
        # -log((mu + x^2)^(p/2) / (mu + x^p)) with x = exp(s)
        return -(0.5 * p * np.logaddexp(math.log(mu), 2.0 * s) - np.logaddexp(math.log(mu), p * s))

    return neg_log_ratio


def level_constant(mu: float, p: float, bracket=(-1.0, 1.0)) -> float:
    """``L(p) = (3/p) max_x (mu + x^2)^(p/2) / (mu + x^p)`` by golden-section search in ``log x``."""
    f = _levels_ratio(mu, p)
    try:
        res = optimize.minimize_scalar(f, bracket=bracket, method="golden", tol=1e-12)
    except (ValueError, RuntimeError) as exc:
        raise RuntimeError(f"maximization bracket failure: {exc}") from None
    return 3.0 / p * math.exp(-res.fun)


def beta_levels(mu: float, p: float, S_values, bracket=(-1.0, 1.0)) -> dict:
    """``L(p)``, ``beta_N = (S_N^(p/2) / L)^(1/(p-2))`` and ``b_N = beta_N^2 / 6`` for each ``S_N``."""
    if not p > 6:
        raise ValueError("level diagnostics need p > 6")
    L = level_constant(mu, p, bracket)
    S = np.asarray(S_values, dtype=float)
    beta = (S ** (p / 2.0) / L) ** (1.0 / (p - 2.0))
    return {"L": L, "beta": beta, "b_lower": beta**2 / 6.0}


def levels_csv(Ns, S, beta, b_lower, c_upper=None, path: str | Path | None = None) -> str:
    """Level table with columns ``N, S_N, beta_N, b_lower_N`` (and ``c_upper_N`` when given)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["N", "S_N", "beta_N", "b_lower_N"] + (["c_upper_N"] if c_upper is not None else [])
    w.writerow(head)
    for i, N in enumerate(Ns):
        row = [N, repr(float(S[i])), repr(float(beta[i])), repr(float(b_lower[i]))]
        if c_upper is not None:
            row.append(repr(float(c_upper[i])))
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
