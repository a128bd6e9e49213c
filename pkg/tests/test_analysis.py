import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from nlsgraph.analysis import (
    EigensolverError,
    beta_levels,
    halfline_test_subspace,
    laplacian_eigenbasis,
    level_constant,
    levels_csv,
    morse_index,
    negative_inertia,
    rayleigh_level,
)
from nlsgraph.discretization import assemble, hessian_form
from nlsgraph.graph import tadpole_graph
from nlsgraph.ode import tadpole_solution


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 40))
def test_inertia_matches_dense_eigenvalues(seed, n):
    rng = np.random.default_rng(seed)
    # symmetric tridiagonal with random signs, like a 1-D Hessian
    d = rng.normal(size=n) * 3
    e = rng.normal(size=n - 1)
    A = sparse.diags([e, d, e], [-1, 0, 1])
    vals = np.linalg.eigvalsh(A.toarray())
    if np.min(np.abs(vals)) < 1e-8:
        return
    try:
        assert negative_inertia(A) == int(np.sum(vals < 0))
    except EigensolverError:
        pass  # an exactly zero pivot; acceptable refusal


def test_positive_form_has_no_negative_directions(tadpole_ops):
    rep = morse_index(tadpole_ops, tadpole_ops.grid.zeros(), 1.0, 8.0, 2.0)
    assert rep.morse == 0 and rep.eigenvalues.size == 0


@pytest.fixture(scope="module")
def exact():
    u, g = tadpole_solution(8.0, k=1, v0=1.0, h=2e-3, truncation=5.0)
    return assemble(g, 2e-3), u


def test_exact_tadpole_solution_has_negative_direction(exact):
    ops, u = exact
    x = ops.vector(u)
    # u itself: Q(u, u) = (2 - p) int |u|^p < 0
    q = float(x @ (hessian_form(ops, x, 1.0, 8.0, 0.0) @ x))
    assert q == pytest.approx(-6.0 * ops.core_lp(x, 8.0), rel=1e-6)
    free = morse_index(ops, u, 1.0, 8.0, 0.0)
    cons = morse_index(ops, u, 1.0, 8.0, 0.0, constrained=True)
    assert free.morse >= 1
    assert cons.morse in (free.morse, free.morse - 1)
    assert np.all(free.eigenvalues < 0) and free.eigenvalues.size == free.morse


def test_counts_agree_with_dense_spectrum():
    g = tadpole_graph(1.0, 3.0)
    ops = assemble(g, 2e-2)
    u = ops.grid.sample(lambda e, x: 2.0 * np.sin(np.pi * x) ** 2 if e.id == "loop" else 0 * x)
    H = hessian_form(ops, u, 1.0, 6.0, 0.5).toarray()
    s = 1.0 / np.sqrt(ops.lumped)
    vals = np.linalg.eigvalsh(s[:, None] * H * s[None, :])
    rep = morse_index(ops, u, 1.0, 6.0, 0.5)
    assert rep.morse == int(np.sum(vals < -rep.zero_band))
    np.testing.assert_allclose(rep.eigenvalues, vals[: rep.morse], rtol=1e-8)
    # constrained: eigenvalues of the form on the M-orthogonal complement of u
    x = ops.vector(u)
    q = x / s
    q /= np.linalg.norm(q)
    P = np.eye(len(q)) - np.outer(q, q)
    B = P @ (s[:, None] * H * s[None, :]) @ P
    cvals = np.sort(np.linalg.eigvalsh(B))
    cvals = np.delete(cvals, np.argmin(np.abs(cvals)))  # the kernel direction q
    cons = morse_index(ops, u, 1.0, 6.0, 0.5, constrained=True)
    assert cons.morse == int(np.sum(cvals < -cons.zero_band))
    np.testing.assert_allclose(cons.eigenvalues, cvals[: cons.morse], rtol=1e-7)


def test_approximate_morse_is_monotone(exact):
    ops, u = exact
    rep = morse_index(ops, u, 1.0, 8.0, 0.0)
    counts = [rep.approx_morse(t) for t in (1e-2, 1e-4, 0.0)]
    assert counts == sorted(counts) and counts[-1] == rep.morse
    d = rep.to_dict()
    assert set(d["approx_morse"]) == {"0.01", "0.0001", "0.0"}


def test_halfline_subspace_bound():
    g = tadpole_graph(1.0, 200.0)
    ops = assemble(g, 5e-2)
    lam = -1.0
    sub = halfline_test_subspace(ops.grid, lam, 3)
    X = np.column_stack([ops.vector(f) for f in sub.functions])
    zero = np.zeros(ops.n)
    Q = hessian_form(ops, zero, 1.0, 8.0, lam)
    A = (ops.stiffness + ops.massmat)
    for w in [X[:, i] for i in range(3)] + [X @ np.random.default_rng(0).normal(size=3)]:
        assert float(w @ (Q @ w)) <= 0.5 * lam * float(w @ (A @ w))


def test_halfline_subspace_errors():
    g = tadpole_graph(1.0, 5.0)
    grid = g.grid(0.05)
    with pytest.raises(ValueError, match="need"):
        halfline_test_subspace(grid, -1.0, 3)
    with pytest.raises(ValueError):
        halfline_test_subspace(grid, 0.5, 1)
    # lam -> 0- forces tau -> 0: the required length grows without bound
    lengths = []
    for lam in (-1.0, -1e-2, -1e-4):
        with pytest.raises(ValueError) as info:
            halfline_test_subspace(grid, lam, 3)
        lengths.append(float(str(info.value).rsplit("need ", 1)[1]))
    # required length = d / tau with tau^2 proportional to -lam / (1 - lam / 2)
    law = lambda lam: math.sqrt((1 - lam / 2) / -lam)
    assert lengths[-1] / lengths[0] == pytest.approx(law(-1e-4) / law(-1.0), rel=1e-3)


@pytest.fixture(scope="module")
def level_ops():
    return assemble(tadpole_graph(1.0, 30.0), 1e-2)


def test_rayleigh_level_reproducible(level_ops):
    a = rayleigh_level(level_ops, 8.0, 2, seed=0)
    b = rayleigh_level(level_ops, 8.0, 2, seed=11)
    assert a == pytest.approx(b, rel=1e-4)


def test_rayleigh_levels_nondecreasing(level_ops):
    S = [rayleigh_level(level_ops, 8.0, N) for N in range(2, 6)]
    assert all(b >= a for a, b in zip(S, S[1:]))


def test_rayleigh_quotient_scale_invariant(level_ops):
    _, x = rayleigh_level(level_ops, 8.0, 2, return_minimizer=True)
    A = level_ops.stiffness + level_ops.massmat
    q = lambda y: float(y @ (A @ y)) / level_ops.core_lp(y, 8.0) ** 0.25
    assert q(2 * x) == pytest.approx(q(x), rel=1e-12)


def test_eigenbasis_orthonormal(level_ops):
    V = laplacian_eigenbasis(level_ops, 3)
    np.testing.assert_allclose(V.T @ (level_ops.lumped[:, None] * V), np.eye(3), atol=1e-10)


def test_level_constant_limits_and_brackets():
    mu, p = 0.5, 8.0
    L1 = level_constant(mu, p, (-1.0, 1.0))
    L2 = level_constant(mu, p, (-3.0, 0.5))
    assert L1 == pytest.approx(L2, rel=1e-8)
    # ratio -> mu^(p/2 - 1) at 0 and -> 1 at infinity; the max is interior and above both
    assert L1 > 3.0 / p * max(mu ** (p / 2 - 1), 1.0)


def test_level_constant_at_unit_mass():
    assert level_constant(1.0, 8.0) == pytest.approx(3.0, rel=1e-10)


def test_beta_levels():
    out = beta_levels(1.0, 8.0, [1.9, 2.2, 2.5])
    assert np.all(np.diff(out["beta"]) > 0)
    np.testing.assert_allclose(out["b_lower"], out["beta"] ** 2 / 6, rtol=1e-15)
    with pytest.raises(ValueError):
        beta_levels(1.0, 6.0, [2.0])


def test_levels_csv():
    text = levels_csv([2, 3], [1.0, 2.0], [0.5, 0.6], [0.1, 0.2], c_upper=[3.0, 4.0])
    assert text.splitlines()[0] == "N,S_N,beta_N,b_lower_N,c_upper_N"
