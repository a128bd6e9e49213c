"""Piecewise-linear finite elements on a truncated metric graph.

Every edge carries P1 elements on its own uniform grid. Vertex samples are
shared degrees of freedom, so the Kirchhoff flux condition is the natural
boundary condition of the weak form and never has to be imposed. Half-line
far ends are homogeneous Dirichlet nodes and are eliminated.

The L2 product uses the lumped (trapezoid) mass matrix, which makes
``x @ massmat @ x`` identical to :func:`nlsgraph.graph.mass`. The nonlinear
core term is integrated with a 3-point Gauss rule on every core element.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .graph import GraphFunction, GraphGrid, MetricGraph
from .ode import ode_energy

__all__ = [
    "DiscreteOperators",
    "assemble",
    "energy",
    "gradient",
    "hessian_form",
    "pohozaev",
    "identity_residuals",
    "export_coo",
]

_GAUSS_S = np.array([0.5 - 0.5 * np.sqrt(0.6), 0.5, 0.5 + 0.5 * np.sqrt(0.6)])
_GAUSS_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True, eq=False)
class DiscreteOperators:
    """Assembled P1 operators and the sample <-> dof map.

    ``dof[edge_id]`` lists the global index of every sample on that edge, with
    ``-1`` for an eliminated Dirichlet node.
    """

    grid: GraphGrid
    stiffness: sparse.csr_matrix
    massmat: sparse.csr_matrix
    core_weight: sparse.csr_matrix
    dof: dict
    # core elements for Gauss quadrature: left/right dof (-1 = Dirichlet) and step
    el_left: np.ndarray = field(repr=False)
    el_right: np.ndarray = field(repr=False)
    el_step: np.ndarray = field(repr=False)

    @property
    def graph(self) -> MetricGraph:
        return self.grid.graph

    @property
    def n(self) -> int:
        return self.stiffness.shape[0]

    @property
    def lumped(self) -> np.ndarray:
        return self.massmat.diagonal()

    def vector(self, u) -> np.ndarray:
        """Free degrees of freedom of ``u`` (a GraphFunction or an already flat vector)."""
        if isinstance(u, GraphFunction):
            x = np.empty(self.n)
            for eid, idx in self.dof.items():
                keep = idx >= 0
                x[idx[keep]] = u.values[eid][keep]
            return x
        x = np.asarray(u, dtype=float)
        if x.shape != (self.n,):
            raise ValueError(f"expected a vector of length {self.n}, got shape {x.shape}")
        return x

    def function(self, x: np.ndarray) -> GraphFunction:
        xe = np.append(np.asarray(x, dtype=float), 0.0)
        return GraphFunction(self.grid, {eid: xe[idx] for eid, idx in self.dof.items()}, check=False)

    def mass(self, u) -> float:
        x = self.vector(u)
        return float(x @ (self.lumped * x))

    def dirichlet_norm(self, u) -> float:
        """Squared L2 norm of the derivative, exact for the P1 interpolant."""
        x = self.vector(u)
        return float(x @ (self.stiffness @ x))

    def dual_norm(self, r: np.ndarray) -> float:
        """``sqrt(r^T M^-1 r)``: L2 norm of the Riesz representative of a residual."""
        return float(np.sqrt(np.sum(r * r / self.lumped)))

    def inner(self, u, v) -> float:
        return float(self.vector(u) @ (self.lumped * self.vector(v)))

    def _core_values(self, x: np.ndarray) -> np.ndarray:
        xe = np.append(x, 0.0)
        a, b = xe[self.el_left], xe[self.el_right]
        return a[:, None] * (1.0 - _GAUSS_S) + b[:, None] * _GAUSS_S

    def core_lp(self, u, p: float) -> float:
        """Gauss-rule value of the integral of ``|u|^p`` over the core (the p-th power)."""
        uq = self._core_values(self.vector(u))
        return float(np.sum(self.el_step[:, None] * _GAUSS_W * np.abs(uq) ** p))

    def core_load(self, u, p: float) -> np.ndarray:
        """Load vector ``int_K |u|^(p-2) u phi_i``."""
        x = self.vector(u)
        uq = self._core_values(x)
        fq = self.el_step[:, None] * _GAUSS_W * np.abs(uq) ** (p - 2.0) * uq
        out = np.zeros(self.n + 1)
        np.add.at(out, self.el_left, fq @ (1.0 - _GAUSS_S))
        np.add.at(out, self.el_right, fq @ _GAUSS_S)
        return out[:-1]

    def core_jacobian(self, u, p: float) -> sparse.csr_matrix:
        """Matrix of ``int_K |u|^(p-2) phi_i phi_j``."""
        uq = self._core_values(self.vector(u))
        wq = self.el_step[:, None] * _GAUSS_W * np.abs(uq) ** (p - 2.0)
        la, lb = 1.0 - _GAUSS_S, _GAUSS_S
        blocks = [wq @ (la * la), wq @ (la * lb), wq @ (lb * lb)]
        rows = np.concatenate([self.el_left, self.el_left, self.el_right, self.el_right])
        cols = np.concatenate([self.el_left, self.el_right, self.el_left, self.el_right])
        vals = np.concatenate([blocks[0], blocks[1], blocks[1], blocks[2]])
        keep = (rows >= 0) & (cols >= 0)
        return sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(self.n, self.n))


def assemble(graph: MetricGraph, h: float, edge_steps: dict | None = None) -> DiscreteOperators:
    """Assemble stiffness, lumped mass and core weights on ``graph`` with target step ``h``.

    ``edge_steps`` optionally overrides the step on individual edges.

    Raises
    ------
    ValueError
        If a step is not smaller than the length of its edge.
    """
    edge_steps = edge_steps or {}
    for e in graph.edges:
        step = edge_steps.get(e.id, h)
        if not 0 < step < e.length:
            raise ValueError(f"grid step {step} must be positive and below the length {e.length} of edge {e.id!r}")
    grid = graph.grid(h, edge_steps)
    vindex = {v: i for i, v in enumerate(graph.vertices)}
    nxt = len(graph.vertices)
    dof = {}
    for e in graph.edges:
        n = grid.intervals[e.id]
        idx = np.empty(n + 1, dtype=np.int64)
        idx[0] = vindex[e.tail]
        idx[1:n] = np.arange(nxt, nxt + n - 1)
        nxt += n - 1
        idx[n] = -1 if e.halfline else vindex[e.head]
        dof[e.id] = idx
    ndof = nxt

    left, right, step, kappa = [], [], [], []
    for e in graph.edges:
        idx = dof[e.id]
        left.append(idx[:-1])
        right.append(idx[1:])
        step.append(np.full(idx.size - 1, grid.step(e.id)))
        kappa.append(np.full(idx.size - 1, e.kappa))
    left = np.concatenate(left)
    right = np.concatenate(right)
    step = np.concatenate(step)
    kappa = np.concatenate(kappa)

    def element_matrix(diag, off, mask=slice(None)):
        a, b, d, o = left[mask], right[mask], diag[mask], off[mask]
        rows = np.concatenate([a, a, b, b])
        cols = np.concatenate([a, b, a, b])
        vals = np.concatenate([d, o, o, d])
        keep = (rows >= 0) & (cols >= 0)
        out = sparse.csr_matrix((vals[keep], (rows[keep], cols[keep])), shape=(ndof, ndof))
        out.eliminate_zeros()
        return out

    stiffness = element_matrix(1.0 / step, -1.0 / step)
    massmat = element_matrix(0.5 * step, np.zeros_like(step))
    core_weight = element_matrix(0.5 * step, np.zeros_like(step), mask=kappa)
    return DiscreteOperators(
        grid=grid,
        stiffness=stiffness,
        massmat=massmat,
        core_weight=core_weight,
        dof=dof,
        el_left=left[kappa],
        el_right=right[kappa],
        el_step=step[kappa],
    )


def energy(ops: DiscreteOperators, u, rho: float, p: float) -> float:
    """``E_rho(u) = |u'|^2 / 2 - (rho / p) int_K |u|^p``."""
    return 0.5 * ops.dirichlet_norm(u) - rho / p * ops.core_lp(u, p)


def gradient(ops: DiscreteOperators, u, rho: float, p: float, lam: float) -> np.ndarray:
    """Weak-form residual ``K u + lam M u - rho int_K |u|^(p-2) u phi_i`` on the free dofs."""
    x = ops.vector(u)
    return ops.stiffness @ x + lam * (ops.lumped * x) - rho * ops.core_load(x, p)


def hessian_form(ops: DiscreteOperators, u, rho: float, p: float, lam: float) -> sparse.csr_matrix:
    """Matrix of ``Q(phi) = |phi'|^2 + int (lam - (p-1) rho kappa |u|^(p-2)) phi^2``."""
    return (ops.stiffness + lam * ops.massmat - (p - 1.0) * rho * ops.core_jacobian(u, p)).tocsr()


def _edge_ode_energies(u: GraphFunction, edge, rho: float, p: float, lam: float) -> np.ndarray:
    v = u.values[edge.id]
    step = u.grid.step(edge.id)
    coef = rho if edge.kappa else 0.0
    if v.size >= 3:
        vals = v[1:-1]
        slope = (v[2:] - v[:-2]) / (2.0 * step)
    else:
        vals = np.array([0.5 * (v[0] + v[1])])
        slope = np.array([(v[1] - v[0]) / step])
    return ode_energy(vals, slope, lam, coef, p)


def pohozaev(u: GraphFunction, rho: float, p: float, lam: float) -> dict:
    """Per-edge ODE energies and the weighted sum ``P = sum_e len_e H(e)`` over bounded edges.

    The edge value is the median of the pointwise energies at interior
    samples (central differences); ``variation`` is their max - min, which
    vanishes only for exact solutions.
    """
    H, var, P = {}, {}, 0.0
    for e in u.graph.bounded_edges:
        pts = _edge_ode_energies(u, e, rho, p, lam)
        H[e.id] = float(np.median(pts))
        var[e.id] = float(np.max(pts) - np.min(pts))
        P += e.length * H[e.id]
    return {"P": P, "H": H, "variation": var}


def _relative(value: float, *terms: float) -> float:
    scale = sum(abs(t) for t in terms)
    return 0.0 if scale == 0.0 else abs(value) / scale


def identity_residuals(ops: DiscreteOperators, u, rho: float, p: float, lam: float) -> dict:
    """Relative residuals of the Nehari, Pohozaev and energy-Pohozaev identities.

    Each residual is ``|lhs - rhs|`` divided by the sum of the absolute values
    of the terms involved, so it is scale free and 0 for ``u = 0``.
    """
    if not isinstance(u, GraphFunction):
        u = ops.function(u)
    d2 = ops.dirichlet_norm(u)
    lp = ops.core_lp(u, p)
    m = ops.mass(u)
    P = pohozaev(u, rho, p, lam)["P"]
    nehari = _relative(d2 + lam * m - rho * lp, d2, lam * m, rho * lp)
    poh = _relative(0.5 * d2 + rho / p * lp - 0.5 * lam * m - P, 0.5 * d2, rho / p * lp, 0.5 * lam * m, P)
    E = 0.5 * d2 - rho / p * lp
    a = (p - 6.0) * lam / (2.0 * (p + 2.0)) * m
    b = (p - 2.0) / (p + 2.0) * P
    link = _relative(E - a - b, 0.5 * d2, rho / p * lp, a, b)
    return {"nehari": nehari, "pohozaev": poh, "link": link}


def export_coo(matrix, path: str | Path | None = None) -> str:
    """Coordinate-format text, one ``row col value`` triple per line."""
    coo = sparse.coo_matrix(matrix)
    text = "".join(f"{i} {j} {float(v)!r}\n" for i, j, v in zip(coo.row, coo.col, coo.data))
    if path is not None:
        Path(path).write_text(text)
    return text


def residual_record(ops: DiscreteOperators, u, rho: float, p: float, lam: float) -> str:
    """JSON record of the gradient residual and the three identity residuals."""
    r = gradient(ops, u, rho, p, lam)
    rec = {"rho": rho, "p": p, "lambda": lam, "gradient": ops.dual_norm(r)}
    rec.update(identity_residuals(ops, u, rho, p, lam))
    return json.dumps(rec)
