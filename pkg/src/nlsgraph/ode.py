"""One-dimensional theory of ``-u'' = alpha |u|^(p-2) u`` and its periodic orbits.

Everything here is exact up to quadrature/integration tolerances: the period
constant, the orbits themselves, their L2 mass, the energy level above which
the mass on an interval is guaranteed to exceed a target, and the explicit
sign-changing solution on the tadpole graph with zero multiplier.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

from .graph import GraphFunction, MetricGraph, tadpole_graph

__all__ = [
    "OrbitIntegrationError",
    "PeriodicOrbit",
    "ode_energy",
    "period_constant",
    "period",
    "periodic_orbit",
    "orbit_mass",
    "mass_threshold",
    "tadpole_solution",
    "loop_slope",
    "period_table_csv",
]

RTOL = 1e-12
ATOL = 1e-14


class OrbitIntegrationError(RuntimeError):
    pass


def ode_energy(u, uprime, lam: float, rho: float, p: float):
    """Conserved quantity ``u'^2/2 + (rho/p)|u|^p - (lam/2) u^2`` of ``-u'' + lam u = rho |u|^(p-2) u``."""
    u = np.asarray(u, dtype=float)
    uprime = np.asarray(uprime, dtype=float)
    out = 0.5 * uprime**2 + (rho / p) * np.abs(u) ** p - 0.5 * lam * u**2
    return out if out.ndim else float(out)


def _check_exponent(p: float) -> None:
    if not p >= 2:
        raise ValueError(f"exponent must satisfy p >= 2, got {p}")


@lru_cache(maxsize=256)
def period_constant(p: float) -> float:
    """``C(p) = sqrt(8 p) * int_0^1 (1 - t^p)^(-1/2) dt``.

    The square-root singularity at ``t = 1`` is removed with ``t = 1 - s^2``,
    which turns the integrand into ``2 s / sqrt(1 - (1 - s^2)^p)``, bounded and
    smooth on ``[0, 1]`` with limit ``2 / sqrt(p)`` at ``s = 0``.
    """
    _check_exponent(p)

    def integrand(s: float) -> float:
        if s < 1e-8:
            return 2.0 / math.sqrt(p)
        # 1 - (1 - s^2)^p without cancellation for small s
        gap = -math.expm1(p * math.log1p(-s * s))
        return 2.0 * s / math.sqrt(gap)

    value, err = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13, limit=200)
    if err > 1e-10:
        raise ArithmeticError(f"period quadrature error estimate {err:.2e} above 1e-10")
    return math.sqrt(8.0 * p) * value


def period(u0: float, alpha: float, p: float) -> float:
    """Period of the orbit of amplitude ``u0``: ``C(p) alpha^(-1/2) u0^((2-p)/2)``."""
    if u0 <= 0 or alpha <= 0:
        raise ValueError("amplitude and coefficient must be positive")
    return period_constant(p) / math.sqrt(alpha) * u0 ** ((2.0 - p) / 2.0)


def _rhs(alpha: float, p: float):
    def f(x, y):
        u = y[0]
        return [y[1], -alpha * abs(u) ** (p - 2.0) * u, u * u]

    return f


@dataclass(frozen=True)
class PeriodicOrbit:
    """Orbit started at its maximum, ``u(0) = u0``, ``u'(0) = 0``.

    ``samples`` has columns ``x, u, u'`` over one period when present.
    """

    u0: float
    alpha: float
    p: float
    tau: float
    H: float
    samples: np.ndarray | None = field(default=None, repr=False, compare=False)
    closure_error: float = field(default=0.0, compare=False)
    energy_drift: float = field(default=0.0, compare=False)

    @property
    def sup_norm(self) -> float:
        """``(p H / alpha)^(1/p)``, which equals the amplitude."""
        return (self.p * self.H / self.alpha) ** (1.0 / self.p)

    def energies(self) -> np.ndarray:
        if self.samples is None:
            raise ValueError("orbit has no samples")
        return ode_energy(self.samples[:, 1], self.samples[:, 2], 0.0, self.alpha, self.p)

    def to_csv(self, path: str | Path | None = None) -> str:
        if self.samples is None:
            raise ValueError("orbit has no samples")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "u", "uprime", "H"])
        for (x, u, up), h in zip(self.samples, self.energies()):
            w.writerow([repr(float(x)), repr(float(u)), repr(float(up)), repr(float(h))])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def _integrate(alpha: float, p: float, y0, length: float, t_eval=None, events=None):
    sol = integrate.solve_ivp(
        _rhs(alpha, p),
        (0.0, length),
        list(y0) + [0.0],
        method="DOP853",
        rtol=RTOL,
        atol=ATOL * max(1.0, abs(y0[0]), abs(y0[1])),
        t_eval=t_eval,
        events=events,
    )
    if sol.status < 0:
        raise OrbitIntegrationError(sol.message)
    return sol


def periodic_orbit(u0: float, alpha: float, p: float, n_samples: int = 256, periods: int = 1) -> PeriodicOrbit:
    """Integrate the orbit through its maximum over ``periods`` periods.

    Raises
    ------
    OrbitIntegrationError
        If the integrator fails (e.g. step size underflow).
    """
    if n_samples < 16:
        raise ValueError("n_samples must be at least 16")
    tau = period(u0, alpha, p)
    xs = np.linspace(0.0, periods * tau, periods * (n_samples - 1) + 1)
    sol = _integrate(alpha, p, (u0, 0.0), xs[-1], t_eval=xs)
    u, up = sol.y[0], sol.y[1]
    H0 = alpha * u0**p / p
    Hs = ode_energy(u, up, 0.0, alpha, p)
    return PeriodicOrbit(
        u0=float(u0),
        alpha=float(alpha),
        p=float(p),
        tau=tau,
        H=H0,
        samples=np.column_stack([xs, u, up]),
        closure_error=float(abs(u[-1] - u0) + abs(up[-1])),
        energy_drift=float(np.max(np.abs(Hs - H0)) / H0),
    )


def measured_period(u0: float, alpha: float, p: float) -> float:
    """Period located as the first return to a maximum (``u'`` crossing zero downwards)."""
    tau = period(u0, alpha, p)

    def at_max(x, y):
        return y[1]

    at_max.direction = -1
    sol = _integrate(alpha, p, (u0, 0.0), 1.5 * tau, events=at_max)
    hits = [t for t in sol.t_events[0] if t > 0.25 * tau]
    if not hits:
        raise OrbitIntegrationError("orbit did not return to its maximum")
    return float(hits[0])


def orbit_mass(orbit: PeriodicOrbit, interval_length: float | None = None) -> float:
    """``int_0^L u^2`` along the orbit (``L`` defaults to one period).

    Computed by carrying ``m' = u^2`` as an extra component of the IVP.
    """
    length = orbit.tau if interval_length is None else float(interval_length)
    sol = _integrate(orbit.alpha, orbit.p, (orbit.u0, 0.0), length)
    return float(sol.y[2, -1])


def mass_threshold(ell: float, alpha_lo: float, alpha_hi: float, p: float, mu_target: float) -> float:
    """Energy level above which every solution on ``[0, ell]`` has mass at least ``mu_target``.

    For ``H >= H_lo`` the amplitude is at least ``(p H / alpha_hi)^(1/p)``, so
    the period is at most ``C(p) alpha_lo^(-1/2) (p H / alpha_hi)^((2-p)/(2p))``.
    Once that is below ``ell / 2`` the interval holds ``k`` full periods with
    ``k tau >= ell / 2``, and the quarter-amplitude bound gives mass at least
    ``(ell / 16) (p H / alpha_hi)^(2/p)``. Both conditions are monotone in
    ``H``; the smallest admissible level is found by bisection on ``log H``.
    """
    if not (0 < alpha_lo < alpha_hi):
        raise ValueError("need 0 < alpha_lo < alpha_hi")
    if not p > 2 or ell <= 0 or mu_target <= 0:
        raise ValueError("need p > 2, ell > 0, mu_target > 0")
    C = period_constant(p)

    def admissible(logH: float) -> bool:
        amp = (p * math.exp(logH) / alpha_hi) ** (1.0 / p)
        tau_max = C / math.sqrt(alpha_lo) * amp ** ((2.0 - p) / 2.0)
        return tau_max <= ell / 2.0 and ell / 16.0 * amp**2 >= mu_target

    lo, hi = -1.0, 1.0
    while admissible(lo):
        lo -= 2.0 * abs(lo)
    while not admissible(hi):
        hi += 2.0 * abs(hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if admissible(mid):
            hi = mid
        else:
            lo = mid
        if hi - lo < 1e-14 * max(1.0, abs(hi)):
            break
    return math.exp(hi)


def tadpole_solution(
    p: float, k: int = 1, v0: float = 1.0, h: float = 1e-2, truncation: float = 10.0
) -> tuple[GraphFunction, MetricGraph]:
    """Exact sign-changing solution with zero multiplier on a tadpole graph.

    The zero-crossing orbit ``u(0) = 0, u'(0) = v0`` of ``-u'' = |u|^(p-2) u``
    is laid on a loop whose length is ``k`` full periods, and extended by zero
    on the half-line. The flux at the junction is ``v0 - v0 + 0 = 0``.
    """
    if not p > 2:
        raise ValueError("exponent must satisfy p > 2")
    if int(k) != k or k < 1:
        raise ValueError("k must be a positive integer (odd half-period counts break the flux balance)")
    if v0 <= 0:
        raise ValueError("v0 must be positive")
    H = 0.5 * v0**2
    u0 = (p * H) ** (1.0 / p)
    loop = k * period(u0, 1.0, p)
    graph = tadpole_graph(loop, truncation)
    grid = graph.grid(h)
    xs = grid.arclength("loop")
    sol = _integrate(1.0, p, (0.0, v0), loop, t_eval=xs)
    on_loop = sol.y[0].copy()
    # both ends sit at the vertex; the integrated end differs from 0 by the ODE error only
    on_loop[-1] = on_loop[0] = 0.0
    values = {"loop": on_loop, "tail": np.zeros(grid.intervals["tail"] + 1)}
    return GraphFunction(grid, values), graph


def loop_slope(p: float, k: int, loop: float) -> float:
    """Vertex slope ``v0`` for which ``k`` periods of the zero-crossing orbit fill a loop of length ``loop``.

    ``period(u0) = C(p) u0^((2-p)/2) = loop / k`` fixes the amplitude, and
    ``v0^2 / 2 = H = u0^p / p``. Along ``k = 1, 2, 4, ...`` the slopes form a
    geometric sequence with ratio ``2^(p/(p-2))``, all on the same graph.
    """
    if not p > 2 or loop <= 0 or k < 1:
        raise ValueError("need p > 2, loop > 0, k >= 1")
    u0 = (period_constant(p) * k / loop) ** (2.0 / (p - 2.0))
    return math.sqrt(2.0 * u0**p / p)


def period_table_csv(ps, alphas, u0s, path: str | Path | None = None) -> str:
    """Table with columns ``p, alpha, u0, tau, C_p``."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p", "alpha", "u0", "tau", "C_p"])
    for p in ps:
        for a in alphas:
            for u0 in u0s:
                w.writerow([p, a, u0, repr(period(u0, a, p)), repr(period_constant(p))])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
