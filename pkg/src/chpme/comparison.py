"""Comparison warps psi* and certified bounds on the radial drift.

A Ricci lower bound ``-C0 (1 + rho^gamma)`` is turned into an upper bound
``b(rho) <= C' / (rho (1 + rho)^(sigma - 2))`` by integrating the equality
case of the comparison ODE; a sectional upper bound ``-C1 rho^gamma`` beyond
``R1`` gives the matching lower bound with a constant ``C''``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import solve_ivp

from .geometry import ModelManifold, OdeGenerated, sigma_of_gamma

__all__ = [
    "IntegrationError",
    "CoeffBoundCertificate",
    "psi_star_lower_rate",
    "build_psi_star_lower",
    "build_psi_star_upper",
    "certify_coeff_bound",
    "default_certificate_grid",
    "warp_from_label",
]

RTOL = 1e-10
ATOL = 1e-12


class IntegrationError(RuntimeError):
    def __init__(self, message, last_radius):
        super().__init__(f"{message} (last good radius {last_radius:.6g})")
        self.last_radius = last_radius


def psi_star_lower_rate(c0: float, gamma: float, n: int):
    """Return q(rho) for the equality case of the Ricci comparison.

    For gamma >= 0 this is ``(C0/(N-1)) (1 + rho^gamma)``.  For gamma < 0 the
    shifted power ``(C0/(N-1)) (1 + rho)^gamma`` is used: it keeps q bounded at
    the origin (so psi* stays in the class A) and has the same decay at
    infinity, which is what fixes the growth of psi*.
    """
    k = c0 / (n - 1)
    if gamma >= 0:
        return lambda r: k * (1.0 + np.asarray(r, dtype=float) ** gamma)
    return lambda r: k * (1.0 + np.asarray(r, dtype=float)) ** gamma


def _sample_radii(rho_start, rho_max, ratio=1.05):
    inner = np.linspace(rho_start, min(1.0, rho_max), 41)
    if rho_max <= 1.0:
        return inner
    k = int(np.ceil(np.log(rho_max) / np.log(ratio)))
    outer = np.minimum(ratio ** np.arange(1, k + 1), rho_max)
    return np.unique(np.concatenate([inner, outer, [rho_max]]))


def _integrate(q, rho_start, y0, z0, rho_max, method="LSODA"):
    def rhs(r, yz):
        return [yz[1], float(q(r)) - yz[1] ** 2]

    t_eval = _sample_radii(rho_start, rho_max)
    sol = solve_ivp(
        rhs,
        (rho_start, rho_max),
        [y0, z0],
        method=method,
        rtol=RTOL,
        atol=ATOL,
        dense_output=True,
        t_eval=t_eval,
    )
    if not sol.success:
        last = float(sol.t[-1]) if sol.t.size else rho_start
        raise IntegrationError(f"comparison ODE failed: {sol.message}", last)
    table = np.column_stack([sol.t, sol.y[0], sol.y[1]])
    return sol.sol, table


@lru_cache(maxsize=64)
def build_psi_star_lower(c0: float, gamma: float, n: int, rho_max: float,
                         rho_start: float = 1e-3) -> OdeGenerated:
    """psi* with (N-1) psi''/psi equal to the Ricci lower-bound rate."""
    if c0 <= 0 or gamma > 2 or rho_max <= 0:
        raise ValueError("need c0 > 0, gamma <= 2, rho_max > 0")
    q = psi_star_lower_rate(c0, gamma, n)
    k = c0 / (n - 1)
    q0 = float(q(0.0)) if gamma != 0 else 2 * k
    # first Picard terms: psi = r + q0 r^3/6 (+ k r^(gamma+3)/((gamma+2)(gamma+3)) for gamma in (0, 2])
    extra = k if 0 < gamma <= 2 else 0.0
    g = gamma if extra else 0.0
    c_const = (k if extra else q0) / 6.0
    c_pow = extra / ((g + 2) * (g + 3)) if extra else 0.0

    def series(r):
        r = np.asarray(r, dtype=float)
        corr = c_const * r**2 + c_pow * r ** (g + 2)
        dcorr = 3 * c_const * r**2 + (g + 3) * c_pow * r ** (g + 2)
        return np.log(r) + np.log1p(corr), (1 + dcorr) / (r * (1 + corr))

    y0, z0 = series(np.array([rho_start]))
    sol, table = _integrate(q, rho_start, float(y0[0]), float(z0[0]), rho_max)
    label = {"family": "psi_star_lower", "c0": c0, "gamma": gamma, "n": n, "rho_max": rho_max}
    return OdeGenerated(q=q, series=series, rho_start=rho_start, solution=sol,
                        rho_max=rho_max, table=table, label=label)


@lru_cache(maxsize=64)
def build_psi_star_upper(c1: float, gamma: float, r1: float, n: int,
                         rho_max: float) -> OdeGenerated:
    """psi* = rho on (0, R1], then psi'' = C1 rho^gamma psi, C^1-matched at R1."""
    if c1 <= 0 or r1 <= 0:
        raise ValueError("need c1 > 0 and r1 > 0")
    if not -2 < gamma < 2:
        raise ValueError("gamma must lie in (-2, 2)")
    if rho_max <= r1:
        raise ValueError("rho_max must exceed R1")

    def q(r):
        r = np.asarray(r, dtype=float)
        return np.where(r > r1, c1 * np.abs(r) ** gamma, 0.0)

    def series(r):
        r = np.asarray(r, dtype=float)
        return np.log(r), 1.0 / r

    sol, table = _integrate(q, r1, np.log(r1), 1.0 / r1, rho_max)
    label = {"family": "psi_star_upper", "c1": c1, "gamma": gamma, "r1": r1, "n": n,
             "rho_max": rho_max}
    return OdeGenerated(q=q, series=series, rho_start=r1, solution=sol,
                        rho_max=rho_max, table=table, label=label)


def warp_from_label(spec: dict) -> OdeGenerated:
    family = spec.get("family")
    if family == "psi_star_lower":
        return build_psi_star_lower(float(spec["c0"]), float(spec["gamma"]), int(spec["n"]),
                                    float(spec["rho_max"]))
    if family == "psi_star_upper":
        return build_psi_star_upper(float(spec["c1"]), float(spec["gamma"]), float(spec["r1"]),
                                    int(spec["n"]), float(spec["rho_max"]))
    raise ValueError(f"cannot rebuild ODE warp from {spec!r}")


@dataclass(frozen=True)
class CoeffBoundCertificate:
    """Extremal constant of a two-sided drift bound on a finite grid.

    ``max_violation`` is the worst relative residual of the bound at the
    recorded constant: ``b/bound - 1`` (Upper) or ``1 - b/bound`` (Lower).
    """

    side: str
    constant: float
    sigma: float
    max_violation: float
    grid: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.side not in ("upper", "lower"):
            raise ValueError("side must be 'upper' or 'lower'")

    @property
    def valid(self) -> bool:
        return self.max_violation <= 0 and self.constant > 0 and np.isfinite(self.constant)

    def bound(self, rho):
        rho = np.asarray(rho, dtype=float)
        return self.constant / (rho * (1 + rho) ** (self.sigma - 2))

    def to_record(self) -> dict:
        return {
            "side": self.side,
            "constant": float(self.constant),
            "sigma": float(self.sigma),
            "max_violation": float(self.max_violation),
            "grid_span": [float(self.grid[0]), float(self.grid[-1])],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True)


def default_certificate_grid(rho_max: float, n: int = 400, rho_min: float = 1e-2) -> np.ndarray:
    return np.geomspace(rho_min, rho_max, n)


def certify_coeff_bound(m: ModelManifold, side: str, sigma: float, grid=None,
                        rho_max: float | None = None) -> CoeffBoundCertificate:
    """Smallest C' (``side="upper"``) or largest C'' (``"lower"``) on ``grid``."""
    side = side.lower()
    if grid is None:
        if rho_max is None:
            rho_max = m.warp.rho_max
        if not np.isfinite(rho_max):
            raise ValueError("give a grid or a finite rho_max")
        grid = default_certificate_grid(rho_max)
    grid = np.asarray(grid, dtype=float)
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("certificate grid must be positive and increasing")
    ratio = m.coeff(grid) * grid * (1 + grid) ** (sigma - 2)
    if side == "upper":
        const = float(np.max(ratio))
        viol = float(np.max(ratio / const - 1.0))
    elif side == "lower":
        const = float(np.min(ratio))
        viol = float(np.max(1.0 - ratio / const))
    else:
        raise ValueError("side must be 'upper' or 'lower'")
    return CoeffBoundCertificate(side, const, sigma, viol, grid)


def psi_star_pair(c0: float, gamma: float, n: int, rho_max: float,
                  c1: float | None = None, r1: float | None = None):
    """Both comparison warps for a curvature specification, with sigma."""
    lower = build_psi_star_lower(c0, gamma, n, rho_max)
    upper = None
    if c1 is not None and -2 < gamma < 2:
        upper = build_psi_star_upper(c1, gamma, r1, n, rho_max)
    return lower, upper, sigma_of_gamma(gamma)
