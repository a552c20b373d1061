"""Explicit barriers for the porous medium equation on model manifolds.

* :class:`PowerBarrier` -- ``a (r^2 + rho^2)^(sigma/(2(m-1))) / T^(1/(m-1))``,
  used as the separable supersolution profile and as the subsolution V_T.
* :class:`EtaBarrier` -- the exponential barrier for the backward linear
  problem ``v_t + a v_rr + ... = 0`` with ``a <= C2 (1 + rho)^sigma``.
* :class:`HarmonicShell` -- the radial harmonic comparison function on the
  annulus ``R - 1 <= rho <= R``.
* :class:`WeightedNorm` -- the weighted sup norms ``||f||_{inf,r}``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import ModelManifold, RadialGrid, radial_laplacian

__all__ = [
    "PowerBarrier",
    "ResidualReport",
    "super_amplitude",
    "existence_time",
    "sub_parameters",
    "barrier_residual",
    "separable_residual",
    "truncate_sub",
    "EtaBarrier",
    "eta_select",
    "eta_residual",
    "HarmonicShell",
    "harmonic_shell",
    "harmonic_laplacian",
    "WeightedNorm",
    "weighted_sup_norm",
]


@dataclass(frozen=True)
class PowerBarrier:
    a: float
    r: float
    sigma: float
    m: float
    T: float = 1.0
    role: str = "super"

    def __post_init__(self):
        if self.a <= 0 or self.T <= 0 or self.m <= 1:
            raise ValueError("need a > 0, T > 0, m > 1")
        if self.role not in ("super", "sub"):
            raise ValueError("role must be 'super' or 'sub'")
        if self.role == "super" and self.r < 1:
            raise ValueError("supersolution shift r must be >= 1")
        if self.r < 0:
            raise ValueError("shift r must be nonnegative")

    @property
    def exponent(self) -> float:
        """Growth exponent sigma/(m-1)."""
        return self.sigma / (self.m - 1)

    def __call__(self, rho):
        rho = np.asarray(rho, dtype=float)
        return (self.a * (self.r**2 + rho**2) ** (self.exponent / 2)
                / self.T ** (1 / (self.m - 1)))

    def power_m(self, rho):
        return self(rho) ** self.m

    def separable(self, rho, t):
        """(1 - t/T)^(-1/(m-1)) W(rho)."""
        return (1 - t / self.T) ** (-1 / (self.m - 1)) * self(rho)

    def laplacian_power_m(self, manifold: ModelManifold, rho):
        """Closed-form Delta(W^m): (W^m)'' + b (W^m)'."""
        rho = np.asarray(rho, dtype=float)
        k = self.sigma * self.m / (self.m - 1)
        s = self.r**2 + rho**2
        c = (self.a / self.T ** (1 / (self.m - 1))) ** self.m * k
        d1 = c * rho * s ** (k / 2 - 1)
        d2 = c * s ** (k / 2 - 1) + c * (k - 2) * rho**2 * s ** (k / 2 - 2)
        return d2 + manifold.coeff(rho) * d1


def super_amplitude(c_prime: float, sigma: float, m: float) -> float:
    """Amplitude a making W a stationary supersolution for every r >= 1."""
    if c_prime <= 0:
        raise ValueError("C' must be positive")
    if not 0 < sigma <= 2:
        raise ValueError("sigma must lie in (0, 2]; sigma = 0 gives no growing supersolution")
    if m <= 1:
        raise ValueError("m must exceed 1")
    k = sigma * m / (m - 1)
    return (sigma * m * (1 + abs(k - 2) + 2 ** (2 - sigma) * c_prime)) ** (-1 / (m - 1))


def existence_time(u0_norm: float, a: float, m: float) -> float:
    """a^(m-1) ||u0||^(1-m); ``inf`` for the zero datum (global existence)."""
    if u0_norm < 0:
        raise ValueError("norm must be nonnegative")
    if u0_norm == 0:
        return math.inf
    return a ** (m - 1) * u0_norm ** (1 - m)


def sub_parameters(c_doubleprime: float | None, sigma: float, n: int, m: float):
    """Shift r and amplitude a of the subsolution V_T (before the T scaling)."""
    if m <= 1:
        raise ValueError("m must exceed 1")
    if sigma >= 2:
        return 1.0, ((n - 1) * m) ** (-1 / (m - 1))
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if c_doubleprime is None or c_doubleprime <= 0:
        raise ValueError("sigma < 2 needs a positive C''")
    k = sigma * m / (m - 1)
    lo = min(n - 1, c_doubleprime)
    r_a = math.sqrt(2 / lo * abs(k - 2))
    r_b = ((2 - sigma) / c_doubleprime) ** (1 / (2 - sigma)) \
        * (sigma / (2 - sigma)) ** (sigma / (2 * (2 - sigma))) \
        * abs(k - 2) ** (1 / (2 - sigma))
    r = max(r_a, r_b)
    a = (2 * (r**2 + 1) ** ((2 - sigma) / 2) / (lo * sigma * m)) ** (1 / (m - 1))
    return r, a


@dataclass
class ResidualReport:
    """Per-cell residuals with tolerances and the sign contract outcome."""

    rho: np.ndarray
    residual: np.ndarray
    tolerance: np.ndarray
    role: str
    passed: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.role == "super":
            self.passed = self.residual <= self.tolerance
        else:
            self.passed = self.residual >= -self.tolerance

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))

    @property
    def worst_radius(self) -> float | None:
        """Radius with the largest contract excess (``None`` when all cells pass)."""
        if self.ok:
            return None
        excess = self.residual - self.tolerance if self.role == "super" else -self.residual - self.tolerance
        return float(self.rho[np.argmax(excess)])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "residual", "tolerance", "pass"])
        for row in zip(self.rho, self.residual, self.tolerance, self.passed):
            w.writerow([f"{row[0]:.12g}", f"{row[1]:.12g}", f"{row[2]:.6g}", int(row[3])])
        return buf.getvalue()


def _second_difference_scale(f, grid: RadialGrid, ghost: float):
    ext = np.concatenate([[f[0]], f, [ghost]])
    return np.abs(ext[2:] - 2 * ext[1:-1] + ext[:-2]) / grid.h**2


def barrier_residual(manifold: ModelManifold, b: PowerBarrier, grid: RadialGrid) -> ResidualReport:
    """(m-1) T Delta_h(W^m) - W per cell.

    Supersolutions need residual <= tol and subsolutions residual >= -tol
    with ``tol = 10 h^2 (|W| + (m-1) T |D^2 W^m|)``, ``D^2`` the local second
    difference.
    """
    rho = grid.centers
    wm = b.power_m(rho)
    ghost = float(b.power_m(grid.R + 0.5 * grid.h))
    lap = radial_laplacian(manifold, wm, grid, outer=ghost)
    scale = (b.m - 1) * b.T
    res = scale * lap - b(rho)
    tol = 10 * grid.h**2 * (np.abs(b(rho)) + scale * _second_difference_scale(wm, grid, ghost))
    return ResidualReport(rho, res, tol, b.role)


def separable_residual(manifold: ModelManifold, b: PowerBarrier, grid: RadialGrid, times):
    """Discrete u_t - Delta_h(u^m) for u = (1 - t/T)^(-1/(m-1)) W; shape (times, cells)."""
    rho = grid.centers
    out = []
    for t in np.atleast_1d(times):
        f = (1 - t / b.T) ** (-1 / (b.m - 1))
        ut = f ** b.m / ((b.m - 1) * b.T) * b(rho)
        um = f ** b.m * b.power_m(rho)
        ghost = f ** b.m * float(b.power_m(grid.R + 0.5 * grid.h))
        out.append(ut - radial_laplacian(manifold, um, grid, outer=ghost))
    return np.array(out)


def truncate_sub(v, delta: float, m: float):
    """(v^m - delta)^(1/m) clamped at zero."""
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    v = np.asarray(v, dtype=float)
    if np.any(v < 0):
        raise ValueError("v must be nonnegative")
    if delta == 0:
        return v.copy()
    return np.maximum(v**m - delta, 0.0) ** (1 / m)


@dataclass(frozen=True)
class EtaBarrier:
    """Exponential barrier for the dual backward problem.

    For ``sigma < 2``: ``lam exp(K (rho + rho0)^(2-sigma) / (t - T - t0))``.
    For ``sigma == 2``: ``lam exp(alpha (T - t)) (1 + rho^2)^(-beta)``.
    """

    sigma: float
    T: float
    lam: float
    t0: float = 0.0
    K: float = 0.0
    rho0: float = 0.0
    alpha: float = 0.0
    beta: float = 0.0
    c2: float = 1.0
    R0: float = 1.0

    @property
    def power_branch(self) -> bool:
        return self.sigma >= 2

    def _check_t(self, t):
        t = np.asarray(t, dtype=float)
        if not self.power_branch and np.any(t - self.T - self.t0 >= 0):
            raise ValueError("eta is singular at t = T + t0")
        return t

    def __call__(self, rho, t):
        rho = np.asarray(rho, dtype=float)
        t = self._check_t(t)
        if self.power_branch:
            return self.lam * np.exp(self.alpha * (self.T - t)) * (1 + rho**2) ** (-self.beta)
        p = 2 - self.sigma
        return self.lam * np.exp(self.K * (rho + self.rho0) ** p / (t - self.T - self.t0))

    def dt(self, rho, t):
        t = self._check_t(t)
        if self.power_branch:
            return -self.alpha * self(rho, t)
        p = 2 - self.sigma
        s = np.asarray(rho, dtype=float) + self.rho0
        return -self.K * s**p / (t - self.T - self.t0) ** 2 * self(rho, t)

    def drho(self, rho, t):
        rho = np.asarray(rho, dtype=float)
        if self.power_branch:
            return -2 * self.beta * rho / (1 + rho**2) * self(rho, t)
        p = 2 - self.sigma
        d = t - self.T - self.t0
        return self.K * p * (rho + self.rho0) ** (1 - self.sigma) / d * self(rho, t)

    def drhorho(self, rho, t):
        rho = np.asarray(rho, dtype=float)
        if self.power_branch:
            return 2 * self.beta / (1 + rho**2) ** 2 * (-1 + (1 + 2 * self.beta) * rho**2) * self(rho, t)
        p = 2 - self.sigma
        d = t - self.T - self.t0
        s = rho + self.rho0
        return (self.K**2 * p**2 * s ** (2 * (1 - self.sigma)) / d**2
                + self.K * p * (1 - self.sigma) * s ** (-self.sigma) / d) * self(rho, t)

    def coefficient(self, rho):
        """Diffusion coefficient bound a(rho) = C2 (1 + rho)^sigma."""
        return self.c2 * (1 + np.asarray(rho, dtype=float)) ** self.sigma


def eta_select(sigma: float, c2: float, T: float, t0: float, *, m: float = 2.0, n: int = 3,
               delta: float = 1.0, R0: float = 1.0, omega_sup: float = 1.0) -> EtaBarrier:
    """Parameters in the middle of the admissible region.

    ``K`` is half its upper bound; ``rho0 = 2 max(1, threshold)``.  For
    ``sigma = 2``, ``beta`` is twice its lower bound ``m/(m-1) + (N-1) delta/2``
    and ``alpha`` twice ``2 beta C3 (1 + 2 beta)`` with ``C3 = 2 C2`` (since
    ``(1 + rho)^2 <= 2 (1 + rho^2)``).
    """
    if c2 <= 0:
        raise ValueError("C2 must be positive")
    if not 0 <= sigma <= 2:
        raise ValueError("sigma must lie in [0, 2]")
    if not 0 < t0 < T / 4:
        raise ValueError("t0 must lie in (0, T/4)")
    if sigma >= 2:
        beta = 2 * (m / (m - 1) + (n - 1) * delta / 2)
        c3 = 2 * c2
        alpha = 2 * (2 * beta * c3 * (1 + 2 * beta))
        lam = omega_sup * (1 + R0**2) ** beta
        return EtaBarrier(sigma=2.0, T=T, lam=lam, t0=t0, alpha=alpha, beta=beta, c2=c2, R0=R0)
    p = 2 - sigma
    if sigma <= 1:
        K = 0.5 / (c2 * p**2)
        rho0 = 2.0
    else:
        K = 0.5 / (2 * c2 * p**2)
        thresh = (2 * p * (sigma - 1) * (T + t0) * c2) ** (1 / p)
        rho0 = 2 * max(1.0, thresh)
    lam = omega_sup * math.exp(K / t0 * (R0 + rho0) ** p)
    return EtaBarrier(sigma=sigma, T=T, lam=lam, t0=t0, K=K, rho0=rho0, c2=c2, R0=R0)


def eta_bounds(sigma: float, c2: float, T: float, t0: float):
    """(K upper bound, rho0 lower bound) of the admissible region for sigma < 2."""
    p = 2 - sigma
    if sigma <= 1:
        return 1 / (c2 * p**2), 1.0
    return 1 / (2 * c2 * p**2), max(1.0, (2 * p * (sigma - 1) * (T + t0) * c2) ** (1 / p))


@dataclass
class EtaReport:
    worst: float
    rho: float
    t: float
    tolerance: float

    @property
    def ok(self) -> bool:
        return self.worst <= self.tolerance


def eta_residual(manifold: ModelManifold, e: EtaBarrier, grid: RadialGrid, times) -> EtaReport:
    """Worst value of (eta_t + a Delta_h eta) / |eta_t| over ``R0 < rho < R`` and ``times``.

    ``a(rho) = C2 (1 + rho)^sigma``.  The tolerance is
    ``10 h^2 max(a |D^2 eta| / |eta_t|)`` over the sampled set.
    """
    rho = grid.centers
    mask = rho > e.R0
    worst, where, tol = -np.inf, (np.nan, np.nan), 0.0
    a = e.coefficient(rho)
    for t in np.atleast_1d(times):
        vals = e(rho, t)
        ghost = float(e(grid.R + 0.5 * grid.h, t))
        lap = radial_laplacian(manifold, vals, grid, outer=ghost)
        et = e.dt(rho, t)
        with np.errstate(invalid="ignore", divide="ignore"):
            norm = (et + a * lap) / np.abs(et)
            sd = a * _second_difference_scale(vals, grid, ghost) / np.abs(et)
        norm = np.where(mask & np.isfinite(norm), norm, -np.inf)
        i = int(np.argmax(norm))
        if norm[i] > worst:
            worst, where = float(norm[i]), (float(rho[i]), float(t))
        finite = sd[mask & np.isfinite(sd)]
        if finite.size:
            tol = max(tol, 10 * grid.h**2 * float(finite.max()))
    return EtaReport(worst, where[0], where[1], tol)


@dataclass(frozen=True)
class HarmonicShell:
    """Radial harmonic function on ``R - 1 <= rho <= R`` vanishing at ``R``."""

    N: int
    R: float
    boundary_value: float
    k1: float
    k2: float

    def __call__(self, rho):
        # written as a difference so that h(R) is exactly zero
        rho = np.asarray(rho, dtype=float)
        if self.N == 2:
            return self.k1 * (math.log(self.R) - np.log(rho))
        return self.k1 * (1 / rho ** (self.N - 2) - 1 / self.R ** (self.N - 2))

    def derivative(self, rho):
        rho = np.asarray(rho, dtype=float)
        if self.N == 2:
            return -self.k1 / rho
        return (2 - self.N) * self.k1 / rho ** (self.N - 1)

    @property
    def normal_derivative(self) -> float:
        """Outward normal derivative at rho = R."""
        return float(self.derivative(self.R))


def harmonic_shell(N: int, R: float, boundary_value: float) -> HarmonicShell:
    """Solve h(R) = 0, h(R - 1) = boundary_value for the radial harmonic h."""
    if N < 2 or R <= 2 - 1e-15 or boundary_value <= 0:
        raise ValueError("need N >= 2, R >= 2 and a positive boundary value")
    if N == 2:
        k1 = boundary_value / (math.log(R) - math.log(R - 1))
        return HarmonicShell(N, R, boundary_value, k1, k1 * math.log(R))
    p, q = R ** (N - 2), (R - 1) ** (N - 2)
    k1 = p * q / (p - q) * boundary_value
    k2 = -q / (p - q) * boundary_value
    return HarmonicShell(N, R, boundary_value, k1, k2)


def harmonic_laplacian(manifold: ModelManifold, shell: HarmonicShell, n_cells: int = 400):
    """Discrete Laplacian of h on the cells of [0, R] lying in [R - 1, R].

    Returns ``(rho, lap, tol)`` with ``tol = 10 h^2 max |D^2 h|``.
    """
    grid = RadialGrid(manifold, shell.R, n_cells)
    vals = shell(grid.centers)
    ghost = float(shell(shell.R + 0.5 * grid.h))
    lap = radial_laplacian(manifold, vals, grid, outer=ghost)
    mask = grid.centers >= shell.R - 1
    tol = 10 * grid.h**2 * float(np.max(_second_difference_scale(vals, grid, ghost)[mask]))
    return grid.centers[mask], lap[mask], tol


@dataclass(frozen=True)
class WeightedNorm:
    r: float
    sigma: float
    m: float

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")

    @property
    def exponent(self) -> float:
        return self.sigma / (self.m - 1)

    def weight(self, rho):
        rho = np.asarray(rho, dtype=float)
        return (self.r**2 + rho**2) ** (self.exponent / 2)


@dataclass(frozen=True)
class NormValue:
    value: float
    tail_limsup: float
    argmax: float


def weighted_sup_norm(f, rho, w: WeightedNorm) -> NormValue:
    """Grid sup of |f| / (r^2 + rho^2)^(sigma/(2(m-1))) plus a tail limsup.

    The tail estimate is the largest ``|f| / rho^(sigma/(m-1))`` over the last
    decade of sampled radii.
    """
    f = np.abs(np.asarray(f, dtype=float))
    rho = np.asarray(rho, dtype=float)
    q = f / w.weight(rho)
    i = int(np.argmax(q))
    tail = rho >= rho.max() / 10
    tail &= rho > 0
    limsup = float(np.max(f[tail] / rho[tail] ** w.exponent)) if np.any(tail) else math.nan
    return NormValue(float(q[i]), limsup, float(rho[i]))
