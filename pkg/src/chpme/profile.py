"""Stationary blow-up profiles and the recursive growth lower bound.

At the normalized horizon ``T = 1/(m-1)`` the profile ``V = W^m`` solves

    (psi^(N-1) V')' = psi^(N-1) V^(1/m),   V(0) = alpha^m,  V'(0) = 0.

The integration uses ``(V, V')`` with ``V'' = V^(1/m) - b V'``, so only the
drift ``b`` enters and exponentially growing warps never overflow.  The flux
``psi^(N-1) V'`` is kept in log space.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import quad, solve_ivp

from .barriers import NormValue, WeightedNorm, weighted_sup_norm
from .geometry import ModelManifold, RadialGrid, radial_laplacian

__all__ = [
    "ProfileError",
    "InsufficientTail",
    "StationaryProfile",
    "integrate_profile",
    "rescale_profile",
    "asymptotic_exponent",
    "ExponentFit",
    "RecursionTrace",
    "recursion_lower_bound",
    "ordering_check",
    "c_tilde",
    "bound_chain",
    "flux_identity_error",
    "profile_residual",
    "profile_norm",
]

OVERFLOW = 1e300


class ProfileError(RuntimeError):
    pass


class InsufficientTail(ValueError):
    pass


def series_coefficients(man: ModelManifold, alpha: float, m: float):
    """(V(0), rho^2, rho^4) coefficients of the series start."""
    n = man.dim
    k = float(man.warp.curvature_ratio(1e-6))
    if not np.isfinite(k):
        k = 0.0
    c2 = alpha / (2 * n)
    c4 = (alpha ** (2 - m) / (2 * m * n) - (n - 1) * k * alpha / (3 * n)) / (4 * (n + 2))
    return alpha**m, c2, c4


def _sample_grid(rho_max: float, rho_ser: float) -> np.ndarray:
    inner = np.linspace(0.0, min(1.0, rho_max), 101)
    if rho_max > 1:
        outer = np.geomspace(1.0, rho_max, int(60 * math.log10(rho_max)) + 2)
        inner = np.concatenate([inner, outer])
    return np.unique(np.concatenate([inner, [rho_ser]]))


@dataclass(frozen=True, eq=False)
class StationaryProfile:
    """Sampled profile W_{T,alpha}.

    ``samples`` has columns ``rho, W, V, dV, log_flux`` where ``V = W^m``,
    ``dV = V'`` and ``log_flux = log(psi^(N-1) V')`` (``-inf`` at the origin).
    """

    alpha: float
    T: float
    m: float
    samples: np.ndarray = field(repr=False)
    manifold: ModelManifold | None = field(default=None, repr=False)
    stop_radius: float | None = None
    rho_max: float = 0.0
    _dense: object = field(default=None, repr=False)
    _scale: float = 1.0

    @property
    def rho(self):
        return self.samples[:, 0]

    @property
    def W(self):
        return self.samples[:, 1]

    @property
    def V(self):
        return self.samples[:, 2]

    @property
    def flux(self):
        with np.errstate(over="ignore"):
            return np.exp(self.samples[:, 4])

    @property
    def reached(self) -> float:
        """Largest radius actually integrated."""
        return float(self.rho[-1])

    def __call__(self, rho):
        """W at arbitrary radii inside the integrated range."""
        rho = np.asarray(rho, dtype=float)
        if self._dense is None:
            return np.interp(rho, self.rho, self.W)
        v, _ = self._dense(rho)
        return self._scale * np.maximum(v, 0.0) ** (1 / self.m)

    def power_m(self, rho):
        return np.asarray(self(rho)) ** self.m

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rho", "W", "V", "flux"])
        for r, W, V, lf in self.samples[:, [0, 1, 2, 4]]:
            w.writerow([f"{r:.12g}", f"{W:.12g}", f"{V:.12g}", f"{math.exp(lf) if lf < 690 else math.inf:.12g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, alpha: float, T: float, m: float) -> "StationaryProfile":
        rows = list(csv.DictReader(io.StringIO(text)))
        rho = np.array([float(r["rho"]) for r in rows])
        W = np.array([float(r["W"]) for r in rows])
        V = np.array([float(r["V"]) for r in rows])
        with np.errstate(divide="ignore"):
            lf = np.log(np.array([float(r["flux"]) for r in rows]))
        dV = np.gradient(V, rho)
        table = np.column_stack([rho, W, V, dV, lf])
        return cls(alpha, T, m, table, rho_max=float(rho[-1]))


def integrate_profile(man: ModelManifold, alpha: float, m: float, rho_max: float,
                      rtol: float = 1e-10) -> StationaryProfile:
    """Integrate the profile problem at ``T = 1/(m-1)`` out to ``rho_max``.

    Integration stops early if ``V`` would overflow; the stop radius is then
    recorded in ``stop_radius``.
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    if not m > 1:
        raise ValueError("m must exceed 1")
    if not rho_max > 0:
        raise ValueError("rho_max must be positive")
    # stay inside the warp's tabulated domain
    rho_max = min(rho_max, float(man.warp.rho_max) * (1 - 1e-9))
    a0, c2, c4 = series_coefficients(man, alpha, m)
    rho_ser = 1e-3 * min(1.0, alpha ** ((1 - m) / 2))

    def series(r):
        r = np.asarray(r, dtype=float)
        return a0 + c2 * r**2 + c4 * r**4, 2 * c2 * r + 4 * c4 * r**3

    def rhs(r, y):
        v = y[0] if y[0] > 0 else 0.0
        return [y[1], v ** (1 / m) - float(man.coeff(r)) * y[1]]

    def overflow(r, y):
        return OVERFLOW - y[0]

    overflow.terminal = True
    v0, d0 = series(rho_ser)
    sol = solve_ivp(rhs, (rho_ser, rho_max), [float(v0), float(d0)], method="LSODA",
                    rtol=rtol, atol=1e-14, dense_output=True, events=overflow)
    if sol.status == -1:
        raise ProfileError(f"profile integration failed: {sol.message}")
    end = float(sol.t[-1])
    stop = None if sol.status == 0 else end

    def dense(r):
        r = np.asarray(r, dtype=float)
        sv, sd = series(r)
        inside = np.clip(r, rho_ser, end)
        yv = sol.sol(inside.ravel()).reshape((2,) + inside.shape)
        below = r < rho_ser
        return np.where(below, sv, yv[0]), np.where(below, sd, yv[1])

    grid = _sample_grid(end, rho_ser)
    V, dV = dense(grid)
    with np.errstate(divide="ignore"):
        log_flux = np.where(grid > 0, man.log_area(np.maximum(grid, 1e-300)) + np.log(np.maximum(dV, 1e-300)), -np.inf)
    log_flux[0] = -np.inf
    W = V ** (1 / m)
    table = np.column_stack([grid, W, V, dV, log_flux])
    return StationaryProfile(alpha, 1 / (m - 1), m, table, man, stop, rho_max, dense, 1.0)


def rescale_profile(p: StationaryProfile, T_new: float) -> StationaryProfile:
    """Rescale a profile from ``T = 1/(m-1)`` to horizon ``T_new``."""
    if not T_new > 0:
        raise ValueError("T_new must be positive")
    if abs(p.T * (p.m - 1) - 1) > 1e-12:
        raise ValueError("rescale_profile expects a profile normalized at T = 1/(m-1)")
    s = ((p.m - 1) * T_new) ** (-1 / (p.m - 1))
    t = p.samples.copy()
    t[:, 1] *= s
    t[:, 2] *= s**p.m
    t[:, 3] *= s**p.m
    with np.errstate(divide="ignore"):
        t[:, 4] += p.m * math.log(s)
    return replace(p, alpha=p.alpha * s, T=T_new, samples=t, _scale=p._scale * s)


def profile_residual(p: StationaryProfile, grid: RadialGrid):
    """Discrete residual ``(m-1) T Delta_h(W^m) - W`` with tolerance ``10 h^2 (|W| + (m-1)T |D^2 W^m|)``."""
    if p.manifold is None:
        raise ValueError("profile carries no manifold")
    if grid.R + grid.h > p.reached:
        raise ValueError("grid extends beyond the integrated range")
    rho = grid.centers
    vm = p.power_m(rho)
    ghost = float(p.power_m(grid.R + 0.5 * grid.h))
    lap = radial_laplacian(p.manifold, vm, grid, outer=ghost)
    scale = (p.m - 1) * p.T
    W = p(rho)
    res = scale * lap - W
    ext = np.concatenate([[vm[0]], vm, [ghost]])
    d2 = np.abs(ext[2:] - 2 * ext[1:-1] + ext[:-2]) / grid.h**2
    tol = 10 * grid.h**2 * (np.abs(W) + scale * d2)
    return res, tol


@dataclass(frozen=True)
class ExponentFit:
    exponent: float
    width: float
    prefactor: float
    window: tuple


def asymptotic_exponent(p, rho=None, W=None, decades_required: float = 2.0) -> ExponentFit:
    """Least-squares slope of log W against log rho over the last decade.

    The window is trimmed by 10% (in log radius) at each end.  ``width`` is
    the spread between the slopes fitted on the two halves of the window.
    Accepts a profile or explicit ``rho``/``W`` arrays.
    """
    if p is not None:
        rho, W = p.rho, p.W
    rho = np.asarray(rho, dtype=float)
    W = np.asarray(W, dtype=float)
    top = rho.max()
    if top < 10**decades_required:
        raise InsufficientTail(f"profile reaches only rho = {top:.4g}; need {decades_required} decades")
    lo, hi = math.log(top / 10), math.log(top)
    a, b = lo + 0.1 * (hi - lo), hi - 0.1 * (hi - lo)
    lr = np.log(np.maximum(rho, 1e-300))
    mask = (lr >= a) & (lr <= b) & (W > 0)
    if mask.sum() < 8:
        raise InsufficientTail("too few tail samples")
    x, y = lr[mask], np.log(W[mask])
    slope, icpt = np.polyfit(x, y, 1)
    mid = 0.5 * (a + b)
    s1 = np.polyfit(x[x <= mid], y[x <= mid], 1)[0]
    s2 = np.polyfit(x[x >= mid], y[x >= mid], 1)[0]
    return ExponentFit(float(slope), float(abs(s1 - s2)), float(math.exp(icpt)),
                       (math.exp(a), math.exp(b)))


@dataclass(frozen=True)
class RecursionTrace:
    betas: np.ndarray
    cs: np.ndarray
    limit: float

    @property
    def residual(self) -> float:
        return float(abs(self.betas[-1] - self.limit))

    def steps_to(self, tol: float) -> int | None:
        """First index n with |beta_n - limit| <= tol."""
        hit = np.nonzero(np.abs(self.betas - self.limit) <= tol)[0]
        return int(hit[0]) if hit.size else None


def recursion_lower_bound(sigma: float, m: float, n_steps: int, alpha: float = 1.0,
                          c_tilde: float | None = None) -> RecursionTrace:
    """Iterate ``beta_{n+1} = beta_n/m + sigma`` from ``beta_0 = 0, c_0 = alpha^m``.

    With ``c_tilde`` given, the prefactors follow
    ``c_{n+1} = min(C c_n^(1/m) / (2^(beta_n/m + 1) (beta_n/m + sigma)), alpha^m / 2^(beta_n/m + sigma))``;
    otherwise they are left as NaN.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if m <= 1:
        raise ValueError("m must exceed 1")
    betas = np.zeros(n_steps + 1)
    cs = np.full(n_steps + 1, np.nan)
    cs[0] = alpha**m
    for n in range(n_steps):
        p = betas[n] / m
        betas[n + 1] = p + sigma
        if c_tilde is not None:
            if p + sigma > 0:
                grow = c_tilde * cs[n] ** (1 / m) / (2 ** (p + 1) * (p + sigma))
            else:
                grow = math.inf
            cs[n + 1] = min(grow, alpha**m / 2 ** (p + sigma))
    return RecursionTrace(betas, cs, sigma * m / (m - 1))


def c_tilde(man: ModelManifold, sigma: float, rho_max: float, n: int = 200) -> float:
    """inf over (1, rho_max) of rho^(1-sigma) int_{rho/2}^rho psi^(N-1) ds / psi(rho)^(N-1)."""
    radii = np.geomspace(1.0, rho_max, n)
    vals = []
    for r in radii:
        la_r = float(man.log_area(r))
        f = lambda s: math.exp(float(man.log_area(s)) - la_r)  # noqa: E731
        lo = max(0.5 * r, r - 60.0)  # integrand below e^-60 is negligible for growing areas
        val, _ = quad(f, lo, r, limit=200, epsrel=1e-10)
        if lo > 0.5 * r:
            val += quad(f, 0.5 * r, lo, limit=200, epsrel=1e-8)[0]
        vals.append(r ** (1 - sigma) * val)
    return float(min(vals))


def bound_chain(p: StationaryProfile, sigma: float, n_stages: int = 20, ct: float | None = None):
    """Stage-wise lower bounds V >= c rho^beta_n on (1, rho_max).

    At each stage ``c_n`` is re-fitted as the minimum of ``V/rho^beta_n`` over
    the samples, then pushed through one step of the prefactor recursion
    (constant ``ct``, computed by :func:`c_tilde` when omitted).  Each row is
    ``(n, beta_n, c_fit, c_next, holds)`` where ``holds`` says that
    ``V >= c_next rho^beta_{n+1}`` on every sample.
    """
    if p.manifold is None and ct is None:
        raise ValueError("profile carries no manifold")
    if ct is None:
        ct = c_tilde(p.manifold, sigma, p.reached)
    tr = recursion_lower_bound(sigma, p.m, n_stages, alpha=p.alpha)
    mask = p.rho > 1
    r, V = p.rho[mask], p.V[mask]
    rows = []
    for n in range(n_stages):
        beta, nxt = tr.betas[n], tr.betas[n + 1]
        c_fit = float(np.min(V / r**beta))
        q = beta / p.m
        c_next = min(ct * c_fit ** (1 / p.m) / (2 ** (q + 1) * (q + sigma)) if q + sigma > 0 else math.inf,
                     p.alpha**p.m / 2 ** (q + sigma))
        holds = bool(np.all(V >= c_next * r**nxt * (1 - 1e-12)))
        rows.append((n, float(beta), c_fit, float(c_next), holds))
    return rows


def ordering_check(p0: StationaryProfile, p1: StationaryProfile) -> bool:
    """True iff W1 > W0 at every common sample radius."""
    if p0.m != p1.m or abs(p0.T - p1.T) > 1e-12 * p0.T:
        raise ValueError("profiles must share m and T")
    if p0.manifold is not None and p1.manifold is not None and p0.manifold != p1.manifold:
        raise ValueError("profiles must share the manifold")
    top = min(p0.reached, p1.reached)
    r = p0.rho[p0.rho <= top]
    return bool(np.all(p1(r) > p0(r)))


def flux_identity_error(p: StationaryProfile, radii) -> float:
    """Max relative gap between V'(rho) and psi^(1-N) int_0^rho psi^(N-1) V^(1/m)."""
    if p.manifold is None:
        raise ValueError("profile carries no manifold")
    man = p.manifold
    worst = 0.0
    for r in np.atleast_1d(radii):
        la_r = float(man.log_area(r))

        def f(s):
            if s <= 0:
                return 0.0
            return math.exp(float(man.log_area(s)) - la_r) * float(p.power_m(s)) ** (1 / p.m)

        val, _ = quad(f, 0.0, r, limit=200, epsabs=0.0, epsrel=1e-11)
        _, dv = p._dense(np.array([r]))
        dv = p._scale**p.m * float(dv[0])
        scale = (p.m - 1) * p.T
        worst = max(worst, abs(scale * dv - val) / abs(val))
    return worst


def profile_norm(p: StationaryProfile, sigma: float, r: float = 1.0) -> NormValue:
    """Weighted sup norm of W in X_{inf,sigma}."""
    return weighted_sup_norm(p.W, p.rho, WeightedNorm(r, sigma, p.m))
