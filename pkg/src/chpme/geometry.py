"""Model manifolds M_psi and the radial Laplace-Beltrami operator.

A model manifold carries the metric ``drho^2 + psi(rho)^2 dtheta^2``.  Every
warp is evaluated in log form (``log psi``, ``psi'/psi`` and ``psi''/psi``) so
that warps growing like ``exp(c rho^p)`` never overflow; ``psi`` itself is
only materialised on request.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import OdeSolution

__all__ = [
    "DomainError",
    "GeometryError",
    "WarpFunction",
    "Euclidean",
    "Hyperbolic",
    "PowerLaw",
    "ExpPower",
    "OdeGenerated",
    "ModelManifold",
    "CurvatureBounds",
    "RadialGrid",
    "sigma_of_gamma",
    "sectional_radial",
    "ricci_radial",
    "laplacian_coeff",
    "radial_laplacian",
    "nonconservative_laplacian",
    "warp_from_spec",
]


class DomainError(ValueError):
    """Radius outside the evaluation domain of a warp."""


class GeometryError(ValueError):
    """A geometric invariant (class membership, curvature sign) is violated."""


def _as_array(rho):
    return np.asarray(rho, dtype=float)


def _log_sinh(x):
    x = np.asarray(x, dtype=float)
    small = x < 1.0
    xs = np.where(small, x, 1.0)
    xl = np.where(small, 1.0, x)
    return np.where(small, np.log(np.sinh(xs)), xl + np.log1p(-np.exp(-2.0 * xl)) - np.log(2.0))


class WarpFunction:
    """Base class for warping functions psi in the class A.

    Subclasses implement :meth:`log_psi`, :meth:`dlog_psi` (``psi'/psi``) and
    :meth:`curvature_ratio` (``psi''/psi``).
    """

    kind: str = "abstract"
    rho_max: float = np.inf

    def _check(self, rho, allow_zero=False):
        r = _as_array(rho)
        if np.any(~np.isfinite(r)):
            raise DomainError("radius must be finite")
        if allow_zero:
            if np.any(r < 0):
                raise DomainError(f"negative radius {r.min()!r}")
        elif np.any(r <= 0):
            raise DomainError(f"radius must be positive, got {r.min()!r}")
        if np.any(r > self.rho_max * (1 + 1e-12)):
            raise DomainError(f"radius {r.max()!r} beyond warp domain {self.rho_max!r}")
        return r

    def log_psi(self, rho):
        raise NotImplementedError

    def dlog_psi(self, rho):
        raise NotImplementedError

    def curvature_ratio(self, rho):
        raise NotImplementedError

    def psi(self, rho):
        r = self._check(rho, allow_zero=True)
        with np.errstate(divide="ignore"):
            out = np.exp(self.log_psi(np.where(r > 0, r, 1.0)))
        return np.where(r > 0, out, 0.0)

    def dpsi(self, rho):
        r = self._check(rho)
        return self.psi(r) * self.dlog_psi(r)

    def d2psi(self, rho):
        r = self._check(rho)
        return self.psi(r) * self.curvature_ratio(r)

    @property
    def is_cartan_hadamard(self) -> bool:
        return True

    def spec(self) -> dict:
        """Serializable kind tag plus parameters."""
        return {"kind": self.kind}

    def check_class_a(self, rho_small: float = 1e-6, tol: float = 1e-8) -> dict:
        """Check psi(0)=0, psi'(0)=1 by extrapolation, and positivity.

        ``psi'(0)`` is extrapolated from ``psi'/psi * psi`` at two small radii
        (Richardson on an O(rho^2) error).
        """
        r1, r2 = rho_small, 2 * rho_small
        d1 = float(self.dpsi(r1))
        d2 = float(self.dpsi(r2))
        dpsi0 = (4 * d1 - d2) / 3
        psi0 = float(2 * self.psi(r1) - self.psi(r2))
        return {
            "psi0": psi0,
            "dpsi0": dpsi0,
            "ok": abs(dpsi0 - 1.0) <= tol * 10 and abs(psi0) <= rho_small * tol * 10,
        }


@dataclass(frozen=True)
class Euclidean(WarpFunction):
    """psi(rho) = rho."""

    kind = "euclidean"
    rho_max: float = np.inf

    def log_psi(self, rho):
        return np.log(self._check(rho))

    def dlog_psi(self, rho):
        return 1.0 / self._check(rho)

    def curvature_ratio(self, rho):
        return np.zeros_like(self._check(rho))


@dataclass(frozen=True)
class Hyperbolic(WarpFunction):
    """psi(rho) = sinh(rho), sectional curvature -1."""

    kind = "hyperbolic"
    rho_max: float = np.inf

    def log_psi(self, rho):
        return _log_sinh(self._check(rho))

    def dlog_psi(self, rho):
        return 1.0 / np.tanh(self._check(rho))

    def curvature_ratio(self, rho):
        return np.ones_like(self._check(rho))


@dataclass(frozen=True)
class PowerLaw(WarpFunction):
    """psi(rho) = rho**delta.

    Only the large-radius behaviour of a model with an inverse-square Ricci
    bound; ``psi'(0) = 1`` fails unless ``delta == 1``.
    """

    delta: float = 1.0
    kind = "power"
    rho_max: float = np.inf

    def log_psi(self, rho):
        return self.delta * np.log(self._check(rho))

    def dlog_psi(self, rho):
        return self.delta / self._check(rho)

    def curvature_ratio(self, rho):
        r = self._check(rho)
        return self.delta * (self.delta - 1.0) / r**2

    @property
    def is_cartan_hadamard(self) -> bool:
        return self.delta >= 1.0

    def spec(self):
        return {"kind": self.kind, "delta": self.delta}


@dataclass(frozen=True)
class ExpPower(WarpFunction):
    """psi(rho) = rho * exp(c [(1 + rho^2)^((2 - sigma)/2) - 1]).

    A convex member of the class A with ``log psi ~ c rho^(2 - sigma)``, hence
    radial Ricci curvature of order ``-rho^gamma`` with ``gamma = 2 - 2 sigma``.
    """

    c: float = 1.0
    sigma: float = 1.0
    kind = "exp_power"
    rho_max: float = np.inf

    def __post_init__(self):
        if self.c <= 0 or not 0.0 <= self.sigma <= 2.0:
            raise GeometryError("ExpPower needs c > 0 and sigma in [0, 2]")

    def _g(self, r):
        p = 2.0 - self.sigma
        s = 1.0 + r * r
        g = self.c * (s ** (p / 2) - 1.0)
        g1_over_r = self.c * p * s ** (-self.sigma / 2)
        g2 = self.c * p * s ** (-self.sigma / 2 - 1) * (1.0 + (1.0 - self.sigma) * r * r)
        return g, g1_over_r, g2

    def log_psi(self, rho):
        r = self._check(rho)
        return np.log(r) + self._g(r)[0]

    def dlog_psi(self, rho):
        r = self._check(rho)
        return 1.0 / r + r * self._g(r)[1]

    def curvature_ratio(self, rho):
        r = self._check(rho)
        _, g1r, g2 = self._g(r)
        return 2.0 * g1r + g2 + (r * g1r) ** 2

    def spec(self):
        return {"kind": self.kind, "c": self.c, "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class OdeGenerated(WarpFunction):
    """Warp defined by ``psi'' = q(rho) psi`` with psi(0)=0, psi'(0)=1.

    The ODE is integrated in the variables ``y = log psi`` and ``z = psi'/psi``
    (``z' = q - z^2``) from ``rho_start``; below ``rho_start`` the warp is given
    by ``series``, which returns ``(log psi, psi'/psi)``.  ``psi''`` is always
    taken from ``q`` itself, never by differencing samples.
    """

    q: Callable[[np.ndarray], np.ndarray]
    series: Callable[[np.ndarray], tuple]
    rho_start: float
    solution: OdeSolution
    table: np.ndarray = field(repr=False)
    rho_max: float = np.inf
    label: dict = field(default_factory=dict)
    kind = "ode"

    def _eval(self, r):
        r = np.atleast_1d(r)
        logp = np.empty_like(r)
        dlog = np.empty_like(r)
        inner = r < self.rho_start
        if np.any(inner):
            logp[inner], dlog[inner] = self.series(r[inner])
        if np.any(~inner):
            yz = self.solution(r[~inner])
            logp[~inner] = yz[0]
            dlog[~inner] = yz[1]
        return logp, dlog

    def log_psi(self, rho):
        r = self._check(rho)
        out = self._eval(r)[0]
        return out.reshape(r.shape) if r.ndim else out[0]

    def dlog_psi(self, rho):
        r = self._check(rho)
        out = self._eval(r)[1]
        return out.reshape(r.shape) if r.ndim else out[0]

    def curvature_ratio(self, rho):
        r = self._check(rho)
        return np.asarray(self.q(r), dtype=float) * np.ones_like(r)

    @property
    def is_cartan_hadamard(self) -> bool:
        return bool(np.all(self.q(self.table[:, 0]) >= -1e-10))

    def samples(self) -> np.ndarray:
        """Sample table with columns (rho, psi, psi'); psi may be ``inf``."""
        rho, logp, dlog = self.table.T
        with np.errstate(over="ignore"):
            psi = np.exp(logp)
        return np.column_stack([rho, psi, psi * dlog])

    def ode_residual(self) -> float:
        """Largest relative residual of ``z' = q - z^2`` at the samples.

        ``z'`` comes from the integrator's dense output by a centred
        difference; the result measures how well the table solves its ODE.
        """
        rho = self.table[:, 0]
        rho = rho[(rho > self.rho_start * 1.5) & (rho < self.rho_max * 0.999)]
        eps = 1e-5 * rho
        zp = (self.solution(rho + eps)[1] - self.solution(rho - eps)[1]) / (2 * eps)
        z = self.solution(rho)[1]
        q = self.q(rho)
        scale = np.abs(q) + z * z + 1e-300
        return float(np.max(np.abs(zp - (q - z * z)) / scale))

    def spec(self):
        return {"kind": self.kind, **self.label}


def warp_from_spec(spec: dict) -> WarpFunction:
    """Build a closed-form warp from a ``{"kind": ..., params}`` mapping.

    ``ode`` warps are rebuilt by :mod:`chpme.comparison` from their labels.
    """
    kind = spec["kind"]
    if kind == "euclidean":
        return Euclidean()
    if kind == "hyperbolic":
        return Hyperbolic()
    if kind == "power":
        return PowerLaw(float(spec["delta"]))
    if kind == "exp_power":
        return ExpPower(float(spec["c"]), float(spec["sigma"]))
    if kind == "ode":
        from . import comparison

        return comparison.warp_from_label(spec)
    raise GeometryError(f"unknown warp kind {kind!r}")


@dataclass(frozen=True)
class ModelManifold:
    """Dimension ``dim >= 2`` plus a warp."""

    dim: int
    warp: WarpFunction

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 2:
            raise GeometryError(f"dimension must be an integer >= 2, got {self.dim!r}")

    def coeff(self, rho):
        """Radial drift b(rho) = (N-1) psi'/psi."""
        return (self.dim - 1) * self.warp.dlog_psi(rho)

    def log_area(self, rho):
        """log of psi^(N-1); ``-inf`` at the origin."""
        r = _as_array(rho)
        with np.errstate(divide="ignore"):
            pos = np.where(r > 0, r, 1.0)
            out = (self.dim - 1) * self.warp.log_psi(pos)
        return np.where(r > 0, out, -np.inf)

    def spec(self) -> dict:
        return {"dim": self.dim, "warp": self.warp.spec()}


def sigma_of_gamma(gamma: float) -> float:
    """Growth exponent sigma = min((2 - gamma)/2, 2)."""
    if not np.isfinite(gamma):
        raise ValueError("gamma must be finite")
    return min((2.0 - gamma) / 2.0, 2.0)


@dataclass(frozen=True)
class CurvatureBounds:
    """Curvature hypotheses: Ricci lower bound (gamma, C0), sectional upper bound (C1, R1)."""

    gamma: float
    c0: float
    c1: float | None = None
    r1: float | None = None
    sigma: float = field(init=False)

    def __post_init__(self):
        if self.gamma > 2:
            raise GeometryError("gamma must be <= 2")
        if self.c0 <= 0:
            raise GeometryError("C0 must be positive")
        if (self.c1 is None) != (self.r1 is None):
            raise GeometryError("C1 and R1 must be given together")
        if self.c1 is not None and (self.c1 <= 0 or self.r1 <= 0):
            raise GeometryError("C1 and R1 must be positive")
        object.__setattr__(self, "sigma", sigma_of_gamma(self.gamma))
        assert self.sigma == min((2.0 - self.gamma) / 2.0, 2.0)

    @property
    def needs_sectional(self) -> bool:
        return -2.0 < self.gamma < 2.0

    def require_sectional(self):
        if self.needs_sectional and self.c1 is None:
            raise GeometryError(
                f"gamma={self.gamma} in (-2, 2) needs the sectional bound (C1, R1)"
            )


def sectional_radial(w: WarpFunction, rho):
    """Sectional curvature of radial planes, -psi''/psi."""
    return -w.curvature_ratio(rho)


def ricci_radial(m: ModelManifold, rho):
    """Radial Ricci curvature, -(N-1) psi''/psi."""
    return -(m.dim - 1) * m.warp.curvature_ratio(rho)


def laplacian_coeff(m: ModelManifold, rho, check: bool = True):
    """(N-1) psi'/psi, checked against the Cartan-Hadamard floor (N-1)/rho."""
    r = _as_array(rho)
    if np.any(r <= 0):
        raise DomainError("laplacian_coeff needs rho > 0")
    b = m.coeff(r)
    if check and m.warp.is_cartan_hadamard:
        floor = (m.dim - 1) / r
        if np.any(b < floor * (1 - 1e-8)):
            raise GeometryError("drift coefficient below (N-1)/rho on a Cartan-Hadamard warp")
    return b


# Gauss-Legendre nodes for cell volumes; exact for polynomial areas up to degree 15.
_GL_X, _GL_W = np.polynomial.legendre.leggauss(8)


class RadialGrid:
    """Cell-centred grid on [0, R] in the measure psi^(N-1) drho.

    Attributes
    ----------
    centers, faces : ndarray
        ``n`` cell centres and ``n + 1`` faces (``faces[0] = 0``).
    log_face_area, log_volume : ndarray
        Logs of ``psi^(N-1)`` at faces and of ``int psi^(N-1)`` over cells.
    cp, cm : ndarray
        Face-area-to-volume ratios ``A_{i+1/2}/vol_i`` and ``A_{i-1/2}/vol_i``.
    """

    def __init__(self, manifold: ModelManifold, R: float, n_cells: int):
        if n_cells < 4:
            raise ValueError("grid too coarse: need at least 4 cells")
        if R <= 0:
            raise ValueError("R must be positive")
        self.manifold = manifold
        self.R = float(R)
        self.n = int(n_cells)
        self.h = self.R / self.n
        self.faces = np.linspace(0.0, self.R, self.n + 1)
        self.centers = 0.5 * (self.faces[:-1] + self.faces[1:])
        self.log_face_area = manifold.log_area(self.faces)
        lo, hi = self.faces[:-1], self.faces[1:]
        nodes = 0.5 * (lo + hi)[:, None] + 0.5 * self.h * _GL_X[None, :]
        logs = manifold.log_area(nodes) + np.log(0.5 * self.h * _GL_W)[None, :]
        top = logs.max(axis=1)
        self.log_volume = top + np.log(np.exp(logs - top[:, None]).sum(axis=1))
        with np.errstate(under="ignore"):
            self.cp = np.exp(self.log_face_area[1:] - self.log_volume)
            self.cm = np.exp(self.log_face_area[:-1] - self.log_volume)
        if not np.all(np.diff(self.log_face_area[1:]) > 0):
            raise GeometryError("face areas must increase")

    @property
    def volume(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_volume)

    @property
    def face_area(self):
        with np.errstate(over="ignore"):
            return np.exp(self.log_face_area)

    def cell_average(self, f: Callable) -> np.ndarray:
        """Volume-weighted cell averages of a radial function."""
        nodes = self.centers[:, None] + 0.5 * self.h * _GL_X[None, :]
        la = self.manifold.log_area(nodes)
        w = np.exp(la - la.max(axis=1, keepdims=True)) * _GL_W[None, :]
        return (w * f(nodes)).sum(axis=1) / w.sum(axis=1)

    def refine_embeds(self, other: "RadialGrid") -> bool:
        """True if this grid's cells coincide with the first cells of ``other``."""
        return abs(self.h - other.h) <= 1e-12 * self.h and other.R >= self.R - 1e-12


def _sample(g, grid: RadialGrid, outer):
    if callable(g):
        vals = np.asarray(g(grid.centers), dtype=float)
        ghost = float(g(grid.R + 0.5 * grid.h)) if outer is None else float(outer)
    else:
        vals = np.asarray(g, dtype=float)
        if vals.shape != grid.centers.shape:
            raise ValueError("sampled function does not match the grid")
        # quadratic extrapolation to the ghost centre
        ghost = 3 * vals[-1] - 3 * vals[-2] + vals[-3] if outer is None else float(outer)
    return vals, ghost


def radial_laplacian(m: ModelManifold, g, grid: RadialGrid, outer=None) -> np.ndarray:
    """Conservative discrete Laplacian (1/A)(A g')' at cell centres.

    ``g`` is a callable or an array of centre values.  ``outer`` is the value
    at the ghost centre ``R + h/2``; callables supply it themselves and arrays
    fall back to quadratic extrapolation.  The face at the origin has zero
    area, so the symmetry condition g'(0) = 0 needs no special treatment.
    """
    if grid.manifold is not m and grid.manifold != m:
        raise ValueError("grid was built for a different manifold")
    vals, ghost = _sample(g, grid, outer)
    ext = np.append(vals, ghost)
    flux = np.diff(ext) / grid.h  # g' at faces 1..n
    out = grid.cp * flux
    out[1:] -= grid.cm[1:] * flux[:-1]
    return out


def nonconservative_laplacian(m: ModelManifold, g, grid: RadialGrid, outer=None) -> np.ndarray:
    """g'' + b g' by centred differences; even reflection at the origin."""
    vals, ghost = _sample(g, grid, outer)
    ext = np.concatenate([[vals[0]], vals, [ghost]])
    h = grid.h
    d2 = (ext[2:] - 2 * ext[1:-1] + ext[:-2]) / h**2
    d1 = (ext[2:] - ext[:-2]) / (2 * h)
    return d2 + m.coeff(grid.centers) * d1
