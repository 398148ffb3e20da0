"""Stereographic spectral toolkit for decaying planar profiles.

Geometry.  A planar point at radius ``rho`` and angle ``a`` is carried to
the unit sphere point with colatitude ``theta`` and azimuth ``a`` where
``rho = cot(theta/2)`` (origin -> south pole, infinity -> north pole).
Area elements match through the conformal weight ``4/(1 + rho^2)^2 =
U0(rho)/2``, so for any transported sample ``f~(Pi(y)) = f(y)``

    integral_{S^2} f~  =  (1/2) integral_{R^2} f U0,

which is the bridge every two-route check in this module crosses.

Spectral side.  Real orthonormal spherical harmonics on a Gauss-Legendre
(colatitude) x uniform (azimuth) product grid; the flat coefficient order
is l-major with k ascending (index ``l*l + l + k``) and the sphere
Laplacian acts as ``-l(l+1)``.  The pairing of a zero-mass profile ``phi``
with its potential-side profile ``g = phi/U0 - (-Lap)^{-1} phi + c`` has
two independent routes,

    integral phi g  =  2 sum_{l>=2} [l(l+1)/(l(l+1)-2)] g~_{l,k}^2
                    =  (1/2) sum_{l>=2} [l(l+1)/(l(l+1)-2)] c_{l,k}^2,

with g~ the sphere-orthonormal coefficients of the transported g and
c = integral g (e o Pi) U0 dy = 2 g~ the U0-weighted planar projections
(the transport identity integral f U0 dy = 2 integral f~ dS converts one
bookkeeping into the other).  The routes are exposed as
``quadratic_form`` (planar quadrature) against ``spectral_form``
(coefficients).

The Newtonian inverse inside ``g_from_phi`` runs per azimuthal Fourier
mode: cumulative mass for the radial part, the exact one-dimensional
kernel ``(r_<^k r_>^{-k})/(2k)`` for ``k >= 1``.  No two-dimensional
Poisson solve is ever set up.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import cumulative_simpson, simpson
from scipy.interpolate import CubicSpline
from scipy.linalg import LinAlgError, eigh
from scipy.special import sph_harm_y

from .bubble import U0
from .errors import ConfigError, NumericalError
from .radial import RadialGrid, fornberg_weights

__all__ = [
    "SphereCoeffs",
    "SphereGrid",
    "PlanarTestFunction",
    "PlanarQuadrature",
    "harmonic_index",
    "real_harmonic",
    "default_sphere_grid",
    "planar_integral",
    "to_sphere",
    "integral_identity_check",
    "decompose",
    "reconstruct",
    "g_from_phi",
    "quadratic_form",
    "spectral_form",
    "construct_from_coeffs",
    "derivative_identity_check",
    "hardy_quotient",
    "hardy_rayleigh_check",
]


def harmonic_index(l, k):
    """Flat position of the real harmonic (l, k): l-major, k ascending."""
    return l * l + l + k


def real_harmonic(l, k, theta, azimuth):
    """Real orthonormal spherical harmonic e_{l,k} at (theta, azimuth).

    k = 0 is the zonal line (no azimuth factor); k > 0 pairs with
    cos(k*azimuth) and k < 0 with sin(|k|*azimuth), both carrying sqrt(2)
    and the sign that keeps the family orthonormal.
    """
    l, k = int(l), int(k)
    if l < 0 or abs(k) > l:
        raise ConfigError(f"invalid harmonic degree/order ({l}, {k})")
    theta = np.asarray(theta, dtype=float)
    leg = sph_harm_y(l, abs(k), theta, np.zeros_like(theta)).real
    if k == 0:
        return leg
    fac = np.sqrt(2.0) * (-1.0) ** abs(k) * leg
    az = np.asarray(azimuth, dtype=float)
    return fac * np.cos(k * az) if k > 0 else fac * np.sin(-k * az)


@dataclass(frozen=True)
class SphereCoeffs:
    """Real spherical-harmonic coefficient table, flat l-major / k-ascending.

    Entry ``l*l + l + k`` holds the coefficient of e_{l,k}; the spectral
    pairing reads eigenvalues off the degree map l -> l(l+1).
    """

    l_max: int
    values: np.ndarray

    def __post_init__(self):
        l_max = int(self.l_max)
        if l_max < 4:
            raise ConfigError(f"coefficient table needs l_max >= 4, got {l_max}")
        vals = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        n = (l_max + 1) ** 2
        if vals.shape != (n,):
            raise ConfigError(
                f"coefficient table for l_max={l_max} must have shape ({n},), "
                f"got {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise ConfigError("coefficient table contains non-finite entries")
        object.__setattr__(self, "l_max", l_max)
        object.__setattr__(self, "values", vals)

    @classmethod
    def zeros(cls, l_max: int = 16) -> "SphereCoeffs":
        return cls(l_max, np.zeros((l_max + 1) ** 2))

    @classmethod
    def unit(cls, l: int, k: int, l_max: int = 16) -> "SphereCoeffs":
        """A single unit coefficient at (l, k)."""
        if not 0 <= l <= l_max or abs(k) > l:
            raise ConfigError(f"harmonic ({l}, {k}) outside table with l_max={l_max}")
        vals = np.zeros((l_max + 1) ** 2)
        vals[harmonic_index(l, k)] = 1.0
        return cls(l_max, vals)

    def __getitem__(self, lk) -> float:
        l, k = lk
        if not 0 <= l <= self.l_max or abs(k) > l:
            raise KeyError(f"harmonic ({l}, {k}) outside table with l_max={self.l_max}")
        return float(self.values[harmonic_index(l, k)])

    def degrees(self) -> np.ndarray:
        """Degree l of each flat entry."""
        return np.floor(np.sqrt(np.arange(self.values.size))).astype(int)

    def eigenvalues(self) -> np.ndarray:
        """Sphere-Laplacian eigenvalue l(l+1) of each flat entry."""
        l = self.degrees()
        return (l * (l + 1)).astype(float)

    def table(self):
        """(l, k, coeff) rows in storage order, ready for CSV."""
        l = self.degrees()
        k = np.arange(self.values.size) - l * l - l
        return [(int(li), int(ki), float(v)) for li, ki, v in zip(l, k, self.values)]


class SphereGrid:
    """Gauss-Legendre x uniform-azimuth quadrature/sampling grid on the sphere.

    ``order`` is the polynomial exactness degree of the product rule;
    decomposing a band limited at l_max without aliasing needs
    ``order >= 2 l_max + 2``.  Nodes stay strictly inside the poles, so the
    planar preimages are finite and transported samples of decaying
    profiles extend by zero toward the puncture at infinity.
    """

    def __init__(self, order: int = 64):
        order = int(order)
        if order < 10:
            raise ConfigError(f"sphere grid order must be >= 10, got {order}")
        self.order = order
        self.n_theta = (order + 2) // 2
        self.n_phi = order + 1
        x, w = leggauss(self.n_theta)
        self.cos_theta = x  # ascending, so theta itself descends
        self.theta = np.arccos(x)
        self.sin_theta = np.sqrt(1.0 - x * x)
        self.theta_weights = w
        self.azimuth = 2.0 * np.pi * np.arange(self.n_phi) / self.n_phi
        self.azimuth_weight = 2.0 * np.pi / self.n_phi
        self.rho = np.sqrt((1.0 + x) / (1.0 - x))  # planar radius cot(theta/2)
        self._basis_cache: dict = {}
        self._theta_matrices: dict = {}

    # -- quadrature ---------------------------------------------------------

    def _check_samples(self, samples) -> np.ndarray:
        arr = np.asarray(samples, dtype=float)
        if arr.shape != (self.n_theta, self.n_phi):
            raise ConfigError(
                f"samples of shape {arr.shape} do not match the "
                f"({self.n_theta}, {self.n_phi}) grid"
            )
        return arr

    def integrate(self, samples) -> float:
        """Quadrature of grid samples over the sphere."""
        arr = self._check_samples(samples)
        return float(self.theta_weights @ arr.sum(axis=1)) * self.azimuth_weight

    # -- stereographic transport ---------------------------------------------

    def planar_points(self):
        """Cartesian planar preimages of the grid nodes."""
        y1 = self.rho[:, None] * np.cos(self.azimuth)[None, :]
        y2 = self.rho[:, None] * np.sin(self.azimuth)[None, :]
        return y1, y2

    def to_sphere(self, phi_fn) -> np.ndarray:
        """Sample a decaying planar profile through the stereographic map."""
        f = _evaluator(phi_fn)
        y1, y2 = self.planar_points()
        vals = np.broadcast_to(np.asarray(f(y1, y2), dtype=float), y1.shape)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("transported samples contain non-finite values")
        return np.array(vals)

    # -- harmonic analysis ----------------------------------------------------

    def basis(self, l_max: int) -> np.ndarray:
        """Real harmonic basis sampled on the grid, shape (n_basis, n_theta, n_phi)."""
        key = int(l_max)
        if key < 0:
            raise ConfigError("l_max must be nonnegative")
        if key not in self._basis_cache:
            B = np.empty(((key + 1) ** 2, self.n_theta, self.n_phi))
            zeros = np.zeros_like(self.theta)
            for l in range(key + 1):
                for k in range(l + 1):
                    leg = sph_harm_y(l, k, self.theta, zeros).real
                    if k == 0:
                        B[harmonic_index(l, 0)] = leg[:, None]
                    else:
                        fac = np.sqrt(2.0) * (-1.0) ** k
                        B[harmonic_index(l, k)] = (
                            fac * leg[:, None] * np.cos(k * self.azimuth)[None, :]
                        )
                        B[harmonic_index(l, -k)] = (
                            fac * leg[:, None] * np.sin(k * self.azimuth)[None, :]
                        )
            self._basis_cache[key] = B
        return self._basis_cache[key]

    def decompose(self, samples, l_max: int = 16) -> SphereCoeffs:
        """Project grid samples on the harmonic basis through degree l_max."""
        if self.order < 2 * l_max + 2:
            raise ConfigError(
                f"aliasing: grid order {self.order} cannot resolve l_max={l_max} "
                f"(needs order >= {2 * l_max + 2})"
            )
        arr = self._check_samples(samples)
        weighted = arr * self.theta_weights[:, None] * self.azimuth_weight
        return SphereCoeffs(l_max, np.einsum("jtp,tp->j", self.basis(l_max), weighted))

    def reconstruct(self, coeffs: SphereCoeffs) -> np.ndarray:
        """Sum the coefficient table back into grid samples."""
        return np.einsum("j,jtp->tp", coeffs.values, self.basis(coeffs.l_max))

    # -- independent Laplacian application ------------------------------------

    def _theta_matrix(self, order: int) -> np.ndarray:
        if order not in self._theta_matrices:
            n = self.n_theta
            # wide rows: the 1/sin^2 term amplifies colatitude error near the
            # poles, and the one-sided end stencils need the extra accuracy
            width = min(13, n)
            D = np.zeros((n, n))
            for i in range(n):
                lo = min(max(i - width // 2, 0), n - width)
                js = np.arange(lo, lo + width)
                D[i, js] = fornberg_weights(self.theta[js], self.theta[i], order)
            self._theta_matrices[order] = D
        return self._theta_matrices[order]

    def laplace_beltrami(self, samples) -> np.ndarray:
        """Apply the sphere Laplacian by finite differences.

        Fourier in azimuth, wide nonuniform stencils in colatitude --
        deliberately independent of the harmonic basis, so the eigenvalue
        relation can be cross-checked against ``decompose``.
        """
        arr = self._check_samples(samples)
        modes = np.fft.rfft(arr, axis=1)
        d1 = self._theta_matrix(1) @ modes
        d2 = self._theta_matrix(2) @ modes
        cot = (self.cos_theta / self.sin_theta)[:, None]
        k2 = np.arange(modes.shape[1])[None, :] ** 2
        out = d2 + cot * d1 - k2 / (self.sin_theta**2)[:, None] * modes
        return np.fft.irfft(out, n=self.n_phi, axis=1)


@lru_cache(maxsize=8)
def default_sphere_grid(order: int = 64) -> SphereGrid:
    """Shared grid instances; basis tables are immutable, so reuse is safe."""
    return SphereGrid(order)


# -----------------------------------------------------------------------------
# planar side
# -----------------------------------------------------------------------------


def _evaluator(phi_fn) -> Callable:
    return phi_fn.evaluator if isinstance(phi_fn, PlanarTestFunction) else phi_fn


class PlanarQuadrature:
    """Whole-plane polar product rule, independent of the sphere grid.

    Gauss-Legendre in the compactified radius u = r/(1+r) -- the infinite
    tail is native, nothing is truncated -- and uniform trapezoid in angle.
    """

    def __init__(self, n_radial: int = 360, n_angle: int = 64):
        if n_radial < 8 or n_angle < 4:
            raise ConfigError("planar quadrature needs n_radial >= 8, n_angle >= 4")
        u, wu = leggauss(n_radial)
        u = 0.5 * (u + 1.0)
        wu = 0.5 * wu
        self.r = u / (1.0 - u)
        self.radial_weights = wu * self.r / (1.0 - u) ** 2  # polar measure r dr
        self.angle = 2.0 * np.pi * np.arange(n_angle) / n_angle
        self.angle_weight = 2.0 * np.pi / n_angle
        self.y1 = self.r[:, None] * np.cos(self.angle)[None, :]
        self.y2 = self.r[:, None] * np.sin(self.angle)[None, :]

    def integrate(self, f) -> float:
        vals = np.broadcast_to(np.asarray(f(self.y1, self.y2), dtype=float), self.y1.shape)
        if not np.all(np.isfinite(vals)):
            raise NumericalError("planar quadrature hit non-finite values")
        return float(self.radial_weights @ vals.sum(axis=1)) * self.angle_weight


@lru_cache(maxsize=8)
def _plane(n_radial: int = 360, n_angle: int = 64) -> PlanarQuadrature:
    return PlanarQuadrature(n_radial, n_angle)


def planar_integral(phi_fn, n_radial: int = 360, n_angle: int = 64) -> float:
    """Integral of a decaying planar function over the whole plane."""
    return _plane(n_radial, n_angle).integrate(_evaluator(phi_fn))


@dataclass(frozen=True)
class PlanarTestFunction:
    """Planar profile with a declared decay envelope and moment flags.

    ``evaluator`` maps Cartesian coordinate arrays (y1, y2) to values.
    ``decay`` declares |phi| <= C (1+|y|)^(-decay); it must exceed 2 so the
    transported integrals converge, and construction spot-checks the
    envelope on a radial probe set.  A flagged ``zero_mass`` claim is
    verified by quadrature here (``g_from_phi`` re-checks with its own
    gate); the moment flags are bookkeeping read by downstream solvers.
    """

    evaluator: Callable
    decay: float
    zero_mass: bool = False
    zero_first_moment: bool = False
    zero_second_moment: bool = False
    name: str = ""

    def __post_init__(self):
        if not self.decay > 2.0:
            raise ConfigError(f"decay exponent must exceed 2, got {self.decay}")
        probe_r = np.geomspace(1e-3, 1e4, 57)
        ang = np.linspace(0.0, 2.0 * np.pi, 12, endpoint=False)
        vals = np.asarray(
            self.evaluator(probe_r[:, None] * np.cos(ang), probe_r[:, None] * np.sin(ang)),
            dtype=float,
        )
        if not np.all(np.isfinite(vals)):
            raise ConfigError("test function evaluates to non-finite samples")
        envelope = np.abs(vals).max(axis=1) * (1.0 + probe_r) ** self.decay
        inner = envelope[probe_r <= 50.0].max()
        outer = envelope[probe_r > 50.0].max()
        if outer > 10.0 * inner + 1e-12:
            raise ConfigError(
                "sampled envelope grows: |phi|(1+|y|)^decay rises from "
                f"{inner:.3g} (|y| <= 50) to {outer:.3g}; declared decay "
                f"{self.decay} looks wrong"
            )
        if self.zero_mass:
            m = planar_integral(self.evaluator)
            scale = planar_integral(lambda a, b: np.abs(self.evaluator(a, b)))
            if abs(m) > 1e-6 * max(scale, 1e-300):
                raise ConfigError(
                    f"flagged zero mass but quadrature gives {m:.3e} "
                    f"(L1 size {scale:.3g})"
                )

    def __call__(self, y1, y2):
        return self.evaluator(y1, y2)


# -----------------------------------------------------------------------------
# transport identity
# -----------------------------------------------------------------------------


def to_sphere(phi_fn, grid: SphereGrid | None = None) -> np.ndarray:
    """Transported samples of a planar profile on the (default) sphere grid."""
    grid = grid or default_sphere_grid()
    return grid.to_sphere(phi_fn)


def decompose(samples, l_max: int = 16, grid: SphereGrid | None = None) -> SphereCoeffs:
    """Harmonic coefficients of sphere samples on the (default) grid."""
    grid = grid or default_sphere_grid()
    return grid.decompose(samples, l_max)


def reconstruct(coeffs: SphereCoeffs, grid: SphereGrid | None = None) -> np.ndarray:
    """Grid samples of a coefficient table on the (default) grid."""
    grid = grid or default_sphere_grid()
    return grid.reconstruct(coeffs)


def integral_identity_check(phi_fn, grid: SphereGrid | None = None,
                            n_radial: int = 360, n_angle: int = 64):
    """Both routes of the transport identity, returned as a pair.

    Sphere side: quadrature of the transported samples.  Planar side: half
    the U0-weighted planar integral on an independent polar rule.
    """
    grid = grid or default_sphere_grid()
    sphere_side = grid.integrate(grid.to_sphere(phi_fn))
    f = _evaluator(phi_fn)
    planar_side = 0.5 * _plane(n_radial, n_angle).integrate(
        lambda a, b: f(a, b) * U0(np.hypot(a, b))
    )
    return sphere_side, planar_side


# -----------------------------------------------------------------------------
# Newtonian inverse and the paired quadratic form
# -----------------------------------------------------------------------------


def _cumulative(y, x):
    if np.iscomplexobj(y):
        return _cumulative(y.real, x) + 1j * _cumulative(y.imag, x)
    return cumulative_simpson(y=y, x=x, initial=0.0)


class _AzimuthalModeSum:
    """Vectorized Cartesian evaluator rebuilt from complex mode splines in u = r/(1+r)."""

    def __init__(self, splines, factors, u_cap):
        self._splines = splines
        self._factors = factors
        self._u_cap = u_cap

    def __call__(self, y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        r = np.hypot(y1, y2)
        u = np.clip(r / (1.0 + r), 0.0, self._u_cap)
        ang = np.arctan2(y2, y1)
        out = np.zeros(np.broadcast(y1, y2).shape)
        for k, spline in self._splines.items():
            if k == 0:
                out = out + spline(u).real
            else:
                out = out + self._factors[k] * (spline(u) * np.exp(1j * k * ang)).real
        return out if out.ndim else float(out)


def g_from_phi(phi_fn, n_radial: int = 4097, n_angle: int = 64,
               r_cap: float = 4000.0, mass_tol: float = 1e-7):
    """Potential-side profile of the pairing: g = phi/U0 - psi + c.

    Here ``-Lap psi = phi`` on the plane and the constant c zeroes the
    U0-weighted average of g.  The inverse runs per azimuthal Fourier mode
    on a compactified radial grid: the radial mode integrates the
    cumulative mass twice, each k >= 1 mode uses the exact kernel
    ``(r_<^k r_>^{-k})/(2k)`` as one forward and one backward cumulative
    integral (backward, so the outer branch never cancels).  Beyond
    ``r_cap`` the source is extended by zero; for the radial mode the
    neglected tail shifts psi by a constant that c absorbs exactly.

    Returns ``(g, c)`` with g a vectorized Cartesian evaluator.
    """
    f = _evaluator(phi_fn)
    plane = _plane()
    mass = plane.integrate(f)
    scale = plane.integrate(lambda a, b: np.abs(f(a, b)))
    if abs(mass) > mass_tol * max(scale, 1e-300):
        raise ConfigError(
            f"nonzero mass: integral of phi is {mass:.6e} against L1 size "
            f"{scale:.3g}; the Newtonian inverse needs a zero-mass source"
        )
    if n_radial < 64 or n_angle < 8 or n_angle % 2:
        raise ConfigError("g_from_phi needs n_radial >= 64 and even n_angle >= 8")

    u_cap = r_cap / (1.0 + r_cap)
    u = np.linspace(0.0, u_cap, n_radial)
    r = u / (1.0 - u)
    jac = 1.0 / (1.0 - u) ** 2  # dr/du
    ang = 2.0 * np.pi * np.arange(n_angle) / n_angle
    vals = np.asarray(f(r[:, None] * np.cos(ang), r[:, None] * np.sin(ang)), dtype=float)
    vals = np.broadcast_to(vals, (n_radial, n_angle))
    modes = np.fft.rfft(vals, axis=1) / n_angle
    modes[0, 1:] = 0.0  # r = 0 is a single point; only the mean survives
    mode_scale = float(np.max(np.abs(modes)))
    half = n_angle // 2
    factors = {k: (1.0 if k in (0, half) else 2.0) for k in range(half + 1)}

    psi = np.zeros((n_radial, half + 1), dtype=complex)
    # radial mode: psi'(r) = -M(r)/r with M the cumulative mass, pinned to 0 far out
    M = _cumulative(r * modes[:, 0].real * jac, u)
    over_r = np.zeros_like(r)
    over_r[1:] = M[1:] / r[1:]
    tail = _cumulative(over_r * jac, u)
    psi[:, 0] = tail[-1] - tail

    for k in range(1, half + 1):
        ck = modes[:, k]
        if np.max(np.abs(ck)) <= 1e-13 * max(mode_scale, 1e-300):
            continue  # below rounding; keeps r^(+-k) powers off garbage modes
        inner = _cumulative(r ** (k + 1) * ck * jac, u)
        outer_integrand = np.zeros_like(ck)
        outer_integrand[1:] = r[1:] ** (1 - k) * ck[1:] * jac[1:]
        outer = _cumulative(outer_integrand[::-1], u_cap - u[::-1])[::-1]
        psi[1:, k] = (inner[1:] * r[1:] ** (-k) + outer[1:] * r[1:] ** k) / (2.0 * k)

    u0r = U0(r)
    avg_psi = 2.0 * np.pi * simpson(y=psi[:, 0].real * u0r * r * jac, x=u)
    c = (avg_psi - mass) / (8.0 * np.pi)

    gmodes = modes / u0r[:, None] - psi
    gmodes[:, 0] += c
    gscale = float(np.max(np.abs(gmodes)))
    splines = {}
    for k in range(half + 1):
        col = gmodes[:, k]
        if k and np.max(np.abs(col)) <= 1e-14 * max(gscale, 1e-300):
            continue
        splines[k] = CubicSpline(u, col)
    return _AzimuthalModeSum(splines, factors, u_cap), float(c)


def quadratic_form(phi_fn, n_radial: int = 360, n_angle: int = 64, **g_options) -> float:
    """Planar route of the pairing: the integral of phi times its g profile."""
    g, _ = g_from_phi(phi_fn, **g_options)
    f = _evaluator(phi_fn)
    return _plane(n_radial, n_angle).integrate(lambda a, b: f(a, b) * g(a, b))


def spectral_form(coeffs: SphereCoeffs) -> float:
    """Coefficient route of the pairing: 2 sum_{l>=2} [l(l+1)/(l(l+1)-2)] gtilde^2.

    ``coeffs`` are sphere-orthonormal coefficients as returned by
    ``decompose``.  In terms of the U0-weighted planar projections
    c = integral g (e o Pi) U0 dy -- which are exactly twice the
    orthonormal coefficients -- the same value reads
    (1/2) sum [l(l+1)/(l(l+1)-2)] c^2; that halved bookkeeping is the one
    ``construct_from_coeffs`` tables use.  Degrees 0 and 1 never
    contribute: the zero U0-average removes l = 0 and the
    translation/dilation kernel of the linearization removes l = 1.
    """
    lam = coeffs.eigenvalues()
    keep = lam > 2.0
    ratio = np.zeros_like(lam)
    ratio[keep] = lam[keep] / (lam[keep] - 2.0)
    return float(2.0 * np.sum(ratio * coeffs.values**2))


def construct_from_coeffs(coeffs: SphereCoeffs, name: str = "band-limited") -> PlanarTestFunction:
    """Band-limited profile whose potential-side coefficient table is given.

    The table entries are U0-weighted planar projections
    c_{l,k} = integral g (e_{l,k} o Pi) U0 dy, i.e. twice the
    sphere-orthonormal coefficients, so the attached planar profile is
    g = (1/2) sum c_{l,k} e_{l,k} o Pi and the pairing evaluates to
    (1/2) sum [l(l+1)/(l(l+1)-2)] c^2 -- the unit table at (2,0) gives
    exactly 3/4.  Builds phi = U0 (g + psi) with the per-mode response
    psi~_j = 2 g~_j / (l(l+1) - 2); running ``g_from_phi`` on the result
    recovers g, which turns the spectral identity into a construction
    oracle.  Only degrees l >= 2 may be present (lower degrees are
    resonant).
    """
    lam = coeffs.eigenvalues()
    if np.any(coeffs.values[lam <= 2.0] != 0.0):
        raise ConfigError(
            "band-limited construction needs l >= 2 only; "
            "got nonzero coefficients at l < 2"
        )
    terms = []
    degrees = coeffs.degrees()
    for j, gv in enumerate(coeffs.values):
        if gv == 0.0:
            continue
        l = int(degrees[j])
        k = j - l * l - l
        # g plus its psi response, at half the table value per the
        # planar-projection normalization of the table.
        amp = 0.5 * gv * (1.0 + 2.0 / (lam[j] - 2.0))
        terms.append((l, k, amp))

    def evaluator(y1, y2):
        y1 = np.asarray(y1, dtype=float)
        y2 = np.asarray(y2, dtype=float)
        rho2 = y1 * y1 + y2 * y2
        theta = 2.0 * np.arctan2(1.0, np.sqrt(rho2))
        az = np.arctan2(y2, y1)
        tot = np.zeros(np.broadcast(y1, y2).shape)
        for l, k, amp in terms:
            tot = tot + amp * real_harmonic(l, k, theta, az)
        val = 8.0 * tot / (1.0 + rho2) ** 2
        return val if val.ndim else float(val)

    return PlanarTestFunction(evaluator, decay=4.0, zero_mass=True, name=name)


def derivative_identity_check(family, tau: float, dtau: float = 1e-3,
                              n_radial: int = 360, n_angle: int = 64):
    """Two routes of the pairing derivative along a family of zero-mass profiles.

    Returns ``(integral of dphi/dtau * g(tau), half d/dtau of the quadratic
    form)``, both tau-derivatives by central differences.  ``family`` maps
    tau to a PlanarTestFunction (or a bare evaluator).
    """
    f_plus = _evaluator(family(tau + dtau))
    f_minus = _evaluator(family(tau - dtau))
    g_mid, _ = g_from_phi(family(tau))
    plane = _plane(n_radial, n_angle)
    lhs = plane.integrate(
        lambda a, b: (f_plus(a, b) - f_minus(a, b)) / (2.0 * dtau) * g_mid(a, b)
    )
    q_plus = quadratic_form(family(tau + dtau), n_radial, n_angle)
    q_minus = quadratic_form(family(tau - dtau), n_radial, n_angle)
    rhs = 0.5 * (q_plus - q_minus) / (2.0 * dtau)
    return lhs, rhs


# -----------------------------------------------------------------------------
# weighted Hardy minimization on balls
# -----------------------------------------------------------------------------


def _hardy_system(R: float, n: int):
    """Piecewise-linear discretization of the U0-weighted forms on [0, R].

    Returns (nodes, element stiffness weights, lumped node weights): the
    energy of a profile g is sum elem * (diff g)^2, its weighted square sum
    node * g^2, both from the same midpoint/trapezoid rule.
    """
    grid = RadialGrid.from_first_step(int(n), float(R), max(1e-4, R * 1e-5))
    r = grid.nodes
    h = np.diff(r)
    rm = 0.5 * (r[:-1] + r[1:])
    elem = U0(rm) * rm / h
    node = np.zeros_like(r)
    node[:-1] += 0.5 * U0(r[:-1]) * r[:-1] * h
    node[1:] += 0.5 * U0(r[1:]) * r[1:] * h
    return r, elem, node


def hardy_rayleigh_check(profile, R: float, n: int = 1200):
    """Rayleigh quotient of a given radial profile computed two ways.

    Route one assembles the tridiagonal stiffness and diagonal weight
    matrices and contracts them; route two sums the same elementwise rule
    directly.  Identical quadrature, independent code paths -- any assembly
    indexing slip shows up as disagreement.
    """
    r, elem, node = _hardy_system(R, n)
    g = np.asarray(profile(r), dtype=float)
    m = r.size
    A = np.zeros((m, m))
    idx = np.arange(m - 1)
    A[idx, idx] += elem
    A[idx + 1, idx + 1] += elem
    A[idx, idx + 1] -= elem
    A[idx + 1, idx] -= elem
    assembled = float(g @ (A @ g)) / float(g @ (node * g))
    d = np.diff(g)
    direct = float(np.sum(elem * d * d)) / float(np.sum(node * g * g))
    return assembled, direct


def hardy_quotient(R: float, n: int = 1200, mean_zero: bool = True) -> float:
    """Smallest U0-weighted Rayleigh quotient over radial profiles on [0, R].

    Minimizes  integral |g'|^2 U0 / integral g^2 U0  over the ball, subject
    to a zero U0-weighted mean (set ``mean_zero=False`` to drop the
    constraint and recover the constant kernel at quotient ~ 0).  The
    r = 0 node carries no polar measure and the energy is flat across the
    first element, so the eigenproblem lives on the remaining nodes.
    """
    if R < 10.0:
        raise ConfigError(f"hardy_quotient needs R >= 10, got {R}")
    if n < 64:
        raise ConfigError(f"hardy_quotient needs at least 64 mesh nodes, got {n}")
    _, elem, node = _hardy_system(R, n)
    e = elem[1:]
    w = node[1:]
    m = w.size
    A = np.zeros((m, m))
    idx = np.arange(m - 1)
    A[idx, idx] += e
    A[idx + 1, idx + 1] += e
    A[idx, idx + 1] -= e
    A[idx + 1, idx] -= e
    s = 1.0 / np.sqrt(w)
    C = A * s[:, None] * s[None, :]  # unit-weight similarity of the pencil
    if mean_zero:
        q = np.sqrt(w)
        q /= np.linalg.norm(q)
        h = q.copy()
        h[0] += np.copysign(1.0, q[0])
        h /= np.linalg.norm(h)
        # remaining Householder columns span the constraint plane
        P = np.eye(m)[:, 1:] - 2.0 * np.outer(h, h[1:])
        C = P.T @ C @ P
    try:
        mu = eigh(C, eigvals_only=True, subset_by_index=(0, 0))[0]
    except LinAlgError as err:  # pragma: no cover - LAPACK failure is exotic
        raise NumericalError(f"Hardy eigen-solve failed: {err}") from None
    return float(mu)
