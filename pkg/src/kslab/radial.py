"""Radial grids, quadrature and the planar aggregation-diffusion operator.

Everything in this package lives on radial grids for functions of
r = |x| in two space dimensions.  This module provides

* graded grids on [0, r_max] (uniform or geometric spacing),
* mass and moment quadrature with analytic power-law tail corrections,
* the cumulative mass m(r) = 2*pi*int_0^r u(s) s ds and the induced
  attractive potential gradient v_r = -m/(2*pi*r),
* the spatial operator  E(u) = Lap(u) - div(u grad (-Lap)^{-1} u), which in
  radial variables reads  (1/r)(r u_r)_r + (1/(2 pi r)) d_r(u m),
* the residual S(u) = -u_t + E(u) for manufactured-solution checks.

Differentiation uses centered 4th-order stencils on the (possibly
nonuniform) grid, switching to folded stencils near r = 0 where radial
fields are even.
"""

from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import cumulative_simpson, simpson


def fornberg_weights(nodes, x0, order):
    """Finite-difference weights for d^order/dx^order at x0 on given nodes.

    Classic Fornberg recursion; exact for polynomials of degree
    len(nodes)-1, valid for arbitrary (distinct) node locations.
    """
    x = np.asarray(nodes, dtype=float)
    n = len(x)
    m = order
    if m >= n:
        raise ValueError("need more nodes than the derivative order")
    W = np.zeros((m + 1, n))
    W[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i] - x0
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    W[k, i] = c1 * (k * W[k - 1, i - 1] - c5 * W[k, i - 1]) / c2
                W[0, i] = -c1 * c5 * W[0, i - 1] / c2
            for k in range(mn, 0, -1):
                W[k, j] = (c4 * W[k, j] - k * W[k - 1, j]) / c3
            W[0, j] = c4 * W[0, j] / c3
        c1 = c2
    return W[m]


def geometric_ratio(n, r_max, dr0):
    """Solve for the geometric ratio q with first spacing dr0 on [0, r_max].

    The grid has n nodes, n-1 spacings dr0 * q^i, so
    (q - 1)/(q^(n-1) - 1) = dr0/r_max.
    """
    from scipy.optimize import brentq

    target = dr0 / r_max
    if not 0 < target < 1.0 / (n - 1):
        raise ValueError("first step dr0 must be positive and below r_max/(n-1)")

    def f(q):
        e = (n - 1) * np.log(q)
        if e > 300.0:  # deep in the f > 0 regime; avoid overflow
            return 1.0
        return np.expm1(e) * target - (q - 1.0)

    q_hi = 1.2
    if f(q_hi) < 0:
        raise ValueError("requested dr0 needs a grading ratio above 1.2")
    return brentq(f, 1.0 + 1e-14, q_hi, xtol=1e-15, rtol=1e-15)


@dataclass
class RadialGrid:
    """Strictly increasing nodes on [0, r_max] with nodes[0] = 0."""

    nodes: np.ndarray
    kind: str = "uniform"
    ratio: float | None = None
    _deriv_cache: dict = dc_field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=float)
        if self.nodes.ndim != 1 or len(self.nodes) < 16:
            raise ValueError("grid needs at least 16 nodes")
        if self.nodes[0] != 0.0:
            raise ValueError("grid must start at r = 0")
        if np.any(np.diff(self.nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        if self.kind not in ("uniform", "geometric"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.kind == "geometric":
            if self.ratio is None or not (1.0 < self.ratio <= 1.2):
                raise ValueError("geometric grading ratio must lie in (1, 1.2]")

    @classmethod
    def uniform(cls, n, r_max):
        return cls(np.linspace(0.0, float(r_max), n), kind="uniform")

    @classmethod
    def geometric(cls, n, r_max, ratio=1.02):
        """Spacings grow by `ratio`; first spacing follows from n and r_max."""
        q = float(ratio)
        if not (1.0 < q <= 1.2):
            raise ValueError("geometric grading ratio must lie in (1, 1.2]")
        i = np.arange(n - 1)
        spac = q ** i
        nodes = np.concatenate([[0.0], np.cumsum(spac)])
        nodes *= float(r_max) / nodes[-1]
        return cls(nodes, kind="geometric", ratio=q)

    @classmethod
    def from_first_step(cls, n, r_max, dr0):
        """Geometric grid with a prescribed first spacing."""
        return cls.geometric(n, r_max, geometric_ratio(n, float(r_max), float(dr0)))

    @property
    def n(self):
        return len(self.nodes)

    @property
    def r_max(self):
        return float(self.nodes[-1])

    def derivative_rows(self, order, acc=4, even=True):
        """Per-node stencil (indices, weights) for d^order/dr^order.

        For `even` fields the stencil is folded across r = 0 (values at -r
        equal values at +r), which keeps full accuracy at the first nodes.
        Cached per (order, acc, even).
        """
        key = (order, acc, even)
        if key in self._deriv_cache:
            return self._deriv_cache[key]
        r = self.nodes
        n = len(r)
        width = order + acc  # nodes per stencil
        if width > n:
            raise ValueError("stencil underflow: grid too small for requested accuracy")
        half = width // 2
        idx = np.empty((n, width), dtype=np.intp)
        wts = np.empty((n, width))
        for i in range(n):
            lo = i - half
            if even:
                # window may reach below zero; mirror indices and fold weights
                js = np.arange(lo, lo + width)
                if js[-1] > n - 1:
                    js -= js[-1] - (n - 1)
                phys = np.abs(js)  # mirrored node index
                signs = np.sign(js + 0.0)
                x = signs * r[phys]
                w = fornberg_weights(x, r[i], order)
                idx[i] = phys
                wts[i] = w
            else:
                lo = min(max(lo, 0), n - width)
                js = np.arange(lo, lo + width)
                idx[i] = js
                wts[i] = fornberg_weights(r[js], r[i], order)
        self._deriv_cache[key] = (idx, wts)
        return idx, wts


def radial_derivative(grid, values, order=1, acc=4, even=True):
    """Apply a 4th-order (default) derivative on the grid."""
    idx, wts = grid.derivative_rows(order, acc, even)
    v = np.asarray(values, dtype=float)
    return np.einsum("ij,ij->i", wts, v[idx])


@dataclass
class RadialField:
    """Samples of a radial function, with an optional power-law tail.

    tail_exponent p means u(r) ~ u(r_max) (r/r_max)^-p beyond the grid; it
    feeds the analytic tail corrections of the mass quadrature.  None means
    the field is negligible beyond r_max (compact support or Gaussian).
    """

    grid: RadialGrid
    values: np.ndarray
    tail_exponent: float | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.nodes.shape:
            raise ValueError("values must be sampled on the grid nodes")
        if self.tail_exponent is not None and not self.tail_exponent > 2.0:
            raise ValueError("divergent mass: tail exponent must exceed 2")

    @classmethod
    def from_callable(cls, grid, fn, tail_exponent=None):
        return cls(grid, fn(grid.nodes), tail_exponent)


@dataclass
class CumulativeMass:
    """m(r) = 2 pi int_0^r u s ds on the grid; m[0] = 0, nondecreasing."""

    grid: RadialGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values[0] != 0.0:
            raise ValueError("cumulative mass must vanish at r = 0")
        scale = max(abs(self.values[-1]), 1.0)
        if np.any(np.diff(self.values) < -1e-10 * scale):
            raise ValueError("negative density: cumulative mass must be nondecreasing")

    @property
    def total(self):
        return float(self.values[-1])


def quad_radial(grid, integrand_values):
    """2 pi int f(r) r dr over the grid (no tail), composite Simpson."""
    r = grid.nodes
    return 2.0 * np.pi * float(simpson(np.asarray(integrand_values) * r, x=r))


def quad_mass(field):
    """Total mass 2 pi int_0^inf u r dr, with analytic tail correction.

    For a declared tail u ~ C r^-p the truncated part is
    2 pi C r_max^(2-p)/(p-2), i.e. 2 pi u(r_max) r_max^2/(p-2).
    """
    base = quad_radial(field.grid, field.values)
    if field.tail_exponent is not None:
        p = field.tail_exponent
        if p <= 2.0:
            raise ValueError("divergent mass: tail exponent must exceed 2")
        base += 2.0 * np.pi * field.values[-1] * field.grid.r_max ** 2 / (p - 2.0)
    return base


def cumulative_mass(field):
    """CumulativeMass of the field on its own grid."""
    r = field.grid.nodes
    m = 2.0 * np.pi * cumulative_simpson(field.values * r, x=r, initial=0.0)
    m[0] = 0.0
    return CumulativeMass(field.grid, m)


def potential_gradient(cmass):
    """v_r(r) = -m(r)/(2 pi r); the r = 0 value is 0 (m ~ pi u(0) r^2)."""
    r = cmass.grid.nodes
    out = np.zeros_like(cmass.values)
    out[1:] = -cmass.values[1:] / (2.0 * np.pi * r[1:])
    return out


def second_moment(field, R=None):
    """2 pi int_0^R u r^3 dr.  R defaults to r_max; beyond it is an error."""
    r = field.grid.nodes
    if R is None:
        R = field.grid.r_max
    if R > field.grid.r_max * (1.0 + 1e-12):
        raise ValueError("beyond grid: second moment radius exceeds r_max")
    R = min(R, field.grid.r_max)
    f = field.values * r ** 3
    k = int(np.searchsorted(r, R, side="right")) - 1
    if k < 1:
        return 0.0
    out = float(simpson(f[: k + 1], x=r[: k + 1]))
    if r[k] < R:  # sliver up to R, linear in the integrand
        fR = np.interp(R, r, f)
        out += 0.5 * (f[k] + fR) * (R - r[k])
    return 2.0 * np.pi * out


def apply_E(field):
    """The spatial operator (1/r)(r u_r)_r + (1/(2 pi r)) d_r(u m).

    At r = 0 the even limit is 2 u''(0) + u(0)^2.
    """
    grid = field.grid
    if grid.n < 5:
        raise ValueError("stencil underflow: need at least 5 nodes")
    r = grid.nodes
    u = field.values
    m = cumulative_mass(field).values

    du = radial_derivative(grid, u, order=1)
    d2u = radial_derivative(grid, u, order=2)
    lap = np.empty_like(u)
    lap[1:] = d2u[1:] + du[1:] / r[1:]
    lap[0] = 2.0 * d2u[0]

    w = u * m  # even: u even, m ~ pi u0 r^2 + O(r^4)
    dw = radial_derivative(grid, w, order=1)
    drift = np.empty_like(u)
    drift[1:] = dw[1:] / (2.0 * np.pi * r[1:])
    drift[0] = u[0] ** 2
    return lap + drift


def residual_S(field, u_t):
    """S(u) = -u_t + E(u) for a given time-derivative sample."""
    return -np.asarray(u_t, dtype=float) + apply_E(field)
