import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.special import exp1

from kslab import bubble
from kslab.errors import ConfigError
from kslab.sphere import (
    PlanarTestFunction,
    SphereCoeffs,
    SphereGrid,
    construct_from_coeffs,
    decompose,
    default_sphere_grid,
    derivative_identity_check,
    g_from_phi,
    hardy_quotient,
    hardy_rayleigh_check,
    harmonic_index,
    integral_identity_check,
    planar_integral,
    quadratic_form,
    real_harmonic,
    reconstruct,
    spectral_form,
    to_sphere,
)

U0_SELF = 32.0 * np.pi / 3.0  # half the planar integral of U0^2


def gaussian_difference(y1, y2):
    """Radial zero-mass source with a closed-form Newtonian potential."""
    r2 = np.asarray(y1) ** 2 + np.asarray(y2) ** 2
    return np.exp(-r2 / 4.0) - 4.0 * np.exp(-r2)


def gaussian_difference_psi(r):
    return exp1(r * r) - exp1(r * r / 4.0)


def composite_probe(y1, y2):
    """Zero mass, zero first moments, genuinely non-radial."""
    r2 = y1 * y1 + y2 * y2
    rad = np.exp(-r2 / 4.0) - 4.0 * np.exp(-r2)
    quad_mode = (y1 * y1 - y2 * y2) * np.exp(-r2)
    dipole_free = y1 * (np.exp(-r2) - 0.25 * np.exp(-r2 / 2.0))
    return rad + 0.8 * quad_mode + 0.7 * dipole_free


@pytest.fixture(scope="module")
def grid():
    return default_sphere_grid(64)


@pytest.fixture(scope="module")
def fine_grid():
    return SphereGrid(128)


def grid_angles(g):
    th = np.broadcast_to(g.theta[:, None], (g.n_theta, g.n_phi))
    az = np.broadcast_to(g.azimuth[None, :], (g.n_theta, g.n_phi))
    return th, az


class TestGridAndBasis:
    def test_quadrature_exactness(self, grid):
        ones = np.ones((grid.n_theta, grid.n_phi))
        assert grid.integrate(ones) == pytest.approx(4.0 * np.pi, rel=1e-14)
        x = np.broadcast_to(grid.cos_theta[:, None], ones.shape)
        assert grid.integrate(x * x) == pytest.approx(4.0 * np.pi / 3.0, rel=1e-13)
        assert grid.integrate(x**3) == pytest.approx(0.0, abs=1e-14)

    def test_order_guard(self):
        with pytest.raises(ConfigError, match="order must be >= 10"):
            SphereGrid(6)

    def test_sample_shape_guard(self, grid):
        with pytest.raises(ConfigError, match="do not match"):
            grid.integrate(np.ones((3, 3)))

    @pytest.mark.parametrize("order", [34, 64])
    def test_gram_identity(self, order):
        g = SphereGrid(order)
        B = g.basis(16)
        w = g.theta_weights[:, None] * np.ones(g.n_phi) * g.azimuth_weight
        gram = np.einsum("itp,jtp,tp->ij", B, B, w)
        assert np.max(np.abs(gram - np.eye(B.shape[0]))) <= 1e-10

    def test_harmonic_index_order(self):
        # l-major, k ascending
        assert [harmonic_index(l, k) for l in range(3) for k in range(-l, l + 1)] == list(range(9))

    def test_real_harmonic_rejects_bad_order(self):
        with pytest.raises(ConfigError, match="degree/order"):
            real_harmonic(2, 3, 0.5, 0.0)

    def test_coeff_table_validation(self):
        with pytest.raises(ConfigError, match="l_max >= 4"):
            SphereCoeffs.zeros(2)
        with pytest.raises(ConfigError, match="shape"):
            SphereCoeffs(4, np.zeros(7))
        with pytest.raises(ConfigError, match="non-finite"):
            SphereCoeffs(4, np.full(25, np.nan))
        tab = SphereCoeffs.unit(2, -1, l_max=4)
        assert tab[(2, -1)] == 1.0 and tab[(2, 1)] == 0.0
        assert tab.eigenvalues()[harmonic_index(2, -1)] == 6.0
        rows = tab.table()
        assert rows[harmonic_index(2, -1)] == (2, -1, 1.0)
        with pytest.raises(KeyError):
            tab[(5, 0)]


class TestDecompose:
    def test_single_mode_gives_unit_coefficient(self, grid):
        th, az = grid_angles(grid)
        co = grid.decompose(real_harmonic(2, 0, th, az), l_max=8)
        assert co[(2, 0)] == pytest.approx(1.0, abs=1e-12)
        rest = co.values.copy()
        rest[harmonic_index(2, 0)] = 0.0
        assert np.max(np.abs(rest)) <= 1e-12

    def test_third_coordinate_is_pure_degree_one(self, grid):
        x3 = np.broadcast_to(grid.cos_theta[:, None], (grid.n_theta, grid.n_phi))
        co = grid.decompose(np.array(x3), l_max=8)
        assert co[(1, 0)] == pytest.approx(np.sqrt(4.0 * np.pi / 3.0), rel=1e-13)
        others = co.values.copy()
        others[harmonic_index(1, 0)] = 0.0
        assert np.max(np.abs(others)) <= 1e-12
        assert co.eigenvalues()[harmonic_index(1, 0)] == 2.0

    def test_band_limited_roundtrip(self, grid):
        rng = np.random.default_rng(11)
        tab = SphereCoeffs(10, rng.normal(size=121))
        samples = grid.reconstruct(tab)
        back = grid.decompose(samples, l_max=10)
        assert np.max(np.abs(back.values - tab.values)) <= 1e-12
        assert np.max(np.abs(grid.reconstruct(back) - samples)) <= 1e-10

    def test_aliasing_guard(self):
        coarse = SphereGrid(20)
        samples = np.zeros((coarse.n_theta, coarse.n_phi))
        with pytest.raises(ConfigError, match="aliasing"):
            coarse.decompose(samples, l_max=16)

    def test_module_level_wrappers_share_default_grid(self, grid):
        tab = SphereCoeffs.unit(3, 2, l_max=6)
        assert np.max(np.abs(reconstruct(tab) - grid.reconstruct(tab))) == 0.0

    @settings(max_examples=15, deadline=None)
    @given(st.lists(st.floats(-2.0, 2.0), min_size=25, max_size=25))
    def test_roundtrip_property(self, vals):
        tab = SphereCoeffs(4, np.asarray(vals))
        g = default_sphere_grid(64)
        back = g.decompose(g.reconstruct(tab), l_max=4)
        assert np.max(np.abs(back.values - tab.values)) <= 1e-9


class TestLaplaceBeltrami:
    @pytest.mark.parametrize("l,k", [(2, 1), (5, 3), (7, -4)])
    def test_eigenvalue_relation(self, grid, l, k):
        th, az = grid_angles(grid)
        f = real_harmonic(l, k, th, az)
        lb = grid.laplace_beltrami(f)
        lam = l * (l + 1)
        assert np.max(np.abs(lb + lam * f)) <= 2e-3 * lam * np.max(np.abs(f))

    def test_error_shrinks_under_refinement(self, grid, fine_grid):
        errs = {}
        for g in (grid, fine_grid):
            th, az = grid_angles(g)
            f = real_harmonic(7, -4, th, az)
            errs[g.order] = np.max(np.abs(g.laplace_beltrami(f) + 56.0 * f))
        assert errs[128] <= 1e-5 * 56.0
        assert errs[128] <= 0.01 * errs[64]


class TestTransportIdentity:
    def test_core_density_both_routes(self):
        s, p = integral_identity_check(lambda a, b: bubble.U0(np.hypot(a, b)))
        assert s == pytest.approx(U0_SELF, rel=1e-8)
        assert p == pytest.approx(U0_SELF, rel=1e-8)
        assert abs(s - p) <= 1e-8 * U0_SELF

    def test_zero_function(self):
        s, p = integral_identity_check(lambda a, b: np.zeros(np.broadcast(a, b).shape))
        assert s == 0.0 and p == 0.0

    def test_negated_core_by_linearity(self):
        s, p = integral_identity_check(lambda a, b: -bubble.U0(np.hypot(a, b)))
        assert s == pytest.approx(-U0_SELF, rel=1e-8)
        assert abs(s - p) <= 1e-8 * U0_SELF


class TestPlanarTestFunction:
    def test_decay_guard(self):
        with pytest.raises(ConfigError, match="decay exponent"):
            PlanarTestFunction(gaussian_difference, decay=2.0)

    def test_envelope_guard(self):
        with pytest.raises(ConfigError, match="envelope grows"):
            PlanarTestFunction(lambda a, b: 1.0 / (1.0 + np.hypot(a, b)), decay=3.0)

    def test_wrong_zero_mass_flag(self):
        with pytest.raises(ConfigError, match="flagged zero mass"):
            PlanarTestFunction(
                lambda a, b: np.exp(-(a * a + b * b)), decay=5.0, zero_mass=True
            )

    def test_call_delegates(self):
        f = PlanarTestFunction(gaussian_difference, decay=6.0, zero_mass=True)
        assert f(0.0, 0.0) == pytest.approx(-3.0)

    def test_planar_integral_matches_quad(self):
        val = planar_integral(lambda a, b: bubble.U0(np.hypot(a, b)))
        assert val == pytest.approx(8.0 * np.pi, rel=1e-12)


class TestGFromPhi:
    def test_rejects_nonzero_mass(self):
        with pytest.raises(ConfigError, match="nonzero mass"):
            g_from_phi(lambda a, b: np.exp(-(a * a + b * b)))

    def test_rejects_degenerate_sampling(self):
        with pytest.raises(ConfigError, match="n_radial"):
            g_from_phi(gaussian_difference, n_radial=32)

    def test_radial_oracle(self):
        g, c = g_from_phi(gaussian_difference)
        # normalizing constant from the closed-form potential
        c_ref = (
            quad(lambda r: gaussian_difference_psi(r) * bubble.U0(r) * r, 0.0, 60.0)[0]
            * 2.0 * np.pi / (8.0 * np.pi)
        )
        assert c == pytest.approx(c_ref, abs=1e-10)
        r = np.array([0.3, 1.0, 2.7, 6.0, 15.0, 40.0])
        zero = np.zeros_like(r)
        g_ref = gaussian_difference(r, zero) / bubble.U0(r) - gaussian_difference_psi(r) + c
        assert np.max(np.abs(g(r, zero) - g_ref)) <= 1e-10

    def test_potential_decay_envelope(self):
        g, c = g_from_phi(gaussian_difference)
        r = np.geomspace(0.1, 50.0, 30)
        zero = np.zeros_like(r)
        psi = gaussian_difference(r, zero) / bubble.U0(r) + c - g(r, zero)
        assert np.max(np.abs(psi - gaussian_difference_psi(r))) <= 1e-9
        # decays at least like an inverse-power envelope
        assert np.max(np.abs(psi) * (1.0 + r) ** 0.5) <= np.abs(psi[0]) * 2.0 + 1.0

    def test_dilation_kernel_maps_to_zero(self):
        # phi = Z0 has potential z0 + 2, so g collapses to a constant that the
        # zero-average normalization removes entirely; c tends to 2 as the
        # radial cap grows.
        g, c = g_from_phi(lambda a, b: bubble.kernel_Z(0, a, b))
        r = np.geomspace(1e-2, 3e3, 40)
        assert np.max(np.abs(g(r, np.zeros_like(r)))) <= 1e-9
        assert c == pytest.approx(2.0, abs=1e-5)

    def test_low_mode_orthogonality_planar(self):
        g, _ = g_from_phi(composite_probe)
        for j in range(3):
            val = planar_integral(
                lambda a, b, j=j: g(a, b) * bubble.U0(np.hypot(a, b)) * bubble.kernel_z(j, a, b)
            )
            assert abs(val) <= 1e-6

    def test_low_degree_coefficients_vanish(self, fine_grid):
        g, _ = g_from_phi(composite_probe)
        co = fine_grid.decompose(fine_grid.to_sphere(lambda a, b: g(a, b)), l_max=8)
        assert np.max(np.abs(co.values[:4])) <= 1e-8

    def test_growth_envelope_of_g(self):
        g, _ = g_from_phi(gaussian_difference)
        r = np.geomspace(1.0, 100.0, 25)
        vals = np.abs(g(r, np.zeros_like(r)))
        assert np.all(vals <= 5.0 * (1.0 + r) ** 1.5)


def band_limited_tables():
    rng = np.random.default_rng(23)
    tables = [SphereCoeffs.unit(2, 0, l_max=8)]  # the 3/4 single-mode case
    specs = [
        [(2, 0, 1.0), (2, 1, -0.5)],
        [(3, -2, 0.8), (4, 4, 0.3), (2, -1, -0.6)],
        [(5, 0, 1.2), (6, 3, -0.4)],
    ]
    for spec in specs:
        vals = np.zeros(81)
        for l, k, v in spec:
            vals[harmonic_index(l, k)] = v
        tables.append(SphereCoeffs(8, vals))
    vals = np.zeros(81)
    for l in range(2, 7):
        for k in range(-l, l + 1):
            vals[harmonic_index(l, k)] = rng.normal(scale=0.3)
    tables.append(SphereCoeffs(8, vals))
    return tables


class TestQuadraticForm:
    def test_single_mode_is_three_quarters(self):
        phi = construct_from_coeffs(SphereCoeffs.unit(2, 0, l_max=8))
        q_planar = quadratic_form(phi)
        g, _ = g_from_phi(phi)
        co = decompose(to_sphere(lambda a, b: g(a, b)))
        q_spec = spectral_form(co)
        assert q_planar == pytest.approx(0.75, abs=1e-9)
        assert q_spec == pytest.approx(0.75, abs=1e-9)
        assert abs(q_planar - q_spec) <= 1e-9
        # tables carry twice the orthonormal coefficient
        assert co[(2, 0)] == pytest.approx(0.5, abs=1e-10)

    def test_zero_profile(self):
        zero = lambda a, b: np.zeros(np.broadcast(a, b).shape)
        assert quadratic_form(zero) == 0.0
        assert spectral_form(SphereCoeffs.zeros(8)) == 0.0

    @pytest.mark.parametrize("idx", range(5))
    def test_routes_agree_on_band_limited_tests(self, idx):
        tab = band_limited_tables()[idx]
        lam = tab.eigenvalues()
        keep = lam > 2.0
        closed = 0.5 * np.sum(lam[keep] / (lam[keep] - 2.0) * tab.values[keep] ** 2)
        phi = construct_from_coeffs(tab)
        q_planar = quadratic_form(phi)
        g, _ = g_from_phi(phi)
        q_spec = spectral_form(decompose(to_sphere(lambda a, b: g(a, b)), l_max=10))
        scale = max(abs(closed), 1.0)
        assert abs(q_planar - q_spec) <= 1e-6 * scale
        assert q_planar == pytest.approx(closed, rel=1e-8)

    def test_sandwich_bounds(self):
        for tab in band_limited_tables()[1:3]:
            degrees = tab.degrees()[tab.values != 0.0]
            lams = degrees * (degrees + 1.0)
            lo, hi = np.min(lams / (lams - 2.0)), np.max(lams / (lams - 2.0))
            phi = construct_from_coeffs(tab)
            g, _ = g_from_phi(phi)
            energy = planar_integral(lambda a, b: bubble.U0(np.hypot(a, b)) * g(a, b) ** 2)
            q = quadratic_form(phi)
            assert lo * energy * (1.0 - 1e-8) <= q <= hi * energy * (1.0 + 1e-8)

    def test_construction_rejects_low_degrees(self):
        tab = SphereCoeffs.unit(1, 0, l_max=4)
        with pytest.raises(ConfigError, match="l >= 2"):
            construct_from_coeffs(tab)

    def test_spectral_form_ignores_low_degrees(self):
        vals = np.zeros(25)
        vals[harmonic_index(0, 0)] = 3.0
        vals[harmonic_index(1, 1)] = -2.0
        assert spectral_form(SphereCoeffs(4, vals)) == 0.0

    def test_construction_recovers_declared_profile(self):
        tab = SphereCoeffs.unit(3, 1, l_max=8)
        phi = construct_from_coeffs(tab)
        g, _ = g_from_phi(phi)
        r = np.array([0.5, 1.5, 4.0])
        th = 2.0 * np.arctan2(1.0, r)
        expected = 0.5 * real_harmonic(3, 1, th, np.zeros_like(r))
        assert np.max(np.abs(g(r, np.zeros_like(r)) - expected)) <= 1e-9


class TestDerivativeIdentity:
    def test_scaling_family_matches_symbolic_oracle(self):
        base = construct_from_coeffs(SphereCoeffs.unit(2, 0, l_max=8))
        q_base = quadratic_form(base)
        s = lambda tau: 1.0 + 0.3 * np.sin(tau)
        ds = lambda tau: 0.3 * np.cos(tau)
        family = lambda tau: (lambda a, b, f=s(tau): f * base(a, b))
        tau = 0.7
        lhs, rhs = derivative_identity_check(family, tau)
        oracle = s(tau) * ds(tau) * q_base
        assert lhs == pytest.approx(oracle, rel=1e-5)
        assert rhs == pytest.approx(oracle, rel=1e-5)

    def test_static_family(self):
        base = construct_from_coeffs(SphereCoeffs.unit(2, 1, l_max=8))
        lhs, rhs = derivative_identity_check(lambda tau: base, 0.3)
        assert lhs == pytest.approx(0.0, abs=1e-12)
        assert rhs == pytest.approx(0.0, abs=1e-12)

    def test_rotating_family(self):
        omega = 0.8

        def family(tau):
            vals = np.zeros(81)
            vals[harmonic_index(2, 0)] = np.cos(omega * tau)
            vals[harmonic_index(2, 1)] = np.sin(omega * tau)
            return construct_from_coeffs(SphereCoeffs(8, vals))

        lhs, rhs = derivative_identity_check(family, 0.5)
        # the rotation preserves the form, so both routes must agree (at zero)
        assert abs(lhs - rhs) <= 1e-6
        assert abs(lhs) <= 1e-6 and abs(rhs) <= 1e-6


class TestHardy:
    def test_parameter_guards(self):
        with pytest.raises(ConfigError, match="R >= 10"):
            hardy_quotient(5.0)
        with pytest.raises(ConfigError, match="mesh nodes"):
            hardy_quotient(10.0, n=10)

    def test_unconstrained_minimum_is_zero(self):
        assert abs(hardy_quotient(100.0, mean_zero=False)) <= 1e-8

    def test_rayleigh_two_routes(self):
        assembled, direct = hardy_rayleigh_check(lambda r: r * r, 50.0)
        assert assembled == pytest.approx(direct, rel=1e-8)
        assert assembled > 0.0

    def test_scaled_quotient_uniform_band(self):
        scaled = {R: hardy_quotient(R) * R * R for R in (10.0, 100.0, 1000.0)}
        vals = np.array(list(scaled.values()))
        assert np.all(vals > 0.0)
        assert np.max(vals) / np.min(vals) <= 1.2
        # any upward drift across increasing R stays within 20%
        assert vals[1] <= 1.2 * vals[0] and vals[2] <= 1.2 * vals[1]

    def test_boundary_ramp_beats_smooth_profile(self):
        # the minimizer localizes near the boundary: a ramp supported on the
        # outer half should get within a modest factor of the true minimum
        R = 100.0
        q = hardy_quotient(R)
        _, direct = hardy_rayleigh_check(
            lambda r: np.clip(r / R - 0.5, 0.0, None), R
        )
        # direct uses a mean-zero-free quotient; shifting by a constant only
        # reduces the denominator, so it still upper-bounds the minimum
        assert q <= direct
