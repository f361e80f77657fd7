"""Killed-BM kernels and exit laws against independent oracles.

Oracle inventory:
  - finite-difference tridiagonal eigensolver for the ground eigenvalue,
  - nodal-exact tridiagonal solve for the Green function,
  - quadrature identities (mass conservation, mean exit time),
  - bridge-corrected random-walk simulation for the joint exit law,
  - the two exact series (image vs spectral) pinned against each other at the
    crossover point, where both are evaluated at the same t.
"""

import numpy as np
import pytest
from scipy.linalg import eigh_tridiagonal, solve_banded
from scipy.stats import ks_2samp

from bmjb.errors import DomainError
from bmjb.model import Interval, JumpMeasure, RandomStream
from bmjb import dirichlet as dch

I01 = Interval(0.0, 1.0)
PI2_HALF = np.pi**2 / 2.0


class TestSpectralBasis:
    def test_eigenvalue_scaling(self):
        base = dch.SpectralBasis(I01, 8)
        for a, b in [(-1.0, 1.0), (0.25, 0.75), (-3.0, 4.5)]:
            L = b - a
            other = dch.SpectralBasis(Interval(a, b), 8)
            assert np.allclose(other.eigenvalues, base.eigenvalues / L**2, rtol=1e-14)

    def test_orthonormality(self):
        iv = Interval(-0.5, 2.0)
        basis = dch.SpectralBasis(iv, 6)
        y = np.linspace(iv.a, iv.b, 20001)
        phi = basis.phi(y)  # (n, K)
        gram = np.trapezoid(phi[:, :, None] * phi[:, None, :], y, axis=0)
        assert np.max(np.abs(gram - np.eye(6))) < 1e-8

    def test_coefficients_match_quadrature(self):
        iv = Interval(0.0, 1.0)
        basis = dch.SpectralBasis(iv, 7)
        y = np.linspace(0, 1, 40001)
        quad = np.trapezoid(basis.phi(y), y, axis=0)
        assert np.max(np.abs(quad - basis.coefficients)) < 1e-8
        assert np.all(basis.coefficients[1::2] == 0)

    def test_ground_mode_positive(self):
        basis = dch.SpectralBasis(I01, 3)
        x = np.linspace(0.01, 0.99, 99)
        assert np.all(basis.phi(x)[:, 0] > 0)


class TestDualSeries:
    """The image and spectral series are both exact; they must agree anywhere
    both are cheaply evaluable, most stringently at the crossover time."""

    @pytest.mark.parametrize("iv", [I01, Interval(-1.5, 2.0)])
    def test_survival_and_flux_agree_at_crossover(self, iv):
        L = iv.length
        tc = dch.crossover_time(iv)
        xi = np.linspace(0.02 * L, 0.98 * L, 41)
        t = np.full_like(xi, tc)
        for f_img, f_spec in [
            (dch._survival_img, dch._survival_spec),
            (dch._flux_img, dch._flux_spec),
            (dch._flux_cum_img, dch._flux_cum_spec),
        ]:
            assert np.max(np.abs(f_img(L, xi, t, 1e-12) - f_spec(L, xi, t, 1e-12))) < 1e-13

    def test_kernel_agrees_on_time_range(self):
        # both series are exact for every t; compare on [0.4, 2.5] * t_cross
        L = 1.0
        tc = dch.crossover_time(I01)
        xi = np.linspace(0.05, 0.95, 19)
        eta = np.linspace(0.07, 0.93, 19)
        for fac in (0.4, 1.0, 2.5):
            t = np.full_like(xi, fac * tc)
            a = dch._kernel_img(L, xi, eta, t, 1e-12)
            b = dch._kernel_spec(L, xi, eta, t, 1e-12)
            assert np.max(np.abs(a - b)) < 1e-12

    def test_position_cdf_agrees_at_crossover(self):
        L = 1.0
        tc = dch.crossover_time(I01)
        xi = np.linspace(0.05, 0.95, 19)
        eta = np.linspace(0.02, 0.98, 19)
        lo = dch._position_cdf_flat(L, xi, eta, np.full_like(xi, tc * (1 - 1e-12)), 1e-12)
        hi = dch._position_cdf_flat(L, xi, eta, np.full_like(xi, tc * (1 + 1e-12)), 1e-12)
        assert np.max(np.abs(lo - hi)) < 1e-11


class TestHeatKernel:
    def test_symmetry(self):
        x = np.linspace(0.1, 0.9, 9)
        for t in (0.03, 0.2, 1.0):
            P = dch.heat_kernel(I01, t, x[:, None], x[None, :])
            assert np.max(np.abs(P - P.T)) < 1e-13

    def test_chapman_kolmogorov(self):
        z = np.linspace(0, 1, 4097)
        for (t, s) in [(0.05, 0.07), (0.3, 0.4)]:
            lhs = dch.heat_kernel(I01, t + s, 0.3, 0.6)
            inner = dch.heat_kernel(I01, t, 0.3, z[1:-1]) * dch.heat_kernel(I01, s, z[1:-1], 0.6)
            rhs = np.trapezoid(np.concatenate([[0.0], inner, [0.0]]), z)
            assert abs(lhs - rhs) < 1e-8

    def test_short_time_gaussian_limit(self):
        # far from the boundary the killed kernel approaches the free one
        t = 1e-3
        free = np.exp(-0.01 / (2 * t)) / np.sqrt(2 * np.pi * t)
        assert abs(dch.heat_kernel(I01, t, 0.5, 0.6) - free) < 1e-12

    def test_frozen_value(self):
        assert dch.heat_kernel(I01, 0.7, 0.3, 0.6) == pytest.approx(
            0.048637791495226484, abs=1e-14)

    def test_domain_errors(self):
        with pytest.raises(DomainError):
            dch.heat_kernel(I01, 0.5, 0.0, 0.5)
        with pytest.raises(DomainError):
            dch.heat_kernel(I01, 0.5, 0.5, 1.0)
        with pytest.raises(DomainError):
            dch.heat_kernel(I01, 0.0, 0.3, 0.5)

    def test_broadcasting(self):
        t = np.array([0.05, 0.2])
        out = dch.heat_kernel(I01, t[:, None], 0.4, np.linspace(0.1, 0.9, 5)[None, :])
        assert out.shape == (2, 5)


def fd_ground_eigenvalue(n: int) -> float:
    """Smallest eigenvalue of -(1/2) d^2/dx^2 on (0,1), Dirichlet, mesh 1/n."""
    h = 1.0 / n
    diag = np.full(n - 1, 1.0 / h**2)
    off = np.full(n - 2, -0.5 / h**2)
    vals = eigh_tridiagonal(diag, off, select="i", select_range=(0, 0))[0]
    return float(vals[0])


class TestSurvival:
    def test_ground_eigenvalue_oracle(self):
        # Richardson-extrapolated FD eigenvalue pins pi^2/2
        lam_h = fd_ground_eigenvalue(1000)
        lam_h2 = fd_ground_eigenvalue(2000)
        extrap = (4 * lam_h2 - lam_h) / 3
        assert abs(extrap - PI2_HALF) < 1e-9

    def test_long_time_decay_rate_matches_fd(self):
        # -log of the survival ratio over one unit equals the ground eigenvalue
        rate = -np.log(dch.survival(I01, 0.3, 4.0) / dch.survival(I01, 0.3, 3.0))
        fd = (4 * fd_ground_eigenvalue(2000) - fd_ground_eigenvalue(1000)) / 3
        assert abs(rate - fd) < 1e-8
        assert abs(rate - PI2_HALF) < 1e-12

    def test_mass_conservation(self):
        x = np.linspace(0.05, 0.95, 19)
        for t in (0.01, 0.1, 0.7, 3.0):
            total = (dch.survival(I01, x, t)
                     + dch.exit_cdf(I01, x, t, "left")
                     + dch.exit_cdf(I01, x, t, "right"))
            assert np.max(np.abs(total - 1.0)) < 1e-12

    def test_monotone_in_time(self):
        t = np.linspace(0.01, 2.0, 200)
        s = dch.survival(I01, 0.35, t)
        assert np.all(np.diff(s) < 0)

    def test_center_dominates(self):
        x = np.linspace(0.02, 0.98, 49)
        for t in (0.05, 0.3, 1.0):
            assert np.all(dch.survival(I01, x, t) <= dch.survival(I01, 0.5, t) + 1e-15)

    def test_t_zero(self):
        assert dch.survival(I01, 0.4, 0.0) == 1.0

    def test_frozen_values(self):
        assert dch.survival(I01, 0.3, 0.7) == pytest.approx(0.03255799167117041, abs=1e-14)
        assert dch.survival(I01, 0.3, 0.05) == pytest.approx(0.8185423925293867, abs=1e-14)


class TestExitLaw:
    def test_density_is_cdf_derivative(self):
        # centered difference of the cumulative flux vs the flux
        t = np.linspace(0.05, 1.5, 30)
        eps = 1e-6
        for side in ("left", "right"):
            num = (dch.exit_cdf(I01, 0.3, t + eps, side)
                   - dch.exit_cdf(I01, 0.3, t - eps, side)) / (2 * eps)
            assert np.max(np.abs(num - dch.exit_flux(I01, 0.3, t, side))) < 1e-8

    def test_density_integrates_to_cdf(self):
        t_grid = np.linspace(1e-8, 0.8, 150001)
        h = dch.exit_flux(I01, 0.35, t_grid, "right")
        integral = np.trapezoid(h, t_grid)
        assert abs(integral - dch.exit_cdf(I01, 0.35, 0.8, "right")) < 1e-8

    def test_harmonic_measure_limit(self):
        x = np.linspace(0.05, 0.95, 19)
        assert np.max(np.abs(dch.exit_cdf(I01, x, 60.0, "right") - x)) < 1e-14
        assert np.max(np.abs(dch.exit_cdf(I01, x, 60.0, "left") - (1 - x))) < 1e-14

    def test_mean_exit_time_quadrature(self):
        # integral of the survival equals (x-a)(b-x)
        t = np.linspace(0, 12.0, 120001)
        for x in (0.2, 0.5, 0.77):
            m = np.trapezoid(dch.survival(I01, x, t), t)
            assert abs(m - x * (1 - x)) < 1e-7

    def test_exit_law_object(self):
        law = dch.ExitLaw(I01, 0.3)
        assert law.survival(0.7) == dch.survival(I01, 0.3, 0.7)
        assert law.density(0.7) == dch.exit_density(I01, 0.3, 0.7)
        assert law.flux(0.7, "left") == dch.exit_flux(I01, 0.3, 0.7, "left")
        assert law.cdf(0.7, "right") == pytest.approx(0.28372130630970643, abs=1e-14)

    def test_side_symmetry(self):
        t = np.linspace(0.02, 1.0, 25)
        left = dch.exit_flux(I01, 0.3, t, "left")
        right = dch.exit_flux(I01, 0.7, t, "right")
        assert np.max(np.abs(left - right)) < 1e-13

    def test_bad_side(self):
        with pytest.raises(DomainError):
            dch.exit_flux(I01, 0.3, 0.5, "up")


class TestGreen:
    def test_center_value(self):
        assert dch.green(I01, 0.5, 0.5) == 0.5

    def test_fd_oracle(self):
        # nodal-exact tridiagonal solve of -(1/2) u'' = point mass
        n = 200
        h = 1.0 / n
        x = np.arange(1, n) * h
        ab = np.zeros((3, n - 1))
        ab[0, 1:] = -0.5 / h**2
        ab[1, :] = 1.0 / h**2
        ab[2, :-1] = -0.5 / h**2
        for j in (40, 100, 137):
            rhs = np.zeros(n - 1)
            rhs[j - 1] = 1.0 / h
            u = solve_banded((1, 1), ab, rhs)
            assert np.max(np.abs(u - dch.green(I01, x, x[j - 1]))) < 1e-10

    def test_symmetry_and_row_integral(self):
        gk = dch.GreenKernel(Interval(-1.0, 3.0))
        x = np.linspace(-0.9, 2.9, 13)
        G = gk(x[:, None], x[None, :])
        assert np.max(np.abs(G - G.T)) == 0.0
        y = np.linspace(-1.0, 3.0, 40001)
        for xi in (-0.5, 0.8, 2.2):
            row = np.trapezoid(gk(xi, y[1:-1]), y[1:-1])
            assert abs(row - gk.row_integral(xi)) < 1e-6

    def test_mean_exit_measure(self):
        nu = JumpMeasure.mixture(I01, [0.25, 0.75], [0.5, 0.5])
        assert dch.mean_exit(nu) == pytest.approx(0.1875, abs=1e-15)
        q = JumpMeasure.quasistationary(I01)
        # closed form: 1/4 - integral of x^2 against the ground density
        assert dch.mean_exit(q) == pytest.approx(2.0 / np.pi**2, abs=1e-12)


class TestMgf:
    def test_series_identity(self):
        # absolutely convergent rearrangement of the exit-time mgf at the center
        lam = 2.0
        k = np.arange(0, 4000, 2)
        lk = ((k + 1) * np.pi) ** 2 / 2
        ck = 2 * np.sqrt(2) / ((k + 1) * np.pi)
        phk = np.sqrt(2) * np.sin((k + 1) * np.pi / 2)
        series = 1.0 + lam * np.sum(ck * phk / (lk - lam))
        assert abs(series - dch.mgf_exit_center(2.0, 1.0)) < 5e-11

    def test_monte_carlo(self):
        rng = np.random.default_rng(41)
        t, _ = dch.sample_exit_batch(I01, np.full(200_000, 0.5), rng)
        vals = np.exp(2.0 * t)
        err = 3 * vals.std() / np.sqrt(vals.size)
        assert abs(vals.mean() - dch.mgf_exit_center(2.0, 1.0)) < err

    def test_domain(self):
        with pytest.raises(DomainError):
            dch.mgf_exit_center(PI2_HALF, 1.0)
        with pytest.raises(DomainError):
            dch.mgf_exit_center(-0.1, 1.0)
        with pytest.raises(DomainError):
            dch.mgf_exit_center(1.0, 0.0)
        assert dch.mgf_exit_center(0.0, 2.0) == 1.0


def walk_exit_oracle(x0: float, n_paths: int, dt: float, rng) -> tuple:
    """Discretized BM exit from (0,1) with Brownian-bridge crossing correction."""
    x = np.full(n_paths, x0)
    alive = np.arange(n_paths)
    times = np.zeros(n_paths)
    right = np.zeros(n_paths, dtype=bool)
    step = 0
    while alive.size:
        step += 1
        xv = x[alive]
        xn = xv + np.sqrt(dt) * rng.standard_normal(alive.size)
        crossed_lo = xn <= 0
        crossed_hi = xn >= 1
        interior = ~crossed_lo & ~crossed_hi
        # bridge correction for paths that stayed inside on the grid
        if np.any(interior):
            a0, a1 = xv[interior], xn[interior]
            p_lo = np.exp(-2 * a0 * a1 / dt)
            p_hi = np.exp(-2 * (1 - a0) * (1 - a1) / dt)
            u = rng.uniform(size=a0.size)
            hit_lo = u < p_lo
            hit_hi = (u >= p_lo) & (u < p_lo + p_hi)
            tmp_lo = np.zeros(alive.size, dtype=bool)
            tmp_hi = np.zeros(alive.size, dtype=bool)
            tmp_lo[np.flatnonzero(interior)[hit_lo]] = True
            tmp_hi[np.flatnonzero(interior)[hit_hi]] = True
            crossed_lo |= tmp_lo
            crossed_hi |= tmp_hi
        done = crossed_lo | crossed_hi
        idx = alive[done]
        times[idx] = (step - 0.5) * dt
        right[idx] = crossed_hi[done]
        x[alive] = xn
        alive = alive[~done]
    return times, right


class TestSampleExit:
    def test_inversion_residual(self):
        # deterministic solver property: residual below the advertised tolerance
        targets = np.array([1e-9, 1e-6, 1e-3, 0.05, 0.3, 0.5, 0.9, 0.999, 1 - 1e-9])
        u = np.full_like(targets, 0.3)
        p = np.full_like(targets, 0.7)   # left side from x = 0.3
        t = dch._invert_side_cdf(1.0, u, p, targets)
        resid = dch._side_cdf_flat(1.0, u, t, 1e-13) - targets * p
        assert np.max(np.abs(resid)) < 1e-12
        assert np.all(np.diff(t) > 0)

    def test_side_frequency(self):
        rng = np.random.default_rng(5)
        _, right = dch.sample_exit_batch(I01, np.full(400_000, 0.3), rng)
        assert abs(right.mean() - 0.3) < 3 * np.sqrt(0.3 * 0.7 / 400_000)

    def test_conditional_time_law(self):
        rng = np.random.default_rng(11)
        n = 200_000
        t, right = dch.sample_exit_batch(I01, np.full(n, 0.3), rng)
        for mask, side, p in ((right, "right", 0.3), (~right, "left", 0.7)):
            tt = np.sort(t[mask])
            emp = (np.arange(tt.size) + 0.5) / tt.size
            ana = dch.exit_cdf(I01, 0.3, tt, side) / p
            # 1.63/sqrt(n) is the 1% KS band
            assert np.max(np.abs(emp - ana)) < 1.63 / np.sqrt(tt.size)

    def test_mean(self):
        rng = np.random.default_rng(13)
        t, _ = dch.sample_exit_batch(I01, np.full(300_000, 0.3), rng)
        assert abs(t.mean() - 0.21) < 3 * t.std() / np.sqrt(t.size)

    def test_against_random_walk_oracle(self):
        rng = np.random.default_rng(17)
        walk_t, walk_right = walk_exit_oracle(0.3, 3000, 1e-5, rng)
        exact_t, exact_right = dch.sample_exit_batch(I01, np.full(3000, 0.3), rng)
        assert ks_2samp(walk_t, exact_t).pvalue > 0.01
        assert ks_2samp(walk_t[walk_right], exact_t[exact_right]).pvalue > 0.01
        diff = abs(walk_right.mean() - exact_right.mean())
        assert diff < 3 * np.sqrt(2 * 0.3 * 0.7 / 3000)

    def test_scalar_form_and_reproducibility(self):
        s1 = RandomStream(2026).substream("exit")
        s2 = RandomStream(2026).substream("exit")
        a = dch.sample_exit(0.4, I01, s1)
        b = dch.sample_exit(0.4, I01, s2)
        assert a == b
        assert a[1] in ("left", "right")
        assert a[0] > 0

    def test_rejects_boundary_start(self):
        with pytest.raises(DomainError):
            dch.sample_exit_batch(I01, np.array([0.0, 0.5]), np.random.default_rng(0))


class TestPositionGivenSurvival:
    @pytest.mark.parametrize("x0,s", [(0.25, 0.35), (0.97, 0.004), (0.5, 1.2)])
    def test_conditional_law(self, x0, s):
        rng = np.random.default_rng(23)
        n = 150_000
        y = dch.sample_position_given_survival(I01, np.full(n, x0), np.full(n, s), rng)
        assert np.all((y > 0) & (y < 1))
        yy = np.sort(y)
        surv = dch.survival(I01, x0, s)
        cdf = dch._position_cdf_flat(1.0, np.full(n, x0), yy, np.full(n, s), 1e-12) / surv
        emp = (np.arange(n) + 0.5) / n
        assert np.max(np.abs(cdf - emp)) < 1.63 / np.sqrt(n)

    def test_zero_elapsed_returns_start(self):
        rng = np.random.default_rng(1)
        y = dch.sample_position_given_survival(I01, np.array([0.3, 0.8]), np.zeros(2), rng)
        assert np.array_equal(y, [0.3, 0.8])

    def test_mixed_elapsed_batch(self):
        rng = np.random.default_rng(3)
        s = np.array([0.0, 0.01, 0.5, 2.0])
        y = dch.sample_position_given_survival(I01, np.full(4, 0.6), s, rng)
        assert y[0] == 0.6
        assert np.all((y > 0) & (y < 1))


class TestMeasureResolved:
    @staticmethod
    def quad_against(nu, f):
        """Cell-respecting quadrature of f against nu (grid densities jump at
        cell edges, so integrate cell by cell)."""
        if nu.kind == "grid":
            total = 0.0
            h = nu.cell_width
            for c, v in zip(nu.cell_centers, nu.values):
                z = np.linspace(c - h / 2 + 1e-12, c + h / 2 - 1e-12, 2401)
                total += v * np.trapezoid(f(z), z)
            return total
        z = np.linspace(nu.interval.a, nu.interval.b, 200001)[1:-1]
        return np.trapezoid(nu.density(z) * f(z), z)

    def test_phi_moments_against_quadrature(self):
        K = 9
        basis = dch.SpectralBasis(I01, K)
        for nu in (
            JumpMeasure.mixture(I01, [0.3, 0.6], [0.4, 0.6]),
            JumpMeasure.grid_density(I01, np.linspace(0.5, 1.5, 32)),
            JumpMeasure.quasistationary(I01),
        ):
            mom = dch.phi_moments(nu, K)
            if nu.is_atomic:
                ref = np.sum(np.asarray(nu.weights)[:, None] * basis.phi(np.asarray(nu.atoms)), axis=0)
                assert np.max(np.abs(mom - ref)) < 1e-13
            else:
                ref = np.array([self.quad_against(nu, lambda z, k=k: basis.phi(z)[:, k])
                                for k in range(K)])
                assert np.max(np.abs(mom - ref)) < 1e-8

    def test_kernel_from_measure_mixture(self):
        nu = JumpMeasure.mixture(I01, [0.3, 0.6], [0.4, 0.6])
        t = np.array([0.02, 0.09, 0.5, 2.0])
        y = np.linspace(0.05, 0.95, 31)
        got = dch.kernel_from_measure(nu, t, y)
        ref = 0.4 * np.stack([dch.heat_kernel(I01, ti, 0.3, y) for ti in t]) \
            + 0.6 * np.stack([dch.heat_kernel(I01, ti, 0.6, y) for ti in t])
        assert np.max(np.abs(got - ref)) < 1e-13

    def test_kernel_from_measure_grid_both_branches(self):
        vals = np.sin(np.pi * (np.arange(48) + 0.5) / 48) ** 2
        nu = JumpMeasure.grid_density(I01, vals)
        y = np.linspace(0.05, 0.95, 21)
        for t in (0.02, 0.5):
            got = dch.kernel_from_measure(nu, np.array([t]), y)[0]
            ref = np.array([self.quad_against(nu, lambda z: dch.heat_kernel(I01, t, z, yy))
                            for yy in y])
            assert np.max(np.abs(got - ref)) < 1e-8

    def test_kernel_from_measure_qsd_exact(self):
        q = JumpMeasure.quasistationary(I01)
        y = np.linspace(0.1, 0.9, 17)
        for t in (0.01, 0.4, 3.0):
            got = dch.kernel_from_measure(q, np.array([t]), y)[0]
            ref = np.exp(-PI2_HALF * t) * (np.pi / 2) * np.sin(np.pi * y)
            assert np.max(np.abs(got - ref)) < 1e-13

    def test_exit_density_from_measure(self):
        s = np.array([0.01, 0.05, 0.2, 1.0])
        nu = JumpMeasure.mixture(I01, [0.3, 0.6], [0.4, 0.6])
        ref = 0.4 * dch.exit_density(I01, 0.3, s) + 0.6 * dch.exit_density(I01, 0.6, s)
        assert np.max(np.abs(dch.exit_density_from_measure(nu, s) - ref)) < 1e-13
        q = JumpMeasure.quasistationary(I01)
        ref_q = PI2_HALF * np.exp(-PI2_HALF * s)
        assert np.max(np.abs(dch.exit_density_from_measure(q, s) - ref_q)) < 1e-13

    def test_exit_density_from_measure_grid(self):
        vals = np.linspace(1.0, 3.0, 40)
        nu = JumpMeasure.grid_density(I01, vals)
        for s in (0.03, 0.5):   # image and spectral branches
            got = dch.exit_density_from_measure(nu, np.array([s]))[0]
            ref = self.quad_against(nu, lambda z: dch.exit_density(I01, z, s))
            assert abs(got - ref) < 1e-8

    def test_survival_from_measure(self):
        nu = JumpMeasure.mixture(I01, [0.3, 0.6], [0.4, 0.6])
        t = np.array([0.05, 0.7])
        ref = 0.4 * dch.survival(I01, 0.3, t) + 0.6 * dch.survival(I01, 0.6, t)
        assert np.max(np.abs(dch.survival_from_measure(nu, t) - ref)) < 1e-13
        g = JumpMeasure.grid_density(I01, np.ones(64))
        got = dch.survival_from_measure(g, np.array([0.3]))[0]
        z = np.linspace(1e-6, 1 - 1e-6, 20001)
        ref_g = np.trapezoid(dch.survival(I01, z, 0.3), z)
        assert abs(got - ref_g) < 1e-6

    def test_kernel_table_rows(self):
        rows = dch.kernel_table(I01, [0.1, 0.5], [0.3], [0.4, 0.6])
        assert len(rows) == 4
        t, x, y, v = rows[0]
        assert v == dch.heat_kernel(I01, t, x, y)
