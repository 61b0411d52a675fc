"""Trajectory space, semigroup convolution, smallness gate, Picard iteration."""

import numpy as np
import pytest

from mildflow import (
    GateUnreachableError,
    PicardConfig,
    PicardDivergenceError,
    TimeGrid,
    VectorField,
    alpha_from_coords,
    alpha_trajectory,
    combine_trajectories,
    convolve_semigroup,
    estimate_phi_norm,
    et_norm,
    phi,
    picard_solve,
    shrink_horizon,
    smallness_gate,
    zero_trajectory,
)


@pytest.fixture(scope="module")
def grid():
    return TimeGrid.graded(0.5, 20, 6)


def _mode_field(spectrum, k, amplitude=1.0):
    u = spectrum.eigenfield(k)
    return VectorField(u.mask, amplitude * u.values)


class TestTimeGrid:
    def test_graded_layout(self):
        g = TimeGrid.graded(2.0, 8)
        assert g.nodes[0] == 0.0 and g.nodes[-1] == 2.0
        assert np.allclose(g.nodes, 2.0 * (np.arange(9) / 8.0) ** 2)
        # grading: early spacing much finer than late spacing
        assert np.diff(g.nodes)[0] < np.diff(g.nodes)[-1] / 10.0

    def test_validation(self):
        with pytest.raises(ValueError):
            TimeGrid.graded(1.0, 1)  # fewer than two intervals
        with pytest.raises(ValueError):
            TimeGrid(1.0, np.array([0.0, 0.5, 0.4, 1.0]))
        with pytest.raises(ValueError):
            TimeGrid(1.0, np.array([0.1, 0.5, 1.0]))
        with pytest.raises(ValueError):
            TimeGrid.graded(1.0, 8, quad_order=0)

    def test_scaled_preserves_layout(self):
        g = TimeGrid.graded(1.0, 10, 4)
        s = g.scaled(0.25)
        assert s.horizon == 0.25
        assert np.allclose(s.nodes, g.nodes * 0.25)
        assert s.quad_order == 4


class TestAlphaTrajectory:
    def test_zero_data(self, box4_spectrum, grid):
        traj = alpha_trajectory(box4_spectrum, VectorField.zeros(box4_spectrum.hodge.mask), grid)
        assert et_norm(box4_spectrum, traj).total == 0.0

    def test_single_mode_samples(self, box4_spectrum, grid):
        k = 2
        lam = box4_spectrum.eigenvalues[k]
        traj = alpha_trajectory(box4_spectrum, _mode_field(box4_spectrum, k), grid)
        coords0 = box4_spectrum.hodge.coords(_mode_field(box4_spectrum, k))
        for j in (0, 5, grid.segments):
            expected = np.exp(-lam * grid.nodes[j]) * coords0
            assert np.allclose(traj.samples[j], expected, rtol=1e-12, atol=1e-14)
        norms = et_norm(box4_spectrum, traj)
        assert norms.sup_quarter == pytest.approx(lam**0.25, rel=1e-12)

    def test_single_mode_derivative_bound(self, box4_spectrum, grid):
        k = 5
        lam = box4_spectrum.eigenvalues[k]
        traj = alpha_trajectory(box4_spectrum, _mode_field(box4_spectrum, k), grid)
        norms = et_norm(box4_spectrum, traj)
        # scalar maximization oracle over the grid nodes
        t = grid.nodes[1:]
        manual = np.max(t * lam**1.25 * np.exp(-lam * t))
        assert norms.sup_deriv_weighted == pytest.approx(manual, rel=1e-12)
        assert norms.sup_deriv_weighted <= (1.0 / np.e) * lam**0.25 + 1e-15

    def test_projection_warning(self, box4_ops, box4_spectrum, grid):
        rng = np.random.default_rng(0)
        from mildflow import ScalarField

        p = ScalarField(box4_ops.mask, rng.standard_normal(box4_ops.mask.n_cells))
        u0 = box4_ops.gradient_of(p)  # pure gradient: projection removes it all
        with pytest.warns(UserWarning, match="gradient component"):
            alpha_trajectory(box4_spectrum, u0, grid)


class TestEtNorm:
    def test_zero(self, box4_spectrum, grid):
        assert et_norm(box4_spectrum, zero_trajectory(box4_spectrum, grid)).total == 0.0

    def test_naive_recompute(self, box4_spectrum, grid):
        rng = np.random.default_rng(1)
        m = box4_spectrum.dim
        traj = alpha_from_coords(box4_spectrum, rng.standard_normal(m), grid)
        norms = et_norm(box4_spectrum, traj)
        lam = box4_spectrum.eigenvalues
        vol = box4_spectrum.hodge.mask.cell_volume ** 0.5
        sup_q = sup_h = sup_d = 0.0
        for j, t in enumerate(grid.nodes):
            modal = box4_spectrum.to_modal(traj.samples[j])
            sup_q = max(sup_q, vol * np.linalg.norm(lam**0.25 * modal))
            if j > 0:
                sup_h = max(sup_h, t**0.25 * vol * np.linalg.norm(lam**0.5 * modal))
                dmodal = box4_spectrum.to_modal(traj.derivative_samples[j - 1])
                sup_d = max(sup_d, t * vol * np.linalg.norm(lam**0.25 * dmodal))
        assert norms.sup_quarter == pytest.approx(sup_q, rel=1e-13)
        assert norms.sup_half_weighted == pytest.approx(sup_h, rel=1e-13)
        assert norms.sup_deriv_weighted == pytest.approx(sup_d, rel=1e-13)
        assert norms.total == pytest.approx(sup_q + sup_h + sup_d, rel=1e-13)


class TestConvolution:
    def test_constant_forcing_closed_form(self, box4_spectrum, grid):
        # time-independent forcing integrates to A^{-1}(I - e^{-tA}) g
        rng = np.random.default_rng(2)
        lam = box4_spectrum.eigenvalues
        g = rng.standard_normal(lam.size)
        values = convolve_semigroup(
            box4_spectrum, grid, lambda s: np.tile(g[:, None], (1, s.size))
        )
        for j in range(1, grid.nodes.size):
            t = grid.nodes[j]
            exact = (1.0 - np.exp(-t * lam)) / lam * g
            err = np.linalg.norm(values[j] - exact) / np.linalg.norm(exact)
            assert err <= 1e-6

    def test_error_decreases_with_order(self, box4_spectrum):
        coarse = TimeGrid.graded(0.5, 20, 3)
        lam = box4_spectrum.eigenvalues
        g = np.ones(lam.size)

        def worst(order):
            values = convolve_semigroup(
                box4_spectrum, coarse, lambda s: np.tile(g[:, None], (1, s.size)), order
            )
            errs = []
            for j in range(1, coarse.nodes.size):
                t = coarse.nodes[j]
                exact = (1.0 - np.exp(-t * lam)) / lam * g
                errs.append(np.linalg.norm(values[j] - exact) / np.linalg.norm(exact))
            return max(errs)

        e3, e6 = worst(3), worst(6)
        assert e6 < e3


class TestPhi:
    def test_zero_operand(self, box4_spectrum, box4_hodge, grid):
        rng = np.random.default_rng(3)
        v = alpha_from_coords(box4_spectrum, rng.standard_normal(box4_spectrum.dim), grid)
        image = phi(box4_spectrum, box4_hodge, zero_trajectory(box4_spectrum, grid), v)
        assert et_norm(box4_spectrum, image).total <= 1e-14

    def test_symmetry(self, box4_spectrum, box4_hodge, grid):
        rng = np.random.default_rng(4)
        u = alpha_from_coords(box4_spectrum, rng.standard_normal(box4_spectrum.dim), grid)
        v = alpha_from_coords(box4_spectrum, rng.standard_normal(box4_spectrum.dim), grid)
        uv = phi(box4_spectrum, box4_hodge, u, v)
        vu = phi(box4_spectrum, box4_hodge, v, u)
        diff = et_norm(box4_spectrum, combine_trajectories(1.0, uv, -1.0, vu)).total
        assert diff <= 1e-10 * et_norm(box4_spectrum, uv).total

    def test_bilinearity(self, box4_spectrum, box4_hodge, grid):
        rng = np.random.default_rng(5)
        m = box4_spectrum.dim
        u = alpha_from_coords(box4_spectrum, rng.standard_normal(m), grid)
        w = alpha_from_coords(box4_spectrum, rng.standard_normal(m), grid)
        v = alpha_from_coords(box4_spectrum, rng.standard_normal(m), grid)
        a, b = 0.7, -1.3
        left = phi(box4_spectrum, box4_hodge, combine_trajectories(a, u, b, w), v)
        right = combine_trajectories(
            a,
            phi(box4_spectrum, box4_hodge, u, v),
            b,
            phi(box4_spectrum, box4_hodge, w, v),
        )
        diff = et_norm(box4_spectrum, combine_trajectories(1.0, left, -1.0, right)).total
        assert diff <= 1e-10 * max(et_norm(box4_spectrum, left).total, 1e-30)

    def test_grid_mismatch(self, box4_spectrum, box4_hodge, grid):
        other = TimeGrid.graded(0.5, 10, 6)
        with pytest.raises(ValueError):
            phi(
                box4_spectrum,
                box4_hodge,
                zero_trajectory(box4_spectrum, grid),
                zero_trajectory(box4_spectrum, other),
            )


class TestPhiNormEstimate:
    def test_positive_and_monotone(self, box4_spectrum, box4_hodge, grid):
        small = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=2, seed=11)
        large = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=4, seed=11)
        assert small > 0.0
        assert large >= small

    def test_deterministic(self, box4_spectrum, box4_hodge, grid):
        a = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=3, seed=12)
        b = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=3, seed=12)
        assert a == b

    def test_horizon_insensitivity(self, box4_spectrum, box4_hodge, grid):
        # the continuum operator norm does not depend on the horizon; the
        # sampled estimate is checked to drift by no more than 20%
        est_full = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=6, seed=13)
        est_half = estimate_phi_norm(
            box4_spectrum, box4_hodge, grid.scaled(grid.horizon / 2.0), trials=6, seed=13
        )
        assert abs(est_full - est_half) <= 0.2 * max(est_full, est_half)


class TestSmallnessGate:
    def test_zero_alpha_passes(self, box4_spectrum, grid):
        norms = et_norm(box4_spectrum, zero_trajectory(box4_spectrum, grid))
        assert smallness_gate(norms, 2.0)

    def test_boundary_is_strict(self):
        from mildflow import ETNorms

        norms = ETNorms(0.125, 0.0, 0.0)
        assert not smallness_gate(norms, 2.0)  # 0.125 == 1/(4*2) exactly

    def test_arithmetic(self):
        from mildflow import ETNorms

        assert smallness_gate(ETNorms(0.1, 0.0, 0.0), 2.0)  # 0.1 < 0.125

    def test_invalid_phi_norm(self):
        from mildflow import ETNorms

        with pytest.raises(ValueError):
            smallness_gate(ETNorms(0.1, 0.0, 0.0), 0.0)


class TestShrinkHorizon:
    def test_small_data_returned_unchanged(self, box4_spectrum, grid):
        u0 = _mode_field(box4_spectrum, 0, 1e-3)
        result = shrink_horizon(box4_spectrum, u0, 2.0, grid, [0.1, 0.2])
        assert result.horizon == grid.horizon
        assert result.eps == 0.0
        assert not result.attempts
        assert np.allclose(result.u0_smooth.values, u0.values)

    def test_empty_schedule_fails(self, box4_spectrum, grid):
        u0 = _mode_field(box4_spectrum, 0, 100.0)
        with pytest.raises(GateUnreachableError) as info:
            shrink_horizon(box4_spectrum, u0, 2.0, grid, [])
        assert info.value.attempts == []

    def test_large_single_mode_passes_after_smoothing(self, box4_spectrum):
        lam0 = box4_spectrum.eigenvalues[0]
        template = TimeGrid.graded(8.0 / lam0, 24, 6)
        step = 0.75 * np.log(2.0) / lam0
        schedule = [step * (k + 1) for k in range(12)]
        phi_gate = 0.008
        u0 = _mode_field(box4_spectrum, 0, 60.0)
        result = shrink_horizon(box4_spectrum, u0, phi_gate, template, schedule)
        assert result.attempts[-1].passed
        assert result.horizon < template.horizon
        assert result.eps > 0.0
        # the returned data really passes the gate on the returned grid
        traj = alpha_trajectory(box4_spectrum, result.u0_smooth, result.grid)
        assert smallness_gate(et_norm(box4_spectrum, traj), phi_gate)
        # the smoothed-orbit norms decay through the attempts
        totals = [a.alpha_eps_total for a in result.attempts]
        assert all(b < a for a, b in zip(totals, totals[1:]))

    def test_exhausted_schedule_reports_best(self, box4_spectrum, grid):
        u0 = _mode_field(box4_spectrum, 0, 1e6)
        with pytest.raises(GateUnreachableError) as info:
            shrink_horizon(box4_spectrum, u0, 2.0, grid, [1e-6], max_halvings=4)
        assert len(info.value.attempts) == 4
        assert info.value.best is not None


class TestPicard:
    def test_zero_data_immediate(self, box4_spectrum, box4_hodge, grid):
        cfg = PicardConfig(grid=grid)
        traj, log = picard_solve(
            box4_spectrum, box4_hodge, VectorField.zeros(box4_hodge.mask), cfg
        )
        assert log.converged and log.iterations == 1
        assert et_norm(box4_spectrum, traj).total == 0.0

    def test_linear_limit_returns_alpha_exactly(self, box4_spectrum, box4_hodge, grid):
        u0 = _mode_field(box4_spectrum, 1, 0.4)
        cfg = PicardConfig(grid=grid, nonlinearity_scale=0.0)
        traj, log = picard_solve(box4_spectrum, box4_hodge, u0, cfg)
        assert log.converged and log.iterations == 1
        assert log.distances[0] == 0.0
        alpha = alpha_trajectory(box4_spectrum, u0, grid)
        assert np.array_equal(traj.samples, alpha.samples)
        assert np.array_equal(traj.derivative_samples, alpha.derivative_samples)

    def test_tiny_data_contraction_bounds(self, box4_spectrum, box4_hodge, grid):
        phi_hat = estimate_phi_norm(box4_spectrum, box4_hodge, grid, trials=6, seed=21)
        phi_gate = 2.0 * phi_hat
        amp = 1e-3 / (4.0 * phi_gate)
        u0 = _mode_field(box4_spectrum, 0, amp)
        alpha = alpha_trajectory(box4_spectrum, u0, grid)
        alpha_total = et_norm(box4_spectrum, alpha).total
        assert smallness_gate(et_norm(box4_spectrum, alpha), phi_gate)
        cfg = PicardConfig(grid=grid, tol=1e-12)
        traj, log = picard_solve(box4_spectrum, box4_hodge, u0, cfg)
        assert log.converged
        # first correction bounded by the operator-norm product
        assert log.distances[0] <= phi_gate * alpha_total**2
        # observed contraction ratios within the certificate
        bound = 4.0 * phi_gate * alpha_total * 1.1
        assert all(r <= bound for r in log.ratios)

    def test_residual_bound_and_quadrature_robustness(self, box4_spectrum, box4_hodge, grid):
        u0 = _mode_field(box4_spectrum, 0, 0.05)
        tol = 1e-10
        residuals = {}
        for order in (6, 12):
            cfg = PicardConfig(grid=grid, tol=tol, quad_order=order)
            _, log = picard_solve(box4_spectrum, box4_hodge, u0, cfg)
            assert log.converged
            assert log.fixed_point_residual <= 2.0 * tol
            residuals[order] = log.fixed_point_residual
        lo, hi = sorted(residuals.values())
        assert hi <= 5.0 * max(lo, 1e-16)

    def test_uniqueness_probe(self, box4_spectrum, box4_hodge, grid):
        u0 = _mode_field(box4_spectrum, 0, 0.05)
        tol = 1e-10
        traj_a, _ = picard_solve(
            box4_spectrum, box4_hodge, u0, PicardConfig(grid=grid, tol=tol, start="alpha")
        )
        traj_z, _ = picard_solve(
            box4_spectrum, box4_hodge, u0, PicardConfig(grid=grid, tol=tol, start="zero")
        )
        gap = et_norm(
            box4_spectrum, combine_trajectories(1.0, traj_a, -1.0, traj_z)
        ).total
        assert gap <= 10.0 * tol

    def test_divergence_detected(self, box4_spectrum, box4_hodge, grid):
        u0 = _mode_field(box4_spectrum, 0, 80.0)
        with pytest.raises(PicardDivergenceError) as info:
            picard_solve(box4_spectrum, box4_hodge, u0, PicardConfig(grid=grid))
        log = info.value.log
        assert log is not None
        assert sum(1 for r in log.ratios[-3:] if r >= 1.0) == 3
