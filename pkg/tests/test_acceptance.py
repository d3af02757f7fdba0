"""
Acceptance checks for the simulator as a whole

The quick checks (bound preservation, limit consistency, conservation)
run with the default suite; the long statistical runs are marked slow:

    pytest -m slow tests/test_acceptance.py
"""

import math

import numpy as np
import pytest

from kitsim.control import (
    ControlStrategy,
    DesiredSpeedSpec,
    StrategyKind,
    VdMode,
    constrained_update_desired,
    constrained_update_variance,
)
from kitsim.engine import InitDist, InitKind, ScalingParams, SimConfig, run
from kitsim.experiments import (
    SweepSpec,
    default_rho_grid,
    default_workers,
    distribution_evolution,
    fundamental_diagram,
    max_abs_gap,
    relaxation_oracle,
    scaling_study,
    variance_comparison,
)
from kitsim.kernel import KernelParams, unconstrained_update
from kitsim.observables import steady_state

GAMMAS = (0.5, 1.0, 2.0)
DELTA_VS = (0.1, 0.2, 0.5)


def all_updates(v, w, vd, dt, nu, rho, kp):
    return (
        unconstrained_update(v, w, dt, rho, kp),
        constrained_update_variance(v, w, dt, nu, rho, kp),
        constrained_update_desired(v, w, vd, dt, nu, rho, kp),
    )


class TestBoundPreservation:
    def test_random_tuples(self):
        rng = np.random.default_rng(2024)
        groups, per_group = 1000, 1000
        for _ in range(groups):
            kp = KernelParams(gamma=float(rng.choice(GAMMAS)), delta_v=float(rng.choice(DELTA_VS)))
            rho = float(rng.random())
            dt = float(1.0 - rng.random())  # (0, 1]
            nu = float(10.0 ** rng.uniform(-6.0, 6.0))
            vd = float(rng.random())
            v, w = rng.random(per_group), rng.random(per_group)
            for updated in all_updates(v, w, vd, dt, nu, rho, kp):
                assert updated.min() >= 0.0 and updated.max() <= 1.0

    def test_boundary_grid(self):
        corners = np.array([0.0, 1e-12, 0.5, 1.0 - 1e-12, 1.0])
        v, w = (grid.ravel() for grid in np.meshgrid(corners, corners))
        for kp in (KernelParams(g, d) for g in GAMMAS for d in DELTA_VS):
            for rho in (0.0, 1e-12, 0.5, 1.0):
                for dt in (1e-12, 0.5, 1.0):
                    for nu in (1e-6, 1.0, 1e6):
                        for vd in (0.0, 1.0):
                            for updated in all_updates(v, w, vd, dt, nu, rho, kp):
                                assert updated.min() >= 0.0 and updated.max() <= 1.0


class TestLimitConsistency:
    def test_weak_penalisation_reduces_to_unconstrained(self):
        rng = np.random.default_rng(7)
        v, w = rng.random(100_000), rng.random(100_000)
        for kp in (KernelParams(1.0, 0.2), KernelParams(2.0, 0.5)):
            for dt in (1e-3, 0.1, 1.0):
                free = unconstrained_update(v, w, dt, 0.4, kp)
                np.testing.assert_allclose(constrained_update_variance(v, w, dt, 1e12, 0.4, kp), free, atol=1e-9)
                np.testing.assert_allclose(constrained_update_desired(v, w, 0.3, dt, 1e12, 0.4, kp), free, atol=1e-9)

    def test_strong_penalisation_reaches_targets(self):
        # The gap to the target shrinks like nu / dt^2, so dt stays away from zero here
        rng = np.random.default_rng(8)
        v, w = rng.random(100_000), rng.random(100_000)
        kp = KernelParams(1.0, 0.2)
        for dt in (0.1, 0.5, 1.0):
            np.testing.assert_allclose(constrained_update_variance(v, w, dt, 1e-12, 0.4, kp), w, atol=1e-9)
            np.testing.assert_allclose(
                constrained_update_desired(v, w, 0.65, dt, 1e-12, 0.4, kp), np.full(v.shape, 0.65), atol=1e-9
            )


class TestConservation:
    def test_particle_count_and_normalisation(self):
        cfg = SimConfig(rho=0.7, n_particles=3000, tau_end=1.0, seed=3, strategy=ControlStrategy.variance(0.1))
        for ens in run(cfg).snapshots:
            assert ens.n == 3000
        grid = distribution_evolution(cfg, 40, [0.0, 0.5, 1.0])
        assert np.all(np.abs(grid.integrals() - 1.0) <= 1e-12)

    def test_empty_road_bit_identical(self):
        cfg = SimConfig(rho=0.0, n_particles=1000, tau_end=1.0, seed=4, strategy=ControlStrategy.desired(0.01))
        result = run(cfg)
        for ens in result.snapshots:
            np.testing.assert_array_equal(ens.speeds, result.snapshots[0].speeds)

    @pytest.mark.parametrize("strategy", [ControlStrategy.unconstrained(), ControlStrategy.variance(0.01)])
    def test_dirac_fixed_point(self, strategy):
        cfg = SimConfig(rho=0.5, n_particles=1000, tau_end=1.0, seed=5, strategy=strategy,
                        init=InitDist(InitKind.DIRAC, v0=0.625))
        for ens in run(cfg).snapshots:
            assert np.all(ens.speeds == 0.625)


class TestRelaxationOracle:
    def test_matches_closed_form(self):
        result = relaxation_oracle(v0=1.0, vd=0.4, rho=0.6, nu0=0.1, epsilon=1e-3, tau_end=5.0)
        assert result.monokinetic
        assert result.max_rel_error <= 0.02


@pytest.mark.slow
class TestVarianceControl:
    @pytest.mark.parametrize("rho", [0.3, 0.6])
    def test_mean_invariance_and_variance_ordering(self, rho):
        base = SimConfig(rho=rho, n_particles=100_000, tau_end=10.0, sample_stride=10, seed=17)
        free, strong, weak = variance_comparison(base, [0.1, 10.0])
        assert np.max(np.abs(strong.series.V - free.series.V)) <= 5e-3
        for leg in (strong, weak):
            assert np.all(leg.series.var <= free.series.var + 1e-3)
        late = free.series.taus >= 0.5
        assert np.all(strong.series.var[late] < weak.series.var[late])


@pytest.mark.slow
class TestDesiredSpeedControl:
    @pytest.mark.parametrize("nu0", [0.1, 0.01])
    def test_steady_bounds(self, nu0):
        vd = 0.5
        strategy = ControlStrategy.desired(nu0, DesiredSpeedSpec(VdMode.CONSTANT, vd))
        cfg = SimConfig(rho=0.6, n_particles=100_000, tau_end=50.0, sample_stride=50, seed=21, strategy=strategy)
        steady = steady_state(run(cfg, snapshot_taus=()).series)
        assert abs(steady.V - vd) <= nu0 + 5e-3
        assert steady.var <= 2 * nu0
        assert abs(steady.E - vd * vd) <= nu0 * (vd + 1) + 5e-3


@pytest.mark.slow
class TestFundamentalDiagrams:
    def test_variance_control_leaves_diagram_unchanged(self):
        base = SimConfig(rho=0.5, n_particles=10_000, seed=31, sample_stride=100)
        spec = SweepSpec(
            base=base,
            rho_grid=default_rho_grid(),
            tau_end=100.0,
            strategies=(ControlStrategy.unconstrained(), ControlStrategy.variance(0.1), ControlStrategy.variance(10.0)),
        )
        rows = fundamental_diagram(spec, workers=default_workers())
        by_rho = {}
        for row in rows:
            by_rho.setdefault(row.rho, {})[(row.strategy, row.nu0)] = row
        for rho, points in by_rho.items():
            free = points[("none", math.inf)]
            for nu0 in (0.1, 10.0):
                controlled = points[("variance", nu0)]
                assert abs(controlled.V - free.V) <= 1e-2, rho
                assert abs(controlled.flux - free.flux) <= 1e-2, rho

    def test_desired_speed_forces_linear_diagram(self):
        base = SimConfig(rho=0.5, n_particles=10_000, seed=37, sample_stride=100)
        spec = SweepSpec(
            base=base,
            rho_grid=default_rho_grid(),
            tau_end=100.0,
            strategies=(ControlStrategy.desired(1e-3, DesiredSpeedSpec(VdMode.LINEAR_CONGESTION)),),
        )
        rows = fundamental_diagram(spec, workers=default_workers())
        for row in rows:
            assert abs(row.flux - row.rho * (1 - row.rho)) <= 2e-2, row.rho
            if row.rho > 0:
                # Without traffic nothing interacts and the initial mean is kept
                assert abs(row.V - (1 - row.rho)) <= 2e-2, row.rho


@pytest.mark.slow
class TestDeterminism:
    def test_worker_count_does_not_change_sweep(self):
        base = SimConfig(rho=0.5, n_particles=2000, seed=41)
        spec = SweepSpec(
            base=base,
            rho_grid=(0.1, 0.3, 0.5, 0.7, 0.9),
            tau_end=2.0,
            strategies=(ControlStrategy.unconstrained(), ControlStrategy.variance(0.1)),
        )
        assert fundamental_diagram(spec, workers=1) == fundamental_diagram(spec, workers=4)


@pytest.mark.slow
class TestQuasiInvariantScaling:
    def test_series_agree_across_step_sizes(self):
        # nu0 = 1 keeps the O(epsilon) drift of the control rate well below the tolerances
        base = SimConfig(rho=0.5, n_particles=100_000, tau_end=2.0, sample_stride=5, seed=43,
                         scaling=ScalingParams(2e-2), strategy=ControlStrategy(StrategyKind.VARIANCE, nu0=1.0))
        series = scaling_study(base, [2e-2, 1e-2, 5e-3])
        for coarse, fine in zip(series, series[1:]):
            np.testing.assert_allclose(coarse.taus, fine.taus, atol=1e-9)
            assert max_abs_gap(coarse, fine, "V") < 1e-2
            assert max_abs_gap(coarse, fine, "var") < 5e-3
