"""
Experiments for kitsim - fundamental diagrams, variance trajectories,
distribution evolution and the analytic relaxation check

Features:
- Fundamental diagram sweeps over a density grid for several strategies,
  parallel across grid points with an ordered, deterministic reduce
- Paired variance trajectories (common random numbers) for a list of
  penalisations under variance or desired-speed control
- Histogram grids of the speed distribution over time
- Relaxation of a monokinetic ensemble towards a constant desired speed,
  compared with its closed form and an ODE integration
- Epsilon-halving study of the quasi-invariant scaling
"""

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import solve_ivp
from tqdm import tqdm

from .control import ControlStrategy, DesiredSpeedSpec, StrategyKind, VdMode
from .engine import (
    InitDist,
    InitKind,
    ScalingParams,
    SimConfig,
    paired_runs,
    run,
    steps_to_reach,
)
from .errors import ParameterDomainError, RunError
from .kernel import check_unit
from .observables import (
    HistogramGrid,
    MomentSeries,
    flux,
    histogram,
    stack_histograms,
    steady_state,
)

LOG = logging.getLogger(__name__)

DEFAULT_RHO_STEP = 0.05
DEFAULT_SWEEP_TAU_END = 100.0
# Penalisations of the two variance-trajectory legs and the diagram-forcing demo
DEFAULT_COMPARE_NU0 = (1e-1, 10.0)
DEFAULT_FORCING_NU0 = 1e-3
RELAX_TOLERANCE = 0.02


def default_rho_grid(step: float = DEFAULT_RHO_STEP) -> Tuple[float, ...]:
    """Inclusive grid 0, step, ..., 1 with round-off removed"""
    count = int(round(1.0 / step))
    return tuple(round(k * step, 12) for k in range(count + 1))


def default_sweep_strategies() -> Tuple[ControlStrategy, ...]:
    """Unconstrained, variance control at two penalisations and a forced diagram"""
    return (
        ControlStrategy.unconstrained(),
        ControlStrategy.variance(DEFAULT_COMPARE_NU0[0]),
        ControlStrategy.variance(DEFAULT_COMPARE_NU0[1]),
        ControlStrategy.desired(DEFAULT_FORCING_NU0, DesiredSpeedSpec(VdMode.LINEAR_CONGESTION)),
    )


@dataclass(frozen=True)
class DiagramRow:
    """One point of a fundamental diagram"""

    rho: float
    strategy: str
    nu0: float  # +inf for the unconstrained dynamics
    V: float
    flux: float
    var: float

    @property
    def sort_key(self) -> Tuple[float, str, float]:
        return (self.rho, self.strategy, self.nu0)


@dataclass(frozen=True)
class SweepSpec:
    """Density grid, horizon and strategies of a fundamental-diagram sweep"""

    base: SimConfig
    rho_grid: Tuple[float, ...] = default_rho_grid()
    tau_end: float = DEFAULT_SWEEP_TAU_END
    strategies: Tuple[ControlStrategy, ...] = default_sweep_strategies()

    def __post_init__(self):
        grid = tuple(float(r) for r in self.rho_grid)
        if not grid:
            raise ParameterDomainError("sweep.rho grid is empty")
        for rho in grid:
            check_unit("sweep.rho", rho)
        if list(grid) != sorted(grid):
            raise ParameterDomainError("sweep.rho grid must be sorted")
        if not self.strategies:
            raise ParameterDomainError("sweep needs at least one strategy")
        if not (math.isfinite(self.tau_end) and self.tau_end >= 0):
            raise ParameterDomainError(f"sweep.tau_end must be finite and >= 0, got {self.tau_end!r}")
        object.__setattr__(self, "rho_grid", grid)

    def point_configs(self) -> List[SimConfig]:
        """One run configuration per (rho, strategy), in grid order"""
        return [
            replace(self.base, rho=rho, strategy=strategy, tau_end=self.tau_end)
            for rho in self.rho_grid
            for strategy in self.strategies
        ]


@dataclass
class ComparisonLeg:
    """One strategy of a paired comparison and its moment trajectory"""

    strategy: ControlStrategy
    series: MomentSeries


@dataclass
class RelaxationResult:
    """Measured relaxation towards v_d against its analytic and ODE solutions"""

    measured: MomentSeries
    closed_form: np.ndarray
    ode: np.ndarray
    max_rel_error: float
    monokinetic: bool

    @property
    def rel_errors(self) -> np.ndarray:
        return np.abs(self.measured.V - self.closed_form) / np.maximum(np.abs(self.closed_form), 1e-300)

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= RELAX_TOLERANCE


def _map_ordered(func: Callable, items: Sequence, workers: int, progress: bool, desc: str) -> list:
    """Apply func to items, optionally across processes, keeping input order"""
    with tqdm(total=len(items), desc=desc, disable=not progress, unit="run") as bar:
        if workers <= 1 or len(items) <= 1:
            results = []
            for item in items:
                results.append(func(item))
                bar.update(1)
            return results
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = []
            for result in pool.map(func, items):
                results.append(result)
                bar.update(1)
            return results


def diagram_point(cfg: SimConfig) -> DiagramRow:
    """Run cfg to its horizon and summarise the steady state"""
    try:
        series = run(cfg, snapshot_taus=()).series
        steady = steady_state(series)
    except Exception as exc:
        raise RunError(f"sweep point rho={cfg.rho!r} strategy={cfg.strategy.describe()}: {exc}") from exc
    LOG.debug(f"🧪 Experiments: steady state rho={cfg.rho!r} {cfg.strategy.describe()} "
              f"V={steady.V!r} variance={steady.reported_var!r}")
    return DiagramRow(
        rho=cfg.rho,
        strategy=cfg.strategy.tag,
        nu0=cfg.strategy.nu0_or_inf,
        V=steady.V,
        flux=flux(steady, cfg.rho),
        var=steady.var,
    )


def fundamental_diagram(spec: SweepSpec, workers: int = 1, progress: bool = False) -> List[DiagramRow]:
    """
    Steady mean speed, flux and variance for every (rho, strategy)

    Every point reuses the base seed, so at a given density all strategies
    see the same initial ensemble and the same interaction draws.

    Returns:
        Rows sorted by (rho, strategy, nu0)
    """
    configs = spec.point_configs()
    LOG.info(f"🧪 Experiments: fundamental diagram over {len(spec.rho_grid)} densities, "
             f"{len(spec.strategies)} strategies, {workers} worker(s)")
    rows = _map_ordered(diagram_point, configs, workers, progress, "diagram")
    return sorted(rows, key=lambda row: row.sort_key)


def comparison_strategy(kind: StrategyKind, nu0: float, vd: Optional[DesiredSpeedSpec] = None) -> ControlStrategy:
    """Controlled strategy of the given kind for a comparison leg"""
    if kind is StrategyKind.VARIANCE:
        return ControlStrategy.variance(nu0)
    if kind is StrategyKind.DESIRED:
        return ControlStrategy.desired(nu0, vd)
    raise ParameterDomainError("comparison legs need a controlled strategy (variance or desired)")


def variance_comparison(base: SimConfig, nu0_list: Iterable[float],
                        kind: StrategyKind = StrategyKind.VARIANCE,
                        vd: Optional[DesiredSpeedSpec] = None) -> List[ComparisonLeg]:
    """
    Unconstrained trajectory followed by one controlled leg per nu0

    All legs run in lock step with common random numbers. Desired-speed legs
    target vd when given, else the base strategy's target when it is a
    desired-speed strategy, else v_d = 1 - rho.
    """
    if vd is None and base.strategy.kind is StrategyKind.DESIRED:
        vd = base.strategy.vd
    strategies = [ControlStrategy.unconstrained()]
    strategies += [comparison_strategy(kind, float(nu0), vd) for nu0 in nu0_list]
    configs = [replace(base, strategy=strategy) for strategy in strategies]
    LOG.info(f"🧪 Experiments: paired comparison rho={base.rho!r} legs={[s.describe() for s in strategies]}")
    legs = paired_runs(configs)
    return [ComparisonLeg(strategy, series) for strategy, series in zip(strategies, legs)]


def distribution_evolution(cfg: SimConfig, n_bins: int, tau_grid: Sequence[float]) -> HistogramGrid:
    """Histograms of the speed distribution at each kinetic time of tau_grid"""
    grid = [float(t) for t in tau_grid]
    if not grid:
        raise ParameterDomainError("tau grid is empty")
    if grid[0] < 0 or grid != sorted(grid):
        raise ParameterDomainError("tau grid must be sorted and non-negative")
    horizon = replace(cfg, tau_end=grid[-1])
    snapshots = run(horizon, snapshot_taus=grid).snapshots
    by_step = {ens.steps: ens for ens in snapshots}
    slices = [
        histogram(by_step[min(steps_to_reach(t, cfg.scaling.dtau), horizon.n_steps)], n_bins)
        for t in grid
    ]
    return stack_histograms(slices)


def relaxation_config(v0: float, vd: float, rho: float, nu0: float, epsilon: float, tau_end: float,
                      n_particles: int = 100, seed: int = 0, sample_every: float = 0.05) -> SimConfig:
    """
    Monokinetic desired-speed run with every particle interacting each step

    dtau = 2 epsilon / rho gives p = 1; without traffic the dynamics are
    frozen and dtau = epsilon is used instead.
    """
    dtau = 2.0 * epsilon / rho if rho > 0 else epsilon
    return SimConfig(
        rho=rho,
        n_particles=n_particles,
        scaling=ScalingParams(epsilon=epsilon, dtau=dtau),
        strategy=ControlStrategy.desired(nu0, DesiredSpeedSpec(VdMode.CONSTANT, vd)),
        tau_end=tau_end,
        sample_stride=max(1, int(round(sample_every / dtau))),
        seed=seed,
        init=InitDist(InitKind.DIRAC, v0=v0),
    )


def relaxation_curve(taus: np.ndarray, v0: float, vd: float, rho: float, nu0: float) -> np.ndarray:
    """Closed-form mean speed vd + (v0 - vd) exp(-rho tau / (2 nu0))"""
    return vd + (v0 - vd) * np.exp(-rho * taus / (2.0 * nu0))


def relaxation_ode(taus: np.ndarray, v0: float, vd: float, rho: float, nu0: float) -> np.ndarray:
    """Numerical solution of dV/dtau = rho / (2 nu0) (vd - V), V(0) = v0"""
    rate = rho / (2.0 * nu0)
    if taus[-1] <= 0.0:
        return np.full(taus.shape, float(v0))
    solution = solve_ivp(lambda _, y: rate * (vd - y), (0.0, float(taus[-1])), [v0],
                         t_eval=taus, rtol=1e-10, atol=1e-12)
    return solution.y[0]


def relaxation_oracle(v0: float, vd: float, rho: float, nu0: float, epsilon: float, tau_end: float,
                      n_particles: int = 100, seed: int = 0, error_from: float = 0.1) -> RelaxationResult:
    """
    Compare the engine's mean speed with the analytic relaxation law

    Monokinetic data keep I = 0 throughout, so every interacting particle
    receives the same deterministic update. The maximum relative error is
    taken over samples with tau >= error_from.
    """
    cfg = relaxation_config(v0, vd, rho, nu0, epsilon, tau_end, n_particles, seed)
    result = run(cfg)
    measured = result.series
    monokinetic = all(bool(np.all(ens.speeds == ens.speeds[0])) for ens in result.snapshots)
    taus = measured.taus
    closed = relaxation_curve(taus, v0, vd, rho, nu0)
    ode = relaxation_ode(taus, v0, vd, rho, nu0)
    window = taus >= error_from
    errors = np.abs(measured.V - closed) / np.maximum(np.abs(closed), 1e-300)
    max_error = float(errors[window].max()) if window.any() else 0.0
    LOG.info(f"🧪 Experiments: relaxation max relative error {max_error:.3e} "
             f"(monokinetic={monokinetic}, {len(taus)} samples)")
    return RelaxationResult(measured, closed, ode, max_error, monokinetic)


def scaling_study(base: SimConfig, epsilons: Sequence[float]) -> List[MomentSeries]:
    """
    Same experiment at several epsilon with dtau = epsilon and nu0 fixed

    The sample stride is rescaled so that every series is sampled at the
    same kinetic times as the base configuration.
    """
    spacing = base.sample_stride * base.scaling.dtau
    series = []
    for eps in epsilons:
        cfg = replace(base, scaling=ScalingParams(epsilon=eps, dtau=eps),
                      sample_stride=max(1, int(round(spacing / eps))))
        series.append(run(cfg, snapshot_taus=()).series)
    return series


def default_workers() -> int:
    """Physical cores available for sweep points"""
    import psutil
    return max(1, psutil.cpu_count(logical=False) or 1)


def max_abs_gap(first: MomentSeries, second: MomentSeries, attr: str = "V") -> float:
    """Largest pointwise gap between two aligned series"""
    a, b = getattr(first, attr), getattr(second, attr)
    if a.shape != b.shape:
        raise ParameterDomainError("series are not aligned")
    return float(np.max(np.abs(a - b))) if a.size else 0.0


def nu0_label(nu0: float) -> str:
    return "inf" if math.isinf(nu0) else repr(float(nu0))
