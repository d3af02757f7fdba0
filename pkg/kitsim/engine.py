"""
Particle engine for kitsim - direct Monte Carlo for the Boltzmann-type model

The speed distribution is represented by N particles. On the kinetic time
scale tau = epsilon * t each particle acts as a follower with probability
p = rho * dtau / (2 epsilon) per step and then interacts with a leader chosen
uniformly among the other N - 1 particles. Binary interactions use
dt = epsilon and nu = nu0 * epsilon (quasi-invariant scaling).

Features:
- Seeded, counter-based random substreams (init, flags, partners)
- Synchronous sweep: leaders are read from the pre-step state
- Paired runs sharing the initial ensemble and every per-step draw
  (common random numbers) so strategy differences isolate the control
- Mass conservation: N never changes during a run
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .control import BinaryRule, ControlStrategy
from .errors import ParameterDomainError, UsageError
from .kernel import KernelParams, check_positive, check_unit
from .observables import MomentSeries, moments

LOG = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-2
DEFAULT_N_PARTICLES = 10_000
DEFAULT_TAU_END = 10.0
DEFAULT_SAMPLE_STRIDE = 10

# Substream identifiers; a master seed spawns one independent generator each
STREAM_IDS = {"init": 0, "flags": 1, "partners": 2}

# Tolerated round-off in p = rho * dtau / (2 epsilon) when dtau is chosen so that p = 1
RATE_SLACK = 1e-12

# Slack used when converting tau values into step counts
_STEP_SLACK = 1e-9


class InitKind(Enum):
    """Initial speed distribution families"""
    UNIFORM01 = "uniform01"
    DIRAC = "dirac"
    TRUNCATED_GAUSSIAN = "truncated_gaussian"


@dataclass(frozen=True)
class InitDist:
    """Initial distribution; every sample lies in [0, 1]"""

    kind: InitKind = InitKind.UNIFORM01
    v0: Optional[float] = None
    mean: Optional[float] = None
    stddev: Optional[float] = None

    def __post_init__(self):
        if self.kind is InitKind.DIRAC:
            if self.v0 is None:
                raise ParameterDomainError("dirac initial data needs init.v0")
            check_unit("init.v0", self.v0)
        elif self.kind is InitKind.TRUNCATED_GAUSSIAN:
            if self.mean is None or self.stddev is None:
                raise ParameterDomainError("truncated_gaussian initial data needs init.mean and init.stddev")
            check_unit("init.mean", self.mean)
            check_positive("init.stddev", self.stddev)

    def describe(self) -> str:
        if self.kind is InitKind.DIRAC:
            return f"dirac({self.v0!r})"
        if self.kind is InitKind.TRUNCATED_GAUSSIAN:
            return f"truncated_gaussian({self.mean!r}, {self.stddev!r})"
        return self.kind.value


@dataclass(frozen=True)
class ScalingParams:
    """Quasi-invariant scaling: binary dt = epsilon, nu = nu0 * epsilon"""

    epsilon: float = DEFAULT_EPSILON
    dtau: Optional[float] = None  # defaults to epsilon

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and 0.0 < self.epsilon <= 1.0):
            raise ParameterDomainError(f"epsilon must satisfy 0 < epsilon <= 1, got {self.epsilon!r}")
        if self.dtau is None:
            object.__setattr__(self, "dtau", self.epsilon)
        check_positive("dtau", self.dtau)


@dataclass(frozen=True)
class SimConfig:
    """Everything needed to reproduce one run bit for bit"""

    rho: float
    n_particles: int = DEFAULT_N_PARTICLES
    kernel: KernelParams = field(default_factory=KernelParams)
    scaling: ScalingParams = field(default_factory=ScalingParams)
    strategy: ControlStrategy = field(default_factory=ControlStrategy)
    tau_end: float = DEFAULT_TAU_END
    sample_stride: int = DEFAULT_SAMPLE_STRIDE
    seed: int = 0
    init: InitDist = field(default_factory=InitDist)

    def __post_init__(self):
        check_unit("rho", self.rho)
        if int(self.n_particles) != self.n_particles or self.n_particles < 2:
            raise ParameterDomainError(f"n_particles must be an integer >= 2, got {self.n_particles!r}")
        if not (math.isfinite(self.tau_end) and self.tau_end >= 0):
            raise ParameterDomainError(f"tau_end must be >= 0, got {self.tau_end!r}")
        if int(self.sample_stride) != self.sample_stride or self.sample_stride < 1:
            raise ParameterDomainError(f"sample_stride must be an integer >= 1, got {self.sample_stride!r}")
        if int(self.seed) != self.seed or not 0 <= self.seed < 2 ** 64:
            raise ParameterDomainError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")

    @property
    def interaction_probability(self) -> float:
        """Per-particle, per-step probability of acting as a follower"""
        return self.rho * self.scaling.dtau / (2.0 * self.scaling.epsilon)

    @property
    def binary_nu(self) -> Optional[float]:
        """Binary penalisation nu = nu0 * epsilon (None without control)"""
        if self.strategy.nu0 is None:
            return None
        return self.strategy.nu0 * self.scaling.epsilon

    @property
    def n_steps(self) -> int:
        """Steps needed for tau to reach tau_end"""
        return steps_to_reach(self.tau_end, self.scaling.dtau)

    def check_rate(self) -> None:
        """Raise unless rho * dtau / (2 epsilon) <= 1"""
        p = self.interaction_probability
        if p > 1.0 + RATE_SLACK:
            raise ParameterDomainError(
                f"interaction probability rho*dtau/(2*epsilon) = {p!r} violates p <= 1 "
                f"(rho={self.rho!r}, dtau={self.scaling.dtau!r}, epsilon={self.scaling.epsilon!r})"
            )

    def describe(self) -> str:
        return (f"rho={self.rho!r} N={self.n_particles} strategy={self.strategy.describe()} "
                f"eps={self.scaling.epsilon!r} dtau={self.scaling.dtau!r} tau_end={self.tau_end!r} seed={self.seed}")


@dataclass
class Ensemble:
    """Particle representation of the speed distribution at kinetic time tau"""

    speeds: np.ndarray
    tau: float = 0.0
    steps: int = 0

    @property
    def n(self) -> int:
        return int(self.speeds.shape[0])

    def copy(self) -> "Ensemble":
        return Ensemble(self.speeds.copy(), self.tau, self.steps)


class RunResult(NamedTuple):
    """Moment trajectory plus the ensemble snapshots that were requested"""
    series: MomentSeries
    snapshots: List[Ensemble]


def steps_to_reach(tau: float, dtau: float) -> int:
    """Smallest step count k with k * dtau >= tau (up to round-off)"""
    if tau <= 0:
        return 0
    return int(math.ceil(tau / dtau - _STEP_SLACK))


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent counter-based generator for one named stream of a master seed"""
    sequence = np.random.SeedSequence(int(seed), spawn_key=(STREAM_IDS[name],))
    return np.random.Generator(np.random.Philox(sequence))


class RandomStreams:
    """The three substreams consumed by a run"""

    def __init__(self, seed: int):
        self.seed = seed
        self.init = substream(seed, "init")
        self.flags = substream(seed, "flags")
        self.partners = substream(seed, "partners")


def sample_initial_speeds(init: InitDist, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n speeds from the initial distribution"""
    if init.kind is InitKind.DIRAC:
        return np.full(n, float(init.v0))
    if init.kind is InitKind.UNIFORM01:
        return rng.random(n)
    # Rejection keeps the truncated gaussian exactly inside [0, 1]
    accepted = np.empty(0)
    while accepted.size < n:
        draws = rng.normal(init.mean, init.stddev, size=2 * (n - accepted.size) + 16)
        accepted = np.concatenate([accepted, draws[(draws >= 0.0) & (draws <= 1.0)]])
    return accepted[:n]


def init_ensemble(cfg: SimConfig, streams: Optional[RandomStreams] = None) -> Ensemble:
    """N speeds drawn from cfg.init using the seeded init stream, tau = 0"""
    streams = streams or RandomStreams(cfg.seed)
    speeds = sample_initial_speeds(cfg.init, cfg.n_particles, streams.init)
    LOG.debug(f"🚗 Engine: initial ensemble {cfg.init.describe()} N={cfg.n_particles} seed={cfg.seed}")
    return Ensemble(speeds, 0.0, 0)


def draw_interactions(streams: RandomStreams, n: int, p: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-step follower flags and leader choices

    Both arrays are drawn for every particle whatever the current state, so
    legs of a paired run consume their streams identically.

    Returns:
        (mask, partners) where mask[i] says whether i interacts and
        partners[i] != i is its leader
    """
    mask = streams.flags.random(n) < p
    offsets = streams.partners.integers(1, n, size=n)
    partners = (np.arange(n) + offsets) % n
    return mask, partners


def make_rule(cfg: SimConfig) -> BinaryRule:
    """Binary update rule for cfg under the quasi-invariant scaling"""
    return BinaryRule(cfg.strategy, cfg.rho, cfg.kernel, cfg.scaling.epsilon, cfg.binary_nu)


def apply_interactions(ens: Ensemble, mask: np.ndarray, partners: np.ndarray, rule: BinaryRule,
                       dtau: float) -> Ensemble:
    """Advance ens by one step using pre-drawn interaction decisions"""
    speeds = ens.speeds.copy()
    followers = np.flatnonzero(mask)
    if followers.size:
        # Leaders come from the pre-step state, never from this step's updates
        speeds[followers] = rule.apply(ens.speeds[followers], ens.speeds[partners[followers]])
    steps = ens.steps + 1
    return Ensemble(speeds, steps * dtau, steps)


def step(ens: Ensemble, cfg: SimConfig, streams: RandomStreams, rule: Optional[BinaryRule] = None) -> Ensemble:
    """One synchronous Monte Carlo sweep of length dtau"""
    cfg.check_rate()
    rule = rule or make_rule(cfg)
    mask, partners = draw_interactions(streams, ens.n, cfg.interaction_probability)
    return apply_interactions(ens, mask, partners, rule, cfg.scaling.dtau)


def _snapshot_steps(cfg: SimConfig, snapshot_taus: Optional[Sequence[float]]) -> Optional[set]:
    if snapshot_taus is None:
        return None
    return {min(steps_to_reach(t, cfg.scaling.dtau), cfg.n_steps) for t in snapshot_taus}


def _is_sample_step(k: int, cfg: SimConfig) -> bool:
    return k % cfg.sample_stride == 0 or k == cfg.n_steps


def run(cfg: SimConfig, snapshot_taus: Optional[Sequence[float]] = None) -> RunResult:
    """
    Integrate cfg from tau = 0 until tau >= tau_end

    Observables are recorded at step 0, every sample_stride steps and at the
    final step.

    Args:
        cfg: run configuration
        snapshot_taus: kinetic times at which to keep a copy of the ensemble
            (the first step reaching each time); None keeps one per sample

    Returns:
        RunResult(series, snapshots)
    """
    cfg.check_rate()
    streams = RandomStreams(cfg.seed)
    rule = make_rule(cfg)
    ens = init_ensemble(cfg, streams)
    wanted = _snapshot_steps(cfg, snapshot_taus)
    series = MomentSeries(config=cfg, label=cfg.strategy.describe())
    snapshots: List[Ensemble] = []
    LOG.info(f"🚗 Engine: run {cfg.describe()} ({cfg.n_steps} steps)")

    def record(current: Ensemble) -> None:
        k = current.steps
        if _is_sample_step(k, cfg):
            series.append(moments(current))
            if wanted is None:
                snapshots.append(current.copy())
        if wanted is not None and k in wanted:
            snapshots.append(current.copy())

    record(ens)
    p = cfg.interaction_probability
    for _ in range(cfg.n_steps):
        mask, partners = draw_interactions(streams, ens.n, p)
        ens = apply_interactions(ens, mask, partners, rule, cfg.scaling.dtau)
        record(ens)
    last = series.samples[-1]
    LOG.debug(f"🚗 Engine: finished at tau={ens.tau!r}, V={last.V!r}, variance={last.reported_var!r}")
    return RunResult(series, snapshots)


def check_paired(configs: Sequence[SimConfig]) -> None:
    """Raise unless all configs differ in strategy only"""
    if not configs:
        raise UsageError("a paired run needs at least one configuration")
    reference = replace(configs[0], strategy=ControlStrategy())
    for cfg in configs[1:]:
        if replace(cfg, strategy=ControlStrategy()) != reference:
            raise UsageError("paired runs must differ only in strategy (same seed, rho, scaling, N, init, ...)")


def paired_runs(configs: Sequence[SimConfig]) -> List[MomentSeries]:
    """
    Run several strategies in lock step with common random numbers

    All legs start from the same initial ensemble and use the same follower
    flags and leader choices at every step; the draws happen once and are
    reused by every leg.
    """
    check_paired(configs)
    base = configs[0]
    base.check_rate()
    streams = RandomStreams(base.seed)
    rules = [make_rule(cfg) for cfg in configs]
    start = init_ensemble(base, streams)
    ensembles = [start.copy() for _ in configs]
    legs = [MomentSeries(config=cfg, label=cfg.strategy.describe()) for cfg in configs]
    for leg, ens in zip(legs, ensembles):
        leg.append(moments(ens))
    LOG.info(f"🚗 Engine: paired run of {len(configs)} legs, {base.n_steps} steps")

    p = base.interaction_probability
    for _ in range(base.n_steps):
        mask, partners = draw_interactions(streams, base.n_particles, p)
        for i, rule in enumerate(rules):
            ensembles[i] = apply_interactions(ensembles[i], mask, partners, rule, base.scaling.dtau)
        if _is_sample_step(ensembles[0].steps, base):
            for leg, ens in zip(legs, ensembles):
                leg.append(moments(ens))
    return legs


def paired_run(cfg_a: SimConfig, cfg_b: SimConfig) -> Tuple[MomentSeries, MomentSeries]:
    """Two-leg paired run; see paired_runs"""
    first, second = paired_runs([cfg_a, cfg_b])
    return first, second
