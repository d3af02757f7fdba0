"""
Observables for kitsim - moments, flux and binned speed densities

Features:
- Mean speed V, energy E and variance E - V^2 of an ensemble
- Macroscopic flux rho * V
- Equal-width histograms on [0, 1] normalised to unit integral
- Moment rates of the quasi-invariant limit evaluated on an ensemble
- Trailing-window steady-state estimator for moment trajectories
"""

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterator, List, Optional

import numpy as np

from .control import ControlStrategy, StrategyKind, resolve_vd
from .errors import ParameterDomainError
from .kernel import KernelParams, acceleration_probability, check_unit

if TYPE_CHECKING:
    from .engine import Ensemble, SimConfig

LOG = logging.getLogger(__name__)

# Fraction of trailing samples averaged by steady_state()
STEADY_FRACTION = 0.1


@dataclass(frozen=True)
class MomentSample:
    """Moments of the speed distribution at kinetic time tau"""

    tau: float
    V: float
    E: float
    var: float  # raw E - V^2, may dip below zero by round-off

    @property
    def reported_var(self) -> float:
        """Variance with round-off negatives clamped to zero"""
        return max(self.var, 0.0)


@dataclass
class MomentSeries:
    """Sampled trajectory of the moments; taus strictly increase"""

    samples: List[MomentSample] = field(default_factory=list)
    config: Optional["SimConfig"] = None
    label: str = ""

    def append(self, sample: MomentSample) -> None:
        if self.samples and sample.tau <= self.samples[-1].tau:
            raise ParameterDomainError(
                f"moment samples must have increasing tau ({sample.tau!r} after {self.samples[-1].tau!r})"
            )
        self.samples.append(sample)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[MomentSample]:
        return iter(self.samples)

    @property
    def taus(self) -> np.ndarray:
        return np.array([s.tau for s in self.samples])

    @property
    def V(self) -> np.ndarray:
        return np.array([s.V for s in self.samples])

    @property
    def E(self) -> np.ndarray:
        return np.array([s.E for s in self.samples])

    @property
    def var(self) -> np.ndarray:
        return np.array([s.var for s in self.samples])


@dataclass
class HistogramGrid:
    """Binned speed densities over time; each row integrates to one"""

    taus: np.ndarray
    edges: np.ndarray
    density: np.ndarray  # shape (len(taus), n_bins)

    @property
    def n_bins(self) -> int:
        return int(self.edges.shape[0] - 1)

    @property
    def bin_width(self) -> float:
        return 1.0 / self.n_bins

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.edges[:-1] + self.edges[1:])

    def integrals(self) -> np.ndarray:
        """Integral of each time slice (should be 1)"""
        return self.density.sum(axis=1) * self.bin_width

    def slice_moments(self, row: int) -> MomentSample:
        """Moments of one slice from bin midpoints"""
        weights = self.density[row] * self.bin_width
        mean = float(np.dot(weights, self.centers))
        energy = float(np.dot(weights, self.centers ** 2))
        return MomentSample(float(self.taus[row]), mean, energy, energy - mean * mean)


@dataclass(frozen=True)
class MomentRates:
    """Time derivatives of V and E in the quasi-invariant limit"""

    dV: float
    dE: float


def moments(ens: "Ensemble") -> MomentSample:
    """Empirical mean speed, energy and variance (E - V^2) of an ensemble"""
    speeds = ens.speeds
    if speeds.size == 0:
        raise ParameterDomainError("moments of an empty ensemble are undefined")
    mean = float(np.mean(speeds))
    energy = float(np.mean(speeds * speeds))
    return MomentSample(float(ens.tau), mean, energy, energy - mean * mean)


def flux(sample: MomentSample, rho: float) -> float:
    """Macroscopic flux q = rho * V"""
    check_unit("rho", rho)
    return float(rho * sample.V)


def _bin_densities(speeds: np.ndarray, n_bins: int) -> np.ndarray:
    # floor(v * n) puts v = 0.3 in [0.3, 0.4) for ten bins; v = 1 joins the last bin
    index = np.minimum((speeds * n_bins).astype(np.int64), n_bins - 1)
    counts = np.bincount(index, minlength=n_bins)
    return counts * (n_bins / speeds.size)


def histogram(ens: "Ensemble", n_bins: int) -> HistogramGrid:
    """Single-slice histogram of ens with n_bins equal bins on [0, 1]"""
    if int(n_bins) != n_bins or n_bins < 1:
        raise ParameterDomainError(f"n_bins must be an integer >= 1, got {n_bins!r}")
    if ens.speeds.size == 0:
        raise ParameterDomainError("histogram of an empty ensemble is undefined")
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    density = _bin_densities(ens.speeds, n_bins)[np.newaxis, :]
    return HistogramGrid(np.array([float(ens.tau)]), edges, density)


def stack_histograms(slices: List[HistogramGrid]) -> HistogramGrid:
    """Concatenate single-slice histograms sharing the same bins"""
    if not slices:
        raise ParameterDomainError("cannot stack an empty list of histograms")
    return HistogramGrid(
        np.concatenate([s.taus for s in slices]),
        slices[0].edges,
        np.vstack([s.density for s in slices]),
    )


def moment_rates(ens: "Ensemble", rho: float, kp: KernelParams,
                 strategy: Optional[ControlStrategy] = None) -> MomentRates:
    """
    Limit moment rates dV/dtau and dE/dtau for the current ensemble

    The interaction averages run over all ordered (follower, leader) pairs
    with distinct indices and are computed exactly after sorting, in
    O(N log N). Control strategies add their closed-form corrections.
    """
    speeds = np.asarray(ens.speeds, dtype=float)
    n = speeds.size
    if n < 2:
        raise ParameterDomainError("moment rates need at least two particles")
    p_acc = acceleration_probability(rho, kp.gamma)
    ordered = np.sort(speeds)
    prefix = np.concatenate([[0.0], np.cumsum(ordered)])
    slower = np.searchsorted(ordered, speeds, side="left")
    faster = n - np.searchsorted(ordered, speeds, side="right")
    # Row sums over leaders of I(v_i, w_j); equal speeds contribute nothing
    row = (p_acc * (np.minimum(speeds + kp.delta_v, 1.0) - speeds) * faster
           + (1.0 - p_acc) * (p_acc * prefix[slower] - speeds * slower))
    pairs = n * (n - 1)
    d_mean = 0.5 * rho * float(row.sum()) / pairs
    d_energy = rho * float(np.dot(speeds, row)) / pairs

    strategy = strategy or ControlStrategy()
    if strategy.kind is not StrategyKind.NONE and math.isfinite(strategy.nu0):
        mean = float(np.mean(speeds))
        energy = float(np.mean(speeds * speeds))
        if strategy.kind is StrategyKind.VARIANCE:
            d_energy -= rho / strategy.nu0 * (energy - mean * mean)
        else:
            vd = resolve_vd(strategy.vd, rho)
            d_mean += rho / (2.0 * strategy.nu0) * (vd - mean)
            d_energy -= rho / strategy.nu0 * (energy - vd * mean)
    return MomentRates(d_mean, d_energy)


def steady_state(series: MomentSeries, fraction: float = STEADY_FRACTION) -> MomentSample:
    """Average of the trailing fraction of samples (at least one sample)"""
    if len(series) == 0:
        raise ParameterDomainError("steady state of an empty series is undefined")
    if not 0.0 < fraction <= 1.0:
        raise ParameterDomainError(f"steady-state fraction must lie in (0, 1], got {fraction!r}")
    count = max(1, int(math.ceil(fraction * len(series))))
    window = series.samples[-count:]
    return MomentSample(
        window[-1].tau,
        float(np.mean([s.V for s in window])),
        float(np.mean([s.E for s in window])),
        float(np.mean([s.var for s in window])),
    )
