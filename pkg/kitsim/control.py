"""
Control laws for kitsim - closed-form receding-horizon feedback

A driver-assist car adds a control u to the follower's acceleration. With a
horizon of one binary interaction and a quadratic penalisation nu u^2 the
optimal u is available in feedback form, so nothing is optimised at runtime.

Strategies:
- none: plain follow-the-leader dynamics
- variance: penalise the binary variance (w - v)^2, pulling the follower
  towards its leader
- desired: penalise (v_d - v)^2, pulling the follower towards a target speed
  that is either constant or v_d(rho) = 1 - rho

The fused constrained updates below are what the particle engine applies;
the standalone feedback values exist for inspection and tests.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from .errors import ParameterDomainError
from .kernel import (
    ArrayLike,
    KernelParams,
    acceleration_probability,
    as_output,
    check_time_step,
    check_unit,
    raw_interaction,
    saturate,
)

LOG = logging.getLogger(__name__)


class StrategyKind(Enum):
    """Which cost the binary control minimises"""
    NONE = "none"
    VARIANCE = "variance"
    DESIRED = "desired"

    @classmethod
    def parse(cls, text: str) -> "StrategyKind":
        """Accept the short names plus the long aliases used in reports"""
        aliases = {"binary_variance": "variance", "desired_speed": "desired", "unconstrained": "none"}
        key = aliases.get(text.strip().lower(), text.strip().lower())
        try:
            return cls(key)
        except ValueError:
            raise ParameterDomainError(
                f"unknown control kind {text!r} (expected none, variance or desired)"
            ) from None


class VdMode(Enum):
    """How the desired speed is obtained"""
    CONSTANT = "constant"
    LINEAR_CONGESTION = "linear_congestion"


@dataclass(frozen=True)
class DesiredSpeedSpec:
    """Target speed: a constant, or 1 - rho"""

    mode: VdMode = VdMode.LINEAR_CONGESTION
    value: Optional[float] = None

    def __post_init__(self):
        if self.mode is VdMode.CONSTANT:
            if self.value is None:
                raise ParameterDomainError("a constant desired speed needs a value")
            check_unit("vd", self.value)

    def describe(self) -> str:
        if self.mode is VdMode.CONSTANT:
            return f"{self.value!r}"
        return "1-rho"


@dataclass(frozen=True)
class ControlStrategy:
    """
    Tagged strategy choice

    nu0 is the penalisation at the kinetic scale; the binary penalisation is
    nu = nu0 * epsilon. An infinite nu0 is accepted and reduces every
    strategy to the unconstrained dynamics.
    """

    kind: StrategyKind = StrategyKind.NONE
    nu0: Optional[float] = None
    vd: Optional[DesiredSpeedSpec] = None

    def __post_init__(self):
        if self.kind is StrategyKind.NONE:
            if self.nu0 is not None or self.vd is not None:
                raise ParameterDomainError("strategy 'none' takes neither nu0 nor vd")
            return
        if self.nu0 is None:
            raise ParameterDomainError(f"strategy {self.kind.value!r} requires nu0")
        check_penalization("nu0", self.nu0)
        if self.kind is StrategyKind.DESIRED and self.vd is None:
            raise ParameterDomainError("strategy 'desired' requires a desired speed spec")
        if self.kind is StrategyKind.VARIANCE and self.vd is not None:
            raise ParameterDomainError("strategy 'variance' takes no desired speed")

    @classmethod
    def unconstrained(cls) -> "ControlStrategy":
        return cls()

    @classmethod
    def variance(cls, nu0: float) -> "ControlStrategy":
        return cls(StrategyKind.VARIANCE, nu0=nu0)

    @classmethod
    def desired(cls, nu0: float, vd: Optional[DesiredSpeedSpec] = None) -> "ControlStrategy":
        return cls(StrategyKind.DESIRED, nu0=nu0, vd=vd or DesiredSpeedSpec())

    @property
    def tag(self) -> str:
        return self.kind.value

    @property
    def nu0_or_inf(self) -> float:
        """Penalisation with the unconstrained dynamics encoded as +inf"""
        return math.inf if self.nu0 is None else self.nu0

    def describe(self) -> str:
        if self.kind is StrategyKind.NONE:
            return "none"
        text = f"{self.kind.value}(nu0={self.nu0!r}"
        if self.vd is not None:
            text += f", vd={self.vd.describe()}"
        return text + ")"


def check_penalization(name: str, nu: float) -> None:
    """Penalisations must be > 0; +inf stands for 'no control'"""
    if nu is None or math.isnan(nu) or nu <= 0:
        raise ParameterDomainError(f"{name} must be > 0, got {nu!r}")


def feedback_coefficients(dt: float, nu: float) -> Tuple[float, float, float]:
    """
    Coefficients of the feedback law for one interaction of length dt

    Returns:
        (alpha, beta, gain) with alpha = nu dt/(nu + dt^2) weighting I,
        beta = dt^2/(nu + dt^2) weighting the gap to the target and
        gain = dt/(nu + dt^2) so that u = gain * gap - beta * I
    """
    if math.isinf(nu):
        return dt, 0.0, 0.0
    denom = nu + dt * dt
    return nu * dt / denom, dt * dt / denom, dt / denom


def resolve_vd(spec: DesiredSpeedSpec, rho: float) -> float:
    """Desired speed for a road of density rho"""
    if spec.mode is VdMode.CONSTANT:
        return float(spec.value)
    check_unit("rho", rho)
    return float(1.0 - rho)


def _checked(v, w, dt, nu, rho, kp) -> float:
    check_unit("v", v)
    check_unit("w", w)
    check_time_step(dt)
    check_penalization("nu", nu)
    return acceleration_probability(rho, kp.gamma)


def _feedback(v, target, w, dt, nu, p_acc, kp) -> np.ndarray:
    _, beta, gain = feedback_coefficients(dt, nu)
    v = np.asarray(v, dtype=float)
    return gain * (np.asarray(target, dtype=float) - v) - beta * raw_interaction(v, w, p_acc, kp.delta_v)


def _constrained(v, target, w, dt, nu, p_acc, kp) -> np.ndarray:
    alpha, beta, _ = feedback_coefficients(dt, nu)
    v = np.asarray(v, dtype=float)
    return v + alpha * raw_interaction(v, w, p_acc, kp.delta_v) + beta * (np.asarray(target, dtype=float) - v)


def variance_feedback(v: ArrayLike, w: ArrayLike, dt: float, nu: float, rho: float, kp: KernelParams) -> ArrayLike:
    """Control u minimising the binary variance over one interaction"""
    p_acc = _checked(v, w, dt, nu, rho, kp)
    return as_output(_feedback(v, w, w, dt, nu, p_acc, kp))


def desired_feedback(v: ArrayLike, vd: float, w: ArrayLike, dt: float, nu: float, rho: float,
                     kp: KernelParams) -> ArrayLike:
    """Control u minimising the gap to the desired speed over one interaction"""
    check_unit("vd", vd)
    p_acc = _checked(v, w, dt, nu, rho, kp)
    return as_output(_feedback(v, vd, w, dt, nu, p_acc, kp))


def constrained_update_variance(v: ArrayLike, w: ArrayLike, dt: float, nu: float, rho: float,
                                kp: KernelParams) -> ArrayLike:
    """Follower speed after one interaction under binary variance control"""
    p_acc = _checked(v, w, dt, nu, rho, kp)
    return saturate(_constrained(v, w, w, dt, nu, p_acc, kp), "variance-constrained update")


def constrained_update_desired(v: ArrayLike, w: ArrayLike, vd: float, dt: float, nu: float, rho: float,
                               kp: KernelParams) -> ArrayLike:
    """Follower speed after one interaction under desired-speed control"""
    check_unit("vd", vd)
    p_acc = _checked(v, w, dt, nu, rho, kp)
    return saturate(_constrained(v, vd, w, dt, nu, p_acc, kp), "desired-constrained update")


class BinaryRule:
    """
    Pre-resolved interaction rule for one run

    All scalar parameters are validated once at construction; apply() then
    runs unchecked over whole arrays of followers and leaders, computing a
    single control value per interaction.
    """

    def __init__(self, strategy: ControlStrategy, rho: float, kp: KernelParams, dt: float, nu: Optional[float]):
        check_unit("rho", rho)
        check_time_step(dt)
        self.strategy = strategy
        self.kp = kp
        self.dt = dt
        self.p_acc = acceleration_probability(rho, kp.gamma)
        self.vd = None
        if strategy.kind is StrategyKind.NONE:
            self.alpha, self.beta = dt, 0.0
        else:
            check_penalization("nu", nu)
            self.alpha, self.beta, _ = feedback_coefficients(dt, nu)
            if strategy.kind is StrategyKind.DESIRED:
                self.vd = resolve_vd(strategy.vd, rho)
        LOG.debug(f"🎛️ Control: rule {strategy.describe()} alpha={self.alpha!r} beta={self.beta!r} vd={self.vd!r}")

    def apply(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        """Post-interaction follower speeds; leaders are only read"""
        interaction = raw_interaction(v, w, self.p_acc, self.kp.delta_v)
        updated = v + self.alpha * interaction
        if self.strategy.kind is StrategyKind.VARIANCE:
            updated = updated + self.beta * (w - v)
        elif self.strategy.kind is StrategyKind.DESIRED:
            updated = updated + self.beta * (self.vd - v)
        return np.asarray(saturate(updated, f"{self.strategy.tag} update"))
