"""
Interaction kernel for kitsim - microscopic follow-the-leader primitives

A follower travelling at speed v meets a leader travelling at speed w on a
road of density rho. The follower accelerates when slower than the leader
and brakes towards a fraction of the leader's speed when faster. The leader
never reacts (interactions are anisotropic).

Features:
- Acceleration probability P(rho) = 1 - rho**gamma
- Interaction function I(v, w; rho) with acceleration and braking branches
- Unconstrained binary update v' = v + dt * I(v, w; rho)
- Round-off saturation that refuses to hide genuine bound violations

Speeds may be scalars or numpy arrays; array inputs broadcast elementwise.
"""

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import BoundViolationError, ParameterDomainError

LOG = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# Largest excursion outside [0, 1] that is treated as floating-point noise
ROUND_OFF = 1e-12

DEFAULT_GAMMA = 1.0
DEFAULT_DELTA_V = 0.2


@dataclass(frozen=True)
class KernelParams:
    """Constants of the interaction function"""

    gamma: float = DEFAULT_GAMMA  # exponent in P(rho)
    delta_v: float = DEFAULT_DELTA_V  # speed increment when accelerating

    def __post_init__(self):
        check_positive("gamma", self.gamma)
        check_positive("delta_v", self.delta_v)


def check_positive(name: str, value: float) -> None:
    """Raise unless value is a finite number > 0"""
    if not (np.isfinite(value) and value > 0):
        raise ParameterDomainError(f"{name} must be > 0, got {value!r}")


def check_unit(name: str, value: ArrayLike) -> None:
    """Raise unless every entry of value lies in [0, 1]"""
    arr = np.asarray(value, dtype=float)
    if arr.size == 0:
        return
    if np.isnan(arr).any() or arr.min() < 0.0 or arr.max() > 1.0:
        shown = float(arr) if arr.ndim == 0 else f"[{arr.min()!r}, {arr.max()!r}]"
        raise ParameterDomainError(f"{name} must lie in [0, 1], got {shown}")


def check_time_step(dt: float) -> None:
    """Bound preservation is only guaranteed for 0 < dt <= 1"""
    if not (np.isfinite(dt) and 0.0 < dt <= 1.0):
        raise ParameterDomainError(f"dt must satisfy 0 < dt <= 1, got {dt!r}")


def as_output(value: ArrayLike) -> ArrayLike:
    """Return plain floats for scalar results, arrays otherwise"""
    if np.ndim(value) == 0:
        return float(value)
    return value


def saturate(values: ArrayLike, what: str = "speed") -> ArrayLike:
    """
    Clip values into [0, 1], absorbing round-off only

    Raises:
        BoundViolationError: if any value lies further than ROUND_OFF outside
    """
    arr = np.asarray(values, dtype=float)
    if arr.size:
        low, high = arr.min(), arr.max()
        if low < -ROUND_OFF or high > 1.0 + ROUND_OFF or np.isnan(low) or np.isnan(high):
            raise BoundViolationError(
                f"{what} left [0, 1]: range [{low!r}, {high!r}] exceeds round-off tolerance {ROUND_OFF}"
            )
    return as_output(np.clip(arr, 0.0, 1.0))


def acceleration_probability(rho: float, gamma: float) -> float:
    """
    Probability of accelerating on a road of density rho

    Returns:
        1 - rho**gamma, in [0, 1] and non-increasing in rho
    """
    check_unit("rho", rho)
    check_positive("gamma", gamma)
    return float(1.0 - float(rho) ** gamma)


def raw_interaction(v: ArrayLike, w: ArrayLike, p_acc: float, delta_v: float) -> np.ndarray:
    """
    Interaction function without argument checks

    Used on the hot path by the control laws and the particle engine once
    their inputs have been validated. I(v, v) = 0 keeps monokinetic states
    exactly stationary.
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    accelerate = p_acc * (np.minimum(v + delta_v, 1.0) - v)
    brake = (1.0 - p_acc) * (p_acc * w - v)
    return np.where(v < w, accelerate, np.where(v > w, brake, 0.0))


def interaction_function(v: ArrayLike, w: ArrayLike, rho: float, kp: KernelParams) -> ArrayLike:
    """
    Follower response I(v, w; rho) to its leader

    Args:
        v: follower speed(s) in [0, 1]
        w: leader speed(s) in [0, 1]
        rho: road density in [0, 1]
        kp: kernel constants

    Returns:
        P (min(v + dv, 1) - v) if v < w, (1 - P)(P w - v) if v > w, 0 if v == w
    """
    check_unit("v", v)
    check_unit("w", w)
    p_acc = acceleration_probability(rho, kp.gamma)
    return as_output(raw_interaction(v, w, p_acc, kp.delta_v))


def unconstrained_update(v: ArrayLike, w: ArrayLike, dt: float, rho: float, kp: KernelParams) -> ArrayLike:
    """Post-interaction follower speed v' = v + dt I(v, w; rho); the leader keeps w"""
    check_unit("v", v)
    check_unit("w", w)
    check_time_step(dt)
    p_acc = acceleration_probability(rho, kp.gamma)
    updated = np.asarray(v, dtype=float) + dt * raw_interaction(v, w, p_acc, kp.delta_v)
    return saturate(updated, "unconstrained update")
