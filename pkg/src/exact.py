"""Closed-form solution of the underdamped oscillator with its reservoir."""

import math
from dataclasses import dataclass
from typing import Iterable, List, Tuple

import numpy as np

from .core import DampedOscillatorParams, State, SystemSpec
from .errors import RegimeError, UnsupportedSystemError


@dataclass(frozen=True)
class DhoExactSolution:
    """Exact trajectory of q'' + b q' + k q = 0 with b^2 < 4k.

    q(t) = exp(-b t / 2) (A cos(omega t) + B sin(omega t)), and the reservoir
    is recovered from conservation of K: w(t) = w0 + H(0) - H(t).

    Attributes:
        q0, p0, w0: Initial state at t0
        b, k: Oscillator parameters
        t0: Initial time
    """

    q0: float
    p0: float
    b: float = 0.1
    k: float = 1.0
    w0: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if self.k <= 0.0 or self.b < 0.0:
            raise RegimeError(f"Need b >= 0 and k > 0, got b={self.b}, k={self.k}")
        if self.b * self.b >= 4.0 * self.k:
            raise RegimeError(
                f"Closed form requires an underdamped oscillator (b^2 < 4k), got b={self.b}, k={self.k}"
            )

    @classmethod
    def from_state(cls, initial: State, params: DampedOscillatorParams) -> "DhoExactSolution":
        return cls(initial.q, initial.p, params.b, params.k, initial.w, initial.t)

    @classmethod
    def for_system(cls, initial: State, sys: SystemSpec) -> "DhoExactSolution":
        if not sys.is_damped_oscillator():
            raise UnsupportedSystemError(
                f"No closed-form solution for system '{sys.name}'"
            )
        return cls.from_state(initial, sys.params)

    @property
    def omega(self) -> float:
        return math.sqrt(self.k - 0.25 * self.b * self.b)

    @property
    def A(self) -> float:
        return self.q0

    @property
    def B(self) -> float:
        return (self.p0 + 0.5 * self.b * self.q0) / self.omega

    @property
    def K0(self) -> float:
        return 0.5 * self.p0 * self.p0 + 0.5 * self.k * self.q0 * self.q0 + self.w0

    def evaluate(self, times) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Vectorized (q, p, w) at the given times."""
        tau = np.asarray(times, dtype=float) - self.t0
        omega, a, b_mode = self.omega, self.A, self.B
        decay = np.exp(-0.5 * self.b * tau)
        cos, sin = np.cos(omega * tau), np.sin(omega * tau)

        q = decay * (a * cos + b_mode * sin)
        p = decay * (
            (b_mode * omega - 0.5 * self.b * a) * cos
            - (a * omega + 0.5 * self.b * b_mode) * sin
        )
        w = self.K0 - 0.5 * p * p - 0.5 * self.k * q * q
        return q, p, w


def exact_state(sol: DhoExactSolution, t: float) -> State:
    """Exact augmented state at time t."""
    if not math.isfinite(t):
        raise ValueError(f"Time must be finite, got {t}")
    q, p, w = sol.evaluate(t)
    return _state_at(sol, t, float(q), float(p), float(w))


def _state_at(sol: DhoExactSolution, t: float, q: float, p: float, w: float) -> State:
    if t == sol.t0:
        # exact initial condition rather than K0 - H(0) rounding
        return State(t, sol.q0, sol.p0, sol.w0)
    return State(t, q, p, w)


def exact_trajectory(sol: DhoExactSolution, times: Iterable[float]) -> List[State]:
    times = np.asarray(list(times), dtype=float)
    q, p, w = sol.evaluate(times)
    return [
        _state_at(sol, float(t), float(qi), float(pi), float(wi))
        for t, qi, pi, wi in zip(times, q, p, w)
    ]
