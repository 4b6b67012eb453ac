"""One-step flows for the reservoir-augmented system.

Three schemes are provided:

- ``moddg``: the modified discrete gradient scheme. q, p and the reservoir w
  are advanced together so that K = p^2/2 + V(q) + w is preserved up to the
  fixed-point tolerance. An optional delta-series correction replaces the
  step h by h_eff = h (d1 + d2 h + d3 h^2 + d4 h^3), raising the consistency
  order of the q or p update for the damped oscillator. Over a trajectory
  the reservoir increments are summed with compensation, so K stays at
  rounding level for arbitrarily many steps.
- ``pqplf``: momentum-position-momentum leapfrog driven by the gradient of K,
  explicit for linear damping.
- ``erk4``: classical fourth-order Runge-Kutta on (q, p, w).
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .core import DampedOscillatorParams, State, SystemSpec, continuous_rhs
from .errors import (
    ConvergenceError,
    DivergenceError,
    UnsupportedSystemError,
)

logger = logging.getLogger(__name__)

_EPS = float(np.finfo(float).eps)

# Relative denominator thresholds used when a DeltaVariant leaves its guards unset
DEFAULT_GUARD_FACTOR = 1e-6
DEFAULT_D4_GUARD_FACTOR = 1e-2

# Largest h_eff / h the fixed-point iteration is trusted with
MAX_STEP_FACTOR = 2.0


class StepperConfig(BaseModel):
    """Time step and fixed-point solver settings."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    h: float = Field(0.01, gt=0.0)
    fp_tol: float = Field(1e-14, gt=0.0)
    fp_max_iter: int = Field(500, ge=1)

    def with_step(self, h: float) -> "StepperConfig":
        return self.model_copy(update={"h": h})


class DeltaTag(str, Enum):
    NONE = "none"
    Q3 = "q3"
    Q4 = "q4"
    P3 = "p3"
    P4 = "p4"


@dataclass(frozen=True)
class DeltaVariant:
    """Which delta-series correction modifies the step.

    Attributes:
        tag: Correction family and truncation order
        denominator_guard: Absolute threshold on the coefficient denominator
            below which the step falls back to the uncorrected scheme. None
            means 1e-6 * max(1, |q|, |p|) evaluated per step.
        d4_guard: Threshold below which q4/p4 drop d4 and keep d3. d4
            divides by the squared denominator and leaves the asymptotic
            range much earlier than d3. None means 1e-2 * max(1, |q|, |p|).
    """

    tag: DeltaTag = DeltaTag.NONE
    denominator_guard: Optional[float] = None
    d4_guard: Optional[float] = None

    @classmethod
    def parse(cls, text: str) -> "DeltaVariant":
        return cls(DeltaTag(text.strip().lower()))

    def with_guard(self, guard: Optional[float]) -> "DeltaVariant":
        return replace(self, denominator_guard=guard)

    @property
    def is_none(self) -> bool:
        return self.tag is DeltaTag.NONE

    @property
    def equation(self) -> Optional[str]:
        return None if self.is_none else self.tag.value[0]

    @property
    def order(self) -> int:
        return 2 if self.is_none else int(self.tag.value[1])


class DeltaCoefficients(NamedTuple):
    d1: float
    d2: float
    d3: float
    d4: float
    fallback: bool = False


BASE_COEFFICIENTS = DeltaCoefficients(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StepResult:
    """Outcome of one step.

    Attributes:
        state: The advanced point
        fp_iterations: Fixed-point iterations used (0 for explicit schemes)
        delta_factor: h_eff / h applied this step
        fallback: True when a delta term was dropped for this step
        w_increment: Unrounded reservoir change, for compensated summation
    """

    state: State
    fp_iterations: int = 0
    delta_factor: float = 1.0
    fallback: bool = False
    w_increment: Optional[float] = None


@dataclass
class ReservoirAccumulator:
    """Kahan sum of reservoir increments along a trajectory."""

    total: float
    comp: float = 0.0

    def add(self, increment: float) -> float:
        y = increment - self.comp
        t = self.total + y
        self.comp = (t - self.total) - y
        self.total = t
        return t


def derivative_tower(q: float, p: float, params: DampedOscillatorParams, order: int) -> np.ndarray:
    """Time derivatives of (q, p) along q' = p, p' = -k q - b p.

    Row n holds (q^(n), p^(n)), i.e. A^n x with A = [[0, 1], [-k, -b]].

    Args:
        q: Coordinate
        p: Momentum
        params: Oscillator parameters
        order: Highest derivative to compute

    Returns:
        Array of shape (order + 1, 2)
    """
    b, k = params.b, params.k
    tower = np.empty((order + 1, 2))
    tower[0] = q, p
    for n in range(order):
        qn, pn = tower[n]
        tower[n + 1] = pn, -k * qn - b * pn
    return tower


def delta_coefficients(
    q: float, p: float, params: DampedOscillatorParams, variant: DeltaVariant
) -> DeltaCoefficients:
    """Delta-series coefficients evaluated at (q, p).

    The q-family matches q+ - q = eta (p + p+) / 2 against the Taylor series of
    the exact flow, the p-family matches p+ - p = -eta (k (q + q+) + b (p + p+)) / 2.
    In both d1 = 1 and d2 = 0. With the tower p^(n):

        q-family: d3 = -p''/(12 p),        d4 = (-p'''/24 - p' d3 / 2) / p
        p-family: d3 = -p'''/(12 p'),      d4 = (p''''/24 + p'' d3 / 2) / (-p')

    d4 is evaluated with d3 substituted into a single fraction.

    Returns:
        The coefficients; the base set flagged as fallback when the
        denominator (p, or -p' = k q + b p) is below the guard, and d4 = 0
        flagged as fallback when it is below the d4 guard.
    """
    if variant.is_none:
        return BASE_COEFFICIENTS

    p0, p1, p2, p3, p4 = derivative_tower(q, p, params, 4)[:, 1]
    scale = max(1.0, abs(q), abs(p))
    guard = variant.denominator_guard
    if guard is None:
        guard = DEFAULT_GUARD_FACTOR * scale

    if variant.equation == "q":
        denominator, name = p0, "p"
    else:
        denominator, name = p1, "kq+bp"
    if abs(denominator) < guard:
        logger.debug("Delta guard hit: %s=%.3e below %.3e", name, abs(denominator), guard)
        return BASE_COEFFICIENTS._replace(fallback=True)

    if variant.equation == "q":
        d3 = -p2 / (12.0 * p0)
    else:
        d3 = -p3 / (12.0 * p1)
    if variant.order == 3:
        return DeltaCoefficients(1.0, 0.0, d3, 0.0)

    d4_guard = variant.d4_guard
    if d4_guard is None:
        d4_guard = DEFAULT_D4_GUARD_FACTOR * scale
    if abs(denominator) < d4_guard:
        logger.debug("d4 dropped: %s=%.3e below %.3e", name, abs(denominator), d4_guard)
        return DeltaCoefficients(1.0, 0.0, d3, 0.0, fallback=True)

    if variant.equation == "q":
        d4 = (p1 * p2 - p0 * p3) / (24.0 * p0 * p0)
    else:
        d4 = (p2 * p3 - p1 * p4) / (24.0 * p1 * p1)
    return DeltaCoefficients(1.0, 0.0, d3, d4)


def effective_step(h: float, coeffs: DeltaCoefficients) -> Tuple[float, bool]:
    """Truncated series h_eff = h (d1 + d2 h + d3 h^2 + d4 h^3).

    Returns:
        (h_eff, fallback); an h_eff outside (0, MAX_STEP_FACTOR h] is replaced by h
    """
    d1, d2, d3, d4 = coeffs[:4]
    h_eff = h * (d1 + h * (d2 + h * (d3 + h * d4)))
    if not np.isfinite(h_eff) or h_eff <= 0.0 or h_eff > MAX_STEP_FACTOR * h:
        logger.debug("Effective step %.3e out of range, using h=%.3e", h_eff, h)
        return h, True
    return h_eff, False


def discrete_gradient_solve(
    q: float,
    p: float,
    w: float,
    sys: SystemSpec,
    eta: float,
    fp_tol: float = 1e-14,
    fp_max_iter: int = 500,
) -> Tuple[float, float, float, int]:
    """Solve the modified discrete gradient equations for one step of size eta.

    The equations are

        (q+ - q) / eta = (p + p+) / 2
        (p+ - p) / eta = -[V(q+) - V(q)] / (q+ - q) - D-bar
        (w+ - w) / eta = D-bar (p + p+) / 2

    where the reservoir part of the K difference quotient in q reduces to
    D-bar. Any K(q, p, w) change telescopes to zero at the solution. eta may be
    negative, which runs the scheme backwards.

    The iteration is plain substitution on (q+, p+) seeded with an explicit
    Euler step and stops when the max-norm of successive iterates is within
    fp_tol or at the rounding floor of the iterates. The w equation is
    explicit once (q+, p+) are known; see reservoir_increment.

    Returns:
        (q+, p+, w+, iterations)

    Raises:
        ConvergenceError: Iteration cap reached
        DivergenceError: Iterates became non-finite
    """
    q_new, p_new, dw, iterations = _solve_with_increment(q, p, sys, eta, fp_tol, fp_max_iter)
    return q_new, p_new, w + dw, iterations


def reservoir_increment(q: float, p: float, q_new: float, p_new: float, sys: SystemSpec) -> float:
    """w+ - w for a solved step.

    At the solution eta D-bar (p + p+)/2 equals -[H(q+, p+) - H(q, p)], which
    is evaluated here from differences. K of the stored (rounded) q+, p+ then
    closes to rounding, independent of the solver residual. Without
    dissipation (D-bar = 0) the reservoir is left unchanged.
    """
    if sys.discrete_dissipation(q, q_new, p, p_new) == 0.0:
        return 0.0
    return -(0.5 * (p_new - p) * (p + p_new) + sys.potential_quotient(q, q_new) * (q_new - q))


def _solve_with_increment(
    q: float, p: float, sys: SystemSpec, eta: float, fp_tol: float, fp_max_iter: int
) -> Tuple[float, float, float, int]:
    quotient = sys.potential_quotient
    dbar_of = sys.discrete_dissipation

    q_new = q + eta * p
    p_new = p + eta * (sys.force(q) - sys.dissipation(q, p))
    half_eta = 0.5 * eta

    diff = float("inf")
    for iteration in range(1, fp_max_iter + 1):
        q_next = q + half_eta * (p + p_new)
        p_next = p - eta * (quotient(q, q_new) + dbar_of(q, q_new, p, p_new))
        if not (np.isfinite(q_next) and np.isfinite(p_next)):
            raise DivergenceError(f"non-finite iterate after {iteration} iterations")

        diff = max(abs(q_next - q_new), abs(p_next - p_new))
        q_new, p_new = q_next, p_next

        floor = 4.0 * _EPS * max(1.0, abs(q_new), abs(p_new))
        if diff <= fp_tol or diff <= floor:
            return q_new, p_new, reservoir_increment(q, p, q_new, p_new, sys), iteration

    raise ConvergenceError(diff, fp_max_iter)


def _require_oscillator(sys: SystemSpec, what: str) -> DampedOscillatorParams:
    if not sys.is_damped_oscillator():
        raise UnsupportedSystemError(
            f"{what} is only defined for the damped harmonic oscillator, not '{sys.name}'"
        )
    return sys.params


def moddg_step(
    s: State,
    sys: SystemSpec,
    cfg: StepperConfig,
    variant: DeltaVariant = DeltaVariant(),
) -> StepResult:
    """Advance one step with the modified discrete gradient scheme.

    Args:
        s: Current state
        sys: System to integrate
        cfg: Step size and solver settings
        variant: Delta correction (oscillator only)

    Returns:
        Step result; K of the new state equals K of s up to the solver tolerance
    """
    eta, fallback = cfg.h, False
    if not variant.is_none:
        params = _require_oscillator(sys, f"Delta correction '{variant.tag.value}'")
        coeffs = delta_coefficients(s.q, s.p, params, variant)
        eta, step_fallback = effective_step(cfg.h, coeffs)
        fallback = coeffs.fallback or step_fallback

    q, p, dw, iterations = _solve_with_increment(
        s.q, s.p, sys, eta, cfg.fp_tol, cfg.fp_max_iter
    )
    return StepResult(State(s.t + cfg.h, q, p, s.w + dw), iterations, eta / cfg.h, fallback, dw)


def pqplf_step(s: State, sys: SystemSpec, cfg: StepperConfig) -> StepResult:
    """Advance one step with the K-gradient leapfrog.

    The first half kick p_half = p - h/2 (k q + b p_half) is linear in p_half
    and solved in closed form. The reservoir gains h b p_half^2.
    """
    params = _require_oscillator(sys, "pqpLF")
    b, k, h = params.b, params.k, cfg.h

    p_half = (s.p - 0.5 * h * k * s.q) / (1.0 + 0.5 * h * b)
    q_new = s.q + h * p_half
    p_new = p_half - 0.5 * h * (k * q_new + b * p_half)
    w_new = s.w + h * b * p_half * p_half
    return StepResult(State(s.t + cfg.h, q_new, p_new, w_new))


def erk4_step(s: State, sys: SystemSpec, cfg: StepperConfig) -> StepResult:
    """Classical Runge-Kutta step on the three-component system (q, p, w)."""
    h = cfg.h

    def f(x: np.ndarray) -> np.ndarray:
        return np.array(continuous_rhs(State(s.t, x[0], x[1], x[2]), sys))

    x = s.as_array()
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return StepResult(State(s.t + h, *x_new))


SCHEMES = ("moddg", "pqplf", "erk4")


@dataclass(frozen=True)
class Integrator:
    """A scheme together with its delta variant.

    Parsed from ``moddg[:none|q3|q4|p3|p4]``, ``pqplf`` or ``erk4``.
    """

    scheme: str = "moddg"
    variant: DeltaVariant = field(default_factory=DeltaVariant)

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"Unknown integrator '{self.scheme}' (known: {', '.join(SCHEMES)})")
        if self.scheme != "moddg" and not self.variant.is_none:
            raise ValueError(f"Delta variants apply to moddg only, not '{self.scheme}'")

    @classmethod
    def parse(cls, text: str) -> "Integrator":
        scheme, _, variant = text.strip().lower().partition(":")
        if not variant:
            return cls(scheme)
        try:
            delta = DeltaVariant.parse(variant)
        except ValueError:
            raise ValueError(f"Unknown delta variant '{variant}' in '{text}'") from None
        return cls(scheme, delta)

    def with_delta_guard(self, guard: Optional[float]) -> "Integrator":
        """Copy with the denominator guard set, unless the variant already has one."""
        if guard is None or self.variant.is_none or self.variant.denominator_guard is not None:
            return self
        return replace(self, variant=self.variant.with_guard(guard))

    @property
    def label(self) -> str:
        if self.variant.is_none:
            return self.scheme
        return f"{self.scheme}-{self.variant.tag.value}"

    @property
    def spec(self) -> str:
        """Text form accepted by parse."""
        if self.variant.is_none:
            return self.scheme
        return f"{self.scheme}:{self.variant.tag.value}"

    def check(self, sys: SystemSpec) -> None:
        """Fail early if the scheme cannot integrate this system."""
        if self.scheme == "pqplf":
            _require_oscillator(sys, "pqpLF")
        elif not self.variant.is_none:
            _require_oscillator(sys, f"Delta correction '{self.variant.tag.value}'")

    def step(self, s: State, sys: SystemSpec, cfg: StepperConfig) -> StepResult:
        if self.scheme == "moddg":
            return moddg_step(s, sys, cfg, self.variant)
        return _EXPLICIT_STEPPERS[self.scheme](s, sys, cfg)


_EXPLICIT_STEPPERS: Dict[str, Callable[[State, SystemSpec, StepperConfig], StepResult]] = {
    "pqplf": pqplf_step,
    "erk4": erk4_step,
}


def integrate(
    integrator: Integrator,
    sys: SystemSpec,
    initial: State,
    cfg: StepperConfig,
    n_steps: int,
) -> List[State]:
    """Run a trajectory of n_steps steps.

    Times are placed on the exact grid t0 + i h. Steps that report their
    reservoir increment have w summed by a ReservoirAccumulator.

    Returns:
        List of n_steps + 1 states, starting with initial

    Raises:
        ConvergenceError, DivergenceError: Tagged with the failing step
    """
    integrator.check(sys)
    states = [initial]
    state = initial
    reservoir = ReservoirAccumulator(initial.w)
    iterations = 0
    for i in range(n_steps):
        try:
            result = integrator.step(state, sys, cfg)
        except (ConvergenceError, DivergenceError) as e:
            raise e.tagged(i, state.t) from e
        iterations += result.fp_iterations
        state = result.state.with_time(initial.t + (i + 1) * cfg.h)
        if result.w_increment is not None:
            state = replace(state, w=reservoir.add(result.w_increment))
        states.append(state)
    if iterations:
        logger.debug(
            "%s: %d steps, %.2f fixed-point iterations per step",
            integrator.label,
            n_steps,
            iterations / max(n_steps, 1),
        )
    return states
