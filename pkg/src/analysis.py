"""Error measurement and empirical order estimation.

Local errors follow the base-grid protocol: for every point t_i = i h0 of a
fixed grid the scheme is seeded with the exact state, takes a single step of
size h, and is compared with the exact state at t_i + h. Repeating this over a
set of step sizes and regressing log max|T| on log h gives the empirical order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .config import (
    DEFAULT_T_END,
    ORDER_DELTA_GUARD,
    REFERENCE_H0,
    REFERENCE_H_SET,
    REFERENCE_ICS,
)
from .core import State, SystemSpec, hamiltonian, k_energy
from .errors import ConvergenceError, DegenerateDataError, DivergenceError, DivisionGuardError
from .exact import DhoExactSolution
from .integrators import Integrator, StepperConfig, integrate

logger = logging.getLogger(__name__)

VARIABLES = ("q", "p", "w")


@dataclass(frozen=True)
class OrderExperiment:
    """Settings of an empirical-order measurement.

    Attributes:
        h0: Base grid step
        h_set: Step sizes to measure
        t_end: Last base-grid time
        ics: Initial state of the exact trajectory
        integrator: Scheme and delta variant under test
        delta_guard: Denominator guard for delta variants that leave theirs
            unset. It does not depend on h, so every base-grid point is
            corrected or not for all h alike. None keeps the per-step default.
    """

    h0: float = REFERENCE_H0
    h_set: Tuple[float, ...] = REFERENCE_H_SET
    t_end: float = DEFAULT_T_END
    ics: State = field(default_factory=lambda: State(*REFERENCE_ICS))
    integrator: Integrator = field(default_factory=Integrator)
    delta_guard: Optional[float] = ORDER_DELTA_GUARD

    def __post_init__(self):
        object.__setattr__(self, "h_set", tuple(float(h) for h in self.h_set))
        if self.h0 <= 0.0:
            raise ValueError("h0 must be positive")
        if self.delta_guard is not None and self.delta_guard <= 0.0:
            raise ValueError("delta_guard must be positive")
        if any(h <= 0.0 for h in self.h_set):
            raise ValueError("every h in h_set must be positive")
        if len(set(self.h_set)) < 2:
            raise ValueError("h_set needs at least two distinct values")
        if self.t_end <= max(self.h_set):
            raise ValueError("t_end must exceed the largest h")

    def base_times(self) -> np.ndarray:
        return base_grid(self.ics.t, self.h0, self.t_end)

    @property
    def measured_integrator(self) -> Integrator:
        """The integrator as stepped by the protocol, with delta_guard applied."""
        return self.integrator.with_delta_guard(self.delta_guard)


def base_grid(t0: float, h0: float, t_end: float) -> np.ndarray:
    """Grid t0 + i h0 up to and including t_end."""
    n = int(np.floor((t_end - t0) / h0 + 1e-9))
    return t0 + h0 * np.arange(n + 1)


@dataclass(frozen=True)
class ErrorSeries:
    """Per-point errors of one variable."""

    variable: str
    times: np.ndarray
    values: np.ndarray

    @property
    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0


@dataclass(frozen=True)
class RegressionResult:
    """Least-squares line log max|T| = intercept + slope log h.

    The slope is the empirical order; it only describes the measured h-range.
    """

    slope: float
    intercept: float
    points: Tuple[Tuple[float, float], ...]
    residual_rms: float
    h_min: float
    h_max: float

    @property
    def c(self) -> float:
        return float(np.exp(self.intercept))


class EnergyLossRatio(NamedTuple):
    ratio: np.ndarray
    exact_ratio: Optional[np.ndarray] = None
    deviation: Optional[np.ndarray] = None


def _stepper(cfg: Optional[StepperConfig], h: float) -> StepperConfig:
    return (cfg or StepperConfig()).with_step(h)


def local_error_table(
    integrator: Integrator,
    sys: SystemSpec,
    sol: DhoExactSolution,
    exp: OrderExperiment,
    h: float,
    cfg: Optional[StepperConfig] = None,
) -> pd.DataFrame:
    """Local errors of q, p and w at every base-grid point for one step size.

    Delta variants without their own guard use exp.delta_guard.

    Returns:
        DataFrame with columns i, t, T_q, T_p, T_w
    """
    integrator = integrator.with_delta_guard(exp.delta_guard)
    return local_error_table_on_grid(integrator, sys, sol, exp.base_times(), h, cfg)


def local_error_table_on_grid(
    integrator: Integrator,
    sys: SystemSpec,
    sol: DhoExactSolution,
    times: np.ndarray,
    h: float,
    cfg: Optional[StepperConfig] = None,
) -> pd.DataFrame:
    """Local errors seeded from the exact state at each of the given times."""
    integrator.check(sys)
    stepper = _stepper(cfg, h)
    times = np.asarray(times, dtype=float)
    seeds = np.column_stack(sol.evaluate(times))
    targets = np.column_stack(sol.evaluate(times + h))
    numeric = np.empty_like(seeds)

    for i, (t, (q, p, w)) in enumerate(zip(times, seeds)):
        try:
            result = integrator.step(State(float(t), q, p, w), sys, stepper)
        except (ConvergenceError, DivergenceError) as e:
            raise e.tagged(i, float(t)) from e
        numeric[i] = result.state.q, result.state.p, result.state.w

    errors = (targets - numeric) / h
    return pd.DataFrame(
        {
            "i": np.arange(len(times)),
            "t": times,
            "T_q": errors[:, 0],
            "T_p": errors[:, 1],
            "T_w": errors[:, 2],
        }
    )


def _series_from_table(table: pd.DataFrame, variable: str) -> ErrorSeries:
    if variable not in VARIABLES:
        raise ValueError(f"Unknown variable '{variable}' (expected one of {VARIABLES})")
    return ErrorSeries(variable, table["t"].to_numpy(), table[f"T_{variable}"].to_numpy())


def local_error_series(
    integrator: Integrator,
    sys: SystemSpec,
    sol: DhoExactSolution,
    exp: OrderExperiment,
    h: float,
    variable: str,
    cfg: Optional[StepperConfig] = None,
) -> ErrorSeries:
    """Local error T = [x(t_i + h) - x_numeric] / h of one variable on the base grid."""
    return _series_from_table(local_error_table(integrator, sys, sol, exp, h, cfg), variable)


def global_error_series(
    integrator: Integrator,
    sys: SystemSpec,
    sol: DhoExactSolution,
    ics: State,
    h: float,
    t_end: float,
    variable: str,
    cfg: Optional[StepperConfig] = None,
) -> ErrorSeries:
    """Global error e_i = x_i - x(t0 + i h) along a single trajectory."""
    if variable not in VARIABLES:
        raise ValueError(f"Unknown variable '{variable}' (expected one of {VARIABLES})")
    n_steps = int(np.floor((t_end - ics.t) / h + 1e-9))
    trajectory = integrate(integrator, sys, ics, _stepper(cfg, h), n_steps)
    times = np.array([s.t for s in trajectory])
    numeric = np.array([getattr(s, variable) for s in trajectory])
    exact = dict(zip(VARIABLES, sol.evaluate(times)))[variable]
    values = numeric - exact
    # shared initial condition
    values[0] = 0.0
    return ErrorSeries(variable, times, values)


def empirical_order(series_per_h: Sequence[Tuple[float, ErrorSeries]]) -> RegressionResult:
    """Fit log max|T| against log h by ordinary least squares.

    Raises:
        DegenerateDataError: Fewer than two distinct h, or a vanishing maximum
    """
    hs = np.array([h for h, _ in series_per_h], dtype=float)
    maxima = np.array([series.max_abs for _, series in series_per_h], dtype=float)
    if len(np.unique(hs)) < 2:
        raise DegenerateDataError("Need at least two distinct step sizes")
    if np.any(hs <= 0.0):
        raise DegenerateDataError("Step sizes must be positive")
    if np.any(~np.isfinite(maxima)) or np.any(maxima <= 0.0):
        raise DegenerateDataError("Error maxima must be positive and finite to take logarithms")

    x, y = np.log(hs), np.log(maxima)
    slope, intercept = np.polyfit(x, y, 1)
    residuals = y - (intercept + slope * x)
    return RegressionResult(
        slope=float(slope),
        intercept=float(intercept),
        points=tuple(zip(x.tolist(), y.tolist())),
        residual_rms=float(np.sqrt(np.mean(residuals ** 2))),
        h_min=float(hs.min()),
        h_max=float(hs.max()),
    )


def k_drift_series(trajectory: Sequence[State], sys: SystemSpec) -> np.ndarray:
    """K(state_i) - K(state_0) along a trajectory."""
    if not trajectory:
        raise ValueError("Trajectory is empty")
    k = np.array([k_energy(s, sys) for s in trajectory])
    return k - k[0]


def energy_loss_ratio(
    trajectory: Sequence[State],
    sys: SystemSpec,
    sol: Optional[DhoExactSolution] = None,
) -> EnergyLossRatio:
    """Per-step ratio R_i = E_{i+1} / E_i of the conservative energy.

    With an exact solution the exact ratio at the same times and the deviation
    d_R = |R - R_exact| are returned as well.

    Raises:
        DivisionGuardError: Some E_i (i < n-1) is zero
    """
    if len(trajectory) < 2:
        raise ValueError("Energy loss ratio needs at least two states")
    energy = np.array([hamiltonian(s, sys) for s in trajectory])
    zero = np.flatnonzero(energy[:-1] == 0.0)
    if zero.size:
        raise DivisionGuardError(int(zero[0]))
    ratio = energy[1:] / energy[:-1]
    if sol is None:
        return EnergyLossRatio(ratio)

    q, p, _ = sol.evaluate([s.t for s in trajectory])
    exact_energy = 0.5 * p * p + 0.5 * sol.k * q * q
    exact_ratio = exact_energy[1:] / exact_energy[:-1]
    return EnergyLossRatio(ratio, exact_ratio, np.abs(ratio - exact_ratio))


@dataclass
class OrderReport:
    """Per-h local-error tables and one regression per variable."""

    integrator: Integrator
    tables: Dict[float, pd.DataFrame]
    regressions: Dict[str, RegressionResult]

    def summary(self) -> pd.DataFrame:
        rows = [
            {
                "variable": variable,
                "slope": result.slope,
                "intercept": result.intercept,
                "residual_rms": result.residual_rms,
            }
            for variable, result in self.regressions.items()
        ]
        return pd.DataFrame(rows, columns=["variable", "slope", "intercept", "residual_rms"])


def run_order_experiment(
    exp: OrderExperiment,
    sys: SystemSpec,
    cfg: Optional[StepperConfig] = None,
    variables: Sequence[str] = VARIABLES,
    workers: int = 1,
) -> OrderReport:
    """Measure local errors over the whole h-set and fit the empirical orders.

    Tables for distinct h are independent; with workers > 1 they are computed
    in a thread pool. Results are collected in h-set order either way.
    """
    sol = DhoExactSolution.for_system(exp.ics, sys)
    exp.integrator.check(sys)
    if not exp.integrator.variant.is_none:
        logger.info(
            "%s: delta denominator guard %s",
            exp.integrator.label,
            exp.measured_integrator.variant.denominator_guard or "per-step default",
        )

    def measure(h: float) -> pd.DataFrame:
        logger.info("%s: measuring local errors at h=%g", exp.integrator.label, h)
        return local_error_table(exp.integrator, sys, sol, exp, h, cfg)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            tables: List[pd.DataFrame] = list(pool.map(measure, exp.h_set))
    else:
        tables = [measure(h) for h in exp.h_set]

    by_h = dict(zip(exp.h_set, tables))
    regressions = {
        variable: empirical_order(
            [(h, _series_from_table(table, variable)) for h, table in by_h.items()]
        )
        for variable in variables
    }
    for variable, result in regressions.items():
        logger.info(
            "%s: order from %s errors %.5f over h in [%g, %g]",
            exp.integrator.label,
            variable,
            result.slope,
            result.h_min,
            result.h_max,
        )
    return OrderReport(exp.integrator, by_h, regressions)
