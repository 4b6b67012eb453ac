"""Experiment runner behind the command-line interface."""

import logging
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .analysis import (
    OrderExperiment,
    base_grid,
    energy_loss_ratio,
    k_drift_series,
    local_error_table_on_grid,
    run_order_experiment,
)
from .config import RunConfig
from .core import State, SystemSpec, get_system, hamiltonian, k_energy
from .errors import DivisionGuardError
from .exact import DhoExactSolution, exact_trajectory
from .integrators import StepperConfig, integrate
from .results import ResultsWriter

logger = logging.getLogger(__name__)

TRAJECTORY_COLUMNS = ["step", "t", "q", "p", "w", "K", "E", "R"]


def trajectory_frame(states: Sequence[State], sys: SystemSpec) -> pd.DataFrame:
    """Tabulate a trajectory; R on row i is E_{i+1} / E_i (empty on the last row)."""
    ratio = np.full(len(states), np.nan)
    if len(states) > 1:
        try:
            ratio[:-1] = energy_loss_ratio(states, sys).ratio
        except DivisionGuardError as e:
            logger.warning("Energy ratio column left empty: %s", e)
    return pd.DataFrame(
        {
            "step": np.arange(len(states)),
            "t": [s.t for s in states],
            "q": [s.q for s in states],
            "p": [s.p for s in states],
            "w": [s.w for s in states],
            "K": [k_energy(s, sys) for s in states],
            "E": [hamiltonian(s, sys) for s in states],
            "R": ratio,
        },
        columns=TRAJECTORY_COLUMNS,
    )


class ExperimentRunner:
    """Runs one configured experiment and writes its tables."""

    def __init__(self, config: RunConfig, writer: Optional[ResultsWriter] = None):
        """Initialize the runner.

        Args:
            config: Resolved run configuration
            writer: Output writer (defaults to one on config.out)
        """
        self.config = config
        self.writer = writer or ResultsWriter(config.out)
        self.system = get_system(config.system, **config.system_params)
        self.initial = State(0.0, config.q0, config.p0, config.w0)
        self.stepper = StepperConfig(
            h=config.h, fp_tol=config.fp_tol, fp_max_iter=config.fp_max_iter
        )

    def run(self) -> Dict[str, Any]:
        """Run the configured command.

        Returns:
            Summary values for display
        """
        command = getattr(self, self.config.command)
        return command()

    def _exact_solution(self) -> DhoExactSolution:
        return DhoExactSolution.for_system(self.initial, self.system)

    def simulate(self) -> Dict[str, Any]:
        summary = {}
        for integrator in self.config.integrators:
            states = integrate(
                integrator, self.system, self.initial, self.stepper, self.config.n_steps
            )
            self.writer.write(f"simulate_{integrator.label}", trajectory_frame(states, self.system))
            drift = k_drift_series(states, self.system)
            summary[integrator.label] = {
                "steps": len(states) - 1,
                "max_abs_k_drift": float(np.max(np.abs(drift))),
            }
        return summary

    def exact(self) -> Dict[str, Any]:
        sol = self._exact_solution()
        times = self.initial.t + self.config.h * np.arange(self.config.n_steps + 1)
        states = exact_trajectory(sol, times)
        self.writer.write("exact", trajectory_frame(states, self.system))
        return {"exact": {"steps": len(states) - 1, "omega": sol.omega}}

    def order(self) -> Dict[str, Any]:
        summary = {}
        for integrator in self.config.integrators:
            experiment = OrderExperiment(
                h0=self.config.h0,
                h_set=self.config.h_set,
                t_end=self.config.t_end,
                ics=self.initial,
                integrator=integrator,
            )
            report = run_order_experiment(
                experiment, self.system, self.stepper, workers=self.config.workers
            )
            for h, table in report.tables.items():
                self.writer.write(f"order_{integrator.label}_h{h:g}", table)
            table = report.summary()
            self.writer.write(f"order_{integrator.label}_summary", table)
            summary[integrator.label] = {
                f"slope_{row.variable}": row.slope for row in table.itertuples()
            }
        return summary

    def compare(self) -> Dict[str, Any]:
        sol = self._exact_solution()
        n_steps = self.config.n_steps
        times = self.initial.t + self.config.h * np.arange(n_steps + 1)
        columns: Dict[str, Any] = {"step": np.arange(n_steps + 1), "t": times}
        local_columns: Dict[str, Any] = {}
        grid = base_grid(self.initial.t, self.config.h0, self.config.t_end)
        summary = {}

        for integrator in self.config.integrators:
            label = integrator.label
            states = integrate(integrator, self.system, self.initial, self.stepper, n_steps)
            drift = k_drift_series(states, self.system)
            deviation = np.full(n_steps + 1, np.nan)
            if n_steps > 0:
                deviation[:-1] = energy_loss_ratio(states, self.system, sol).deviation
            columns[f"q_{label}"] = [s.q for s in states]
            columns[f"p_{label}"] = [s.p for s in states]
            columns[f"Kdrift_{label}"] = drift
            columns[f"dR_{label}"] = deviation

            local = local_error_table_on_grid(
                integrator, self.system, sol, grid, self.config.h, self.stepper
            )
            if not local_columns:
                local_columns = {"i": local["i"], "t": local["t"]}
            for variable in ("q", "p", "w"):
                local_columns[f"T_{variable}_{label}"] = local[f"T_{variable}"]

            summary[label] = {
                "max_abs_k_drift": float(np.max(np.abs(drift))),
                "max_abs_local_q": float(np.max(np.abs(local["T_q"]))),
                "max_dR": float(np.nanmax(deviation)) if n_steps > 0 else 0.0,
            }

        self.writer.write("compare", pd.DataFrame(columns))
        self.writer.write("compare_local", pd.DataFrame(local_columns))
        return summary

    @property
    def written(self) -> List[str]:
        return list(self.writer.written)
