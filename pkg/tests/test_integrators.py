"""Tests for the one-step schemes."""

import math
import sys
import unittest
from pathlib import Path

import numpy as np

# Add the parent directory to the path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.core import (
    DampedOscillatorParams,
    State,
    SystemSpec,
    builtin_systems,
    damped_oscillator,
    get_system,
    k_energy,
)
from src.errors import ConvergenceError, DivergenceError, UnsupportedSystemError
from src.exact import DhoExactSolution
from src.integrators import (
    BASE_COEFFICIENTS,
    MAX_STEP_FACTOR,
    DeltaCoefficients,
    DeltaTag,
    DeltaVariant,
    Integrator,
    ReservoirAccumulator,
    StepperConfig,
    delta_coefficients,
    derivative_tower,
    discrete_gradient_solve,
    effective_step,
    erk4_step,
    integrate,
    moddg_step,
    pqplf_step,
    reservoir_increment,
)

DELTA_VARIANTS = [DeltaVariant(tag) for tag in (DeltaTag.Q3, DeltaTag.Q4, DeltaTag.P3, DeltaTag.P4)]


def leapfrog(q, p, h):
    """Textbook kick-drift-kick leapfrog for q'' = -q."""
    p_half = p - 0.5 * h * q
    q_new = q + h * p_half
    return q_new, p_half - 0.5 * h * q_new


class TestStepperConfig(unittest.TestCase):
    """Tests for solver settings."""

    def test_defaults(self):
        cfg = StepperConfig()
        self.assertEqual(cfg.h, 0.01)
        self.assertEqual(cfg.fp_tol, 1e-14)
        self.assertEqual(cfg.fp_max_iter, 500)

    def test_validation(self):
        with self.assertRaises(ValueError):
            StepperConfig(h=0.0)
        with self.assertRaises(ValueError):
            StepperConfig(fp_tol=-1.0)
        with self.assertRaises(ValueError):
            StepperConfig(fp_max_iter=0)
        with self.assertRaises(ValueError):
            StepperConfig(tolerance=1e-10)

    def test_with_step(self):
        cfg = StepperConfig(fp_tol=1e-12).with_step(0.5)
        self.assertEqual(cfg.h, 0.5)
        self.assertEqual(cfg.fp_tol, 1e-12)


class TestDeltaCoefficients(unittest.TestCase):
    """Tests for the delta-series step correction."""

    def setUp(self):
        self.dho = DampedOscillatorParams(b=0.1, k=1.0)
        self.undamped = DampedOscillatorParams(b=0.0, k=1.0)

    def test_none_variant(self):
        self.assertEqual(delta_coefficients(1.0, 1.0, self.dho, DeltaVariant()), BASE_COEFFICIENTS)
        self.assertEqual(effective_step(0.1, BASE_COEFFICIENTS), (0.1, False))

    def test_q3_undamped(self):
        coeffs = delta_coefficients(0.3, 0.5, self.undamped, DeltaVariant(DeltaTag.Q3))
        self.assertEqual((coeffs.d1, coeffs.d2), (1.0, 0.0))
        self.assertAlmostEqual(coeffs.d3, 1.0 / 12.0, places=15)
        self.assertEqual(coeffs.d4, 0.0)
        self.assertFalse(coeffs.fallback)

    def test_q4_vanishes_without_damping(self):
        rng = np.random.default_rng(11)
        for q, p in rng.uniform(-2, 2, size=(200, 2)):
            if abs(p) < 0.01:
                continue
            coeffs = delta_coefficients(q, p, self.undamped, DeltaVariant(DeltaTag.Q4))
            self.assertEqual(coeffs.d4, 0.0)
            self.assertAlmostEqual(coeffs.d3, 1.0 / 12.0, places=14)

    def test_p3_value(self):
        coeffs = delta_coefficients(1.0, 1.0, self.dho, DeltaVariant(DeltaTag.P3))
        self.assertAlmostEqual(coeffs.d3, 0.0900758, places=7)

    def test_q3_guard(self):
        coeffs = delta_coefficients(1.0, 1e-9, self.dho, DeltaVariant(DeltaTag.Q3))
        self.assertTrue(coeffs.fallback)
        self.assertEqual(coeffs[:4], BASE_COEFFICIENTS[:4])

    def test_p3_guard(self):
        # k q + b p = 0
        coeffs = delta_coefficients(0.1, -1.0, self.dho, DeltaVariant(DeltaTag.P3))
        self.assertTrue(coeffs.fallback)

    def test_custom_guard(self):
        variant = DeltaVariant(DeltaTag.Q3, denominator_guard=0.5)
        self.assertTrue(delta_coefficients(1.0, 0.4, self.dho, variant).fallback)
        self.assertFalse(delta_coefficients(1.0, 0.6, self.dho, variant).fallback)

    def test_q4_value(self):
        # d4 = -b (p'^2 - p p'') / (24 p^2) with p' = -1.05, p'' = -0.395
        coeffs = delta_coefficients(1.0, 0.5, self.dho, DeltaVariant(DeltaTag.Q4))
        self.assertAlmostEqual(coeffs.d4, -0.13 / 6.0, places=14)
        self.assertFalse(coeffs.fallback)

    def test_d4_dropped_near_denominator_zero(self):
        q3 = delta_coefficients(1.0, 0.005, self.dho, DeltaVariant(DeltaTag.Q3))
        q4 = delta_coefficients(1.0, 0.005, self.dho, DeltaVariant(DeltaTag.Q4))
        self.assertEqual(q4[:4], q3[:4])
        self.assertEqual(q4.d4, 0.0)
        self.assertNotEqual(q4.d3, 0.0)
        self.assertTrue(q4.fallback)

        # k q + b p = 0.005
        p4 = delta_coefficients(0.105, -1.0, self.dho, DeltaVariant(DeltaTag.P4))
        self.assertEqual(p4.d4, 0.0)
        self.assertNotEqual(p4.d3, 0.0)
        self.assertTrue(p4.fallback)

    def test_custom_d4_guard(self):
        variant = DeltaVariant(DeltaTag.Q4, d4_guard=0.6)
        coeffs = delta_coefficients(1.0, 0.5, self.dho, variant)
        self.assertEqual(coeffs.d4, 0.0)
        self.assertTrue(coeffs.fallback)
        self.assertNotEqual(delta_coefficients(1.0, 0.7, self.dho, variant).d4, 0.0)

    def test_with_guard(self):
        variant = DeltaVariant(DeltaTag.P3).with_guard(0.25)
        self.assertEqual(variant.denominator_guard, 0.25)
        self.assertEqual(variant.tag, DeltaTag.P3)

    def test_effective_step(self):
        h_eff, fallback = effective_step(0.1, DeltaCoefficients(1.0, 0.0, 1.0 / 12.0, 0.0))
        self.assertAlmostEqual(h_eff, 0.1 * (1.0 + 0.01 / 12.0), places=15)
        self.assertFalse(fallback)

        self.assertEqual(effective_step(0.1, DeltaCoefficients(1.0, 0.0, -200.0, 0.0)), (0.1, True))
        self.assertEqual(effective_step(0.1, DeltaCoefficients(1.0, 0.0, math.inf, 0.0)), (0.1, True))

    def test_effective_step_range(self):
        self.assertEqual(MAX_STEP_FACTOR, 2.0)
        h_eff, fallback = effective_step(0.1, DeltaCoefficients(1.0, 0.0, 50.0, 0.0))
        self.assertAlmostEqual(h_eff, 0.15, places=15)
        self.assertFalse(fallback)
        self.assertEqual(effective_step(0.1, DeltaCoefficients(1.0, 0.0, 200.0, 0.0)), (0.1, True))

    def test_parse(self):
        self.assertEqual(DeltaVariant.parse("Q4").tag, DeltaTag.Q4)
        self.assertEqual(DeltaVariant.parse("p3").equation, "p")
        self.assertEqual(DeltaVariant.parse("none").order, 2)
        with self.assertRaises(ValueError):
            DeltaVariant.parse("q5")


class TestDerivativeTower(unittest.TestCase):
    """The tower matches finite differences of the exact trajectory."""

    def test_against_finite_differences(self):
        params = DampedOscillatorParams(b=0.1, k=1.0)
        rng = np.random.default_rng(12)
        delta = 0.03
        offsets = delta * np.arange(-3, 4)
        checked = 0

        while checked < 100:
            q, p = rng.uniform(-2, 2, size=2)
            if abs(p) <= 0.1 or abs(q + params.b * p) <= 0.1:
                continue
            sol = DhoExactSolution(q, p, params.b, params.k)
            _, values, _ = sol.evaluate(offsets)
            m3, m2, m1, p0, p1, p2, p3 = values

            second = (-p2 + 16 * p1 - 30 * p0 + 16 * m1 - m2) / (12 * delta ** 2)
            third = (-p3 + 8 * p2 - 13 * p1 + 13 * m1 - 8 * m2 + m3) / (8 * delta ** 3)
            fourth = (-p3 + 12 * p2 - 39 * p1 + 56 * p0 - 39 * m1 + 12 * m2 - m3) / (
                6 * delta ** 4
            )

            tower = derivative_tower(q, p, params, 4)[:, 1]
            for estimate, exact in zip((second, third, fourth), tower[2:]):
                self.assertLessEqual(abs(estimate - exact), 1e-6 * max(1.0, abs(exact)))
            checked += 1

    def test_shape_and_first_row(self):
        tower = derivative_tower(2.3, -3.1, DampedOscillatorParams(), 4)
        self.assertEqual(tower.shape, (5, 2))
        np.testing.assert_array_equal(tower[0], [2.3, -3.1])
        self.assertEqual(tower[1, 0], -3.1)
        self.assertAlmostEqual(tower[1, 1], -1.99, places=14)


class TestModDG(unittest.TestCase):
    """Tests for the modified discrete gradient step."""

    def setUp(self):
        self.dho = damped_oscillator(DampedOscillatorParams(b=0.1, k=1.0))
        self.undamped = damped_oscillator(DampedOscillatorParams(b=0.0, k=1.0))

    def test_undamped_example(self):
        result = moddg_step(State(0.0, 1.0, 0.0), self.undamped, StepperConfig(h=0.1))
        self.assertAlmostEqual(result.state.q, 0.99501247, places=8)
        self.assertAlmostEqual(result.state.p, -0.09975062, places=8)
        self.assertEqual(result.state.w, 0.0)
        self.assertAlmostEqual(result.state.t, 0.1)

    def test_equilibrium_is_fixed(self):
        for name, sys_ in builtin_systems().items():
            result = moddg_step(State(0.0, 0.0, 0.0), sys_, StepperConfig(h=0.1))
            self.assertEqual((result.state.q, result.state.p, result.state.w), (0.0, 0.0, 0.0), name)

    def test_matches_linear_solve(self):
        """For the oscillator the scheme is a 2x2 linear system plus an explicit w update."""
        b, k = 0.1, 1.0
        rng = np.random.default_rng(13)
        for h in (0.1, 0.01):
            half = 0.5 * h
            matrix = np.array([[1.0, -half], [half * k, 1.0 + half * b]])
            for q, p, w in rng.uniform(-3, 3, size=(200, 3)):
                rhs = np.array([q + half * p, p - half * k * q - half * b * p])
                q_new, p_new = np.linalg.solve(matrix, rhs)
                w_new = w + 0.25 * h * b * (p + p_new) ** 2

                result = moddg_step(State(0.0, q, p, w), self.dho, StepperConfig(h=h))
                self.assertAlmostEqual(result.state.q, q_new, delta=1e-12)
                self.assertAlmostEqual(result.state.p, p_new, delta=1e-12)
                self.assertAlmostEqual(result.state.w, w_new, delta=1e-12)

    def test_preserves_k(self):
        rng = np.random.default_rng(14)
        for name, sys_ in builtin_systems().items():
            for h in (0.1, 0.01):
                cfg = StepperConfig(h=h)
                for q, p, w in rng.uniform(-2, 2, size=(1000, 3)):
                    start = State(0.0, q, p, w)
                    result = moddg_step(start, sys_, cfg)
                    drift = k_energy(result.state, sys_) - k_energy(start, sys_)
                    self.assertLessEqual(abs(drift), 10 * cfg.fp_tol, name)

    def test_delta_variants_preserve_k(self):
        rng = np.random.default_rng(15)
        for variant in DELTA_VARIANTS:
            for h in (0.1, 0.01):
                cfg = StepperConfig(h=h)
                states = 0
                while states < 1000:
                    q, p, w = rng.uniform(-2, 2, size=3)
                    if abs(p) <= 0.1 or abs(q + 0.1 * p) <= 0.1:
                        continue
                    start = State(0.0, q, p, w)
                    result = moddg_step(start, self.dho, cfg, variant)
                    drift = k_energy(result.state, self.dho) - k_energy(start, self.dho)
                    self.assertLessEqual(abs(drift), 10 * cfg.fp_tol, variant.tag.value)
                    self.assertAlmostEqual(result.state.t, h)
                    states += 1

    def test_delta_step_factor(self):
        result = moddg_step(
            State(0.0, 0.3, 0.5), self.undamped, StepperConfig(h=0.1), DeltaVariant(DeltaTag.Q3)
        )
        self.assertAlmostEqual(result.delta_factor, 1.0 + 0.01 / 12.0, places=14)
        self.assertFalse(result.fallback)

    def test_oversized_effective_step_falls_back(self):
        # p sits just above the default guard, so d3 is about 5.6e3
        start = State(0.0, 2.0, -3e-6)
        cfg = StepperConfig(h=0.1)
        corrected = moddg_step(start, self.dho, cfg, DeltaVariant(DeltaTag.Q3))
        base = moddg_step(start, self.dho, cfg)

        self.assertTrue(corrected.fallback)
        self.assertEqual(corrected.delta_factor, 1.0)
        self.assertEqual(corrected.state, base.state)
        drift = k_energy(corrected.state, self.dho) - k_energy(start, self.dho)
        self.assertLessEqual(abs(drift), 10 * cfg.fp_tol)

    def test_reservoir_increment_matches_w_equation(self):
        rng = np.random.default_rng(19)
        h = 0.05
        for q, p, w in rng.uniform(-2, 2, size=(200, 3)):
            q_new, p_new, w_new, _ = discrete_gradient_solve(q, p, w, self.dho, h)
            w_equation = 0.25 * h * 0.1 * (p + p_new) ** 2
            self.assertAlmostEqual(w_new - w, w_equation, delta=1e-13)
            dw = reservoir_increment(q, p, q_new, p_new, self.dho)
            self.assertAlmostEqual(dw, w_equation, delta=1e-13)

    def test_reservoir_unchanged_without_dissipation(self):
        self.assertEqual(reservoir_increment(1.0, 0.5, 1.05, 0.4, self.undamped), 0.0)
        self.assertNotEqual(reservoir_increment(1.0, 0.5, 1.05, 0.4, self.dho), 0.0)

    def test_step_reports_reservoir_increment(self):
        start = State(0.0, 2.3, -3.1, 1.0)
        result = moddg_step(start, self.dho, StepperConfig(h=0.01))
        self.assertEqual(result.state.w, 1.0 + result.w_increment)
        self.assertGreater(result.w_increment, 0.0)
        self.assertIsNone(erk4_step(start, self.dho, StepperConfig(h=0.01)).w_increment)

    def test_fixed_point_iterations_are_bounded(self):
        rng = np.random.default_rng(16)
        for h in (0.1, 0.05, 0.01):
            for q, p, w in rng.uniform(-2, 2, size=(200, 3)):
                result = moddg_step(State(0.0, q, p, w), self.dho, StepperConfig(h=h))
                self.assertLessEqual(result.fp_iterations, 100)

    def test_time_reversal(self):
        rng = np.random.default_rng(17)
        for name in ("dho", "duffing"):
            sys_ = get_system(name)
            for q, p, w in rng.uniform(-1.5, 1.5, size=(200, 3)):
                q1, p1, w1, _ = discrete_gradient_solve(q, p, w, sys_, 0.05)
                q0, p0, w0, _ = discrete_gradient_solve(q1, p1, w1, sys_, -0.05)
                self.assertAlmostEqual(q0, q, delta=1e-12)
                self.assertAlmostEqual(p0, p, delta=1e-12)
                self.assertAlmostEqual(w0, w, delta=1e-12)

    def test_delta_requires_oscillator(self):
        with self.assertRaises(UnsupportedSystemError):
            moddg_step(
                State(0.0, 1.0, 1.0), get_system("duffing"), StepperConfig(), DeltaVariant(DeltaTag.Q3)
            )

    def test_convergence_error(self):
        with self.assertRaises(ConvergenceError) as context:
            moddg_step(State(0.0, 2.3, -3.1), self.dho, StepperConfig(h=0.1, fp_max_iter=1))
        self.assertEqual(context.exception.iterations, 1)

    def test_divergence_error(self):
        broken = SystemSpec.custom(
            "broken",
            potential=lambda q: math.nan,
            force=lambda q: math.nan,
            dissipation=lambda q, p: 0.0,
        )
        with self.assertRaises(DivergenceError):
            moddg_step(State(0.0, 1.0, 1.0), broken, StepperConfig(h=0.1))


class TestPqpLeapfrog(unittest.TestCase):
    """Tests for the K-gradient leapfrog."""

    def test_undamped_example(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.0))
        result = pqplf_step(State(0.0, 1.0, 0.0), sys_, StepperConfig(h=0.1))
        self.assertAlmostEqual(result.state.q, 0.995, places=15)
        self.assertAlmostEqual(result.state.p, -0.09975, places=15)
        self.assertEqual(result.state.w, 0.0)

    def test_reduces_to_leapfrog(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.0))
        rng = np.random.default_rng(18)
        for q, p in rng.uniform(-3, 3, size=(200, 2)):
            result = pqplf_step(State(0.0, q, p), sys_, StepperConfig(h=0.05))
            self.assertEqual((result.state.q, result.state.p), leapfrog(q, p, 0.05))

    def test_consistency(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.1))
        h = 1e-6
        result = pqplf_step(State(0.0, 2.3, -3.1), sys_, StepperConfig(h=h))
        self.assertAlmostEqual((result.state.q - 2.3) / h, -3.1, delta=1e-5)
        self.assertAlmostEqual((result.state.p + 3.1) / h, -1.99, delta=1e-5)
        self.assertAlmostEqual(result.state.w / h, 0.961, delta=1e-5)

    def test_requires_oscillator(self):
        with self.assertRaises(UnsupportedSystemError):
            pqplf_step(State(0.0, 1.0, 0.0), get_system("vdp"), StepperConfig())


class TestRungeKutta(unittest.TestCase):
    """Tests for the explicit fourth-order step."""

    def test_undamped_example(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.0))
        result = erk4_step(State(0.0, 1.0, 0.0), sys_, StepperConfig(h=0.1))
        self.assertLess(abs(result.state.q - math.cos(0.1)), 1e-7)
        self.assertLess(abs(result.state.p + math.sin(0.1)), 1e-7)

    def test_single_step_error(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.1))
        sol = DhoExactSolution(2.3, -3.1)
        result = erk4_step(State(0.0, 2.3, -3.1), sys_, StepperConfig(h=0.001))
        q, p, w = sol.evaluate(0.001)
        self.assertLess(abs(result.state.q - q), 1e-13)
        self.assertLess(abs(result.state.p - p), 1e-13)
        self.assertLess(abs(result.state.w - w), 1e-12)

    def test_works_for_every_system(self):
        for name, sys_ in builtin_systems().items():
            result = erk4_step(State(0.0, 0.5, 0.5), sys_, StepperConfig(h=0.01))
            self.assertTrue(np.all(np.isfinite(result.state.as_array())), name)


class TestIntegrator(unittest.TestCase):
    """Tests for scheme selection and trajectories."""

    def test_parse(self):
        integrator = Integrator.parse("moddg:q3")
        self.assertEqual(integrator.scheme, "moddg")
        self.assertEqual(integrator.variant.tag, DeltaTag.Q3)
        self.assertEqual(integrator.label, "moddg-q3")
        self.assertEqual(integrator.spec, "moddg:q3")
        self.assertEqual(Integrator.parse("ERK4").label, "erk4")
        self.assertEqual(Integrator.parse("moddg:none").spec, "moddg")

    def test_parse_errors(self):
        for text in ("rk45", "moddg:q7", "pqplf:q3"):
            with self.assertRaises(ValueError):
                Integrator.parse(text)

    def test_check(self):
        Integrator.parse("moddg").check(get_system("vdp"))
        Integrator.parse("erk4").check(get_system("vdp"))
        with self.assertRaises(UnsupportedSystemError):
            Integrator.parse("pqplf").check(get_system("vdp"))
        with self.assertRaises(UnsupportedSystemError):
            Integrator.parse("moddg:p4").check(get_system("duffing"))

    def test_trajectory_grid(self):
        sys_ = get_system("dho")
        cfg = StepperConfig(h=0.01)
        for text in ("moddg", "moddg:q4", "pqplf", "erk4"):
            states = integrate(Integrator.parse(text), sys_, State(0.0, 2.3, -3.1), cfg, 50)
            self.assertEqual(len(states), 51)
            self.assertEqual(states[0], State(0.0, 2.3, -3.1))
            self.assertEqual(states[-1].t, 50 * 0.01)
            self.assertEqual(states[17].t, 17 * 0.01)

    def test_zero_steps(self):
        states = integrate(Integrator(), get_system("dho"), State(0.0, 1.0, 0.0), StepperConfig(), 0)
        self.assertEqual(states, [State(0.0, 1.0, 0.0)])

    def test_errors_carry_step_index(self):
        cfg = StepperConfig(h=0.1, fp_max_iter=1)
        with self.assertRaises(ConvergenceError) as context:
            integrate(Integrator(), get_system("dho"), State(0.0, 2.3, -3.1), cfg, 10)
        self.assertEqual(context.exception.step_index, 0)
        self.assertEqual(context.exception.t, 0.0)

    def test_undamped_moddg_conserves_energy(self):
        sys_ = damped_oscillator(DampedOscillatorParams(b=0.0))
        states = integrate(Integrator(), sys_, State(0.0, 1.0, 0.0), StepperConfig(h=0.1), 1000)
        energies = np.array([k_energy(s, sys_) for s in states])
        self.assertLess(np.max(np.abs(energies - 0.5)), 1e-12)
        self.assertTrue(all(s.w == 0.0 for s in states))

    def test_k_drift_over_long_run(self):
        sys_ = get_system("dho")
        cfg = StepperConfig(h=0.01)
        start = State(0.0, 2.3, -3.1)
        states = integrate(Integrator(), sys_, start, cfg, 100_000)
        k0 = k_energy(start, sys_)
        drift = max(abs(k_energy(s, sys_) - k0) for s in states)
        self.assertLessEqual(drift, 10 * cfg.fp_tol)


class TestReservoirAccumulator(unittest.TestCase):
    """Test compensated summation of reservoir increments"""

    def test_keeps_increments_below_rounding(self):
        acc = ReservoirAccumulator(1.0)
        for _ in range(10_000):
            acc.add(1e-17)
        self.assertAlmostEqual(acc.total, 1.0 + 1e-13, delta=1e-15)

        naive = 1.0
        for _ in range(10_000):
            naive += 1e-17
        self.assertEqual(naive, 1.0)

    def test_add_returns_running_total(self):
        acc = ReservoirAccumulator(0.5)
        self.assertEqual(acc.add(0.25), 0.75)
        self.assertEqual(acc.add(0.25), 1.0)
        self.assertEqual(acc.total, 1.0)


if __name__ == "__main__":
    unittest.main()
