"""Dissipative mechanical systems augmented with a work reservoir.

A one-degree-of-freedom system q' = p, p' = F(q) - D(q, p) is extended by the
reservoir w' = D(q, p) p, which accumulates the work done by the dissipative
force. The non-potential Hamiltonian K = p^2/2 + V(q) + w is then conserved
along every trajectory.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .errors import NonFiniteStateError, UnknownSystemError

logger = logging.getLogger(__name__)

Potential = Callable[[float], float]
Force = Callable[[float], float]
Dissipation = Callable[[float, float], float]
DiscreteDissipation = Callable[[float, float, float, float], float]
PotentialQuotient = Callable[[float, float], float]

# Below this separation the potential difference quotient is replaced by its limit.
_QUOTIENT_GUARD = math.sqrt(np.finfo(float).eps)


@dataclass(frozen=True)
class State:
    """Augmented phase point (t, q, p, w)."""

    t: float
    q: float
    p: float
    w: float = 0.0

    def __post_init__(self):
        if not (
            math.isfinite(self.t)
            and math.isfinite(self.q)
            and math.isfinite(self.p)
            and math.isfinite(self.w)
        ):
            raise NonFiniteStateError(
                f"Non-finite state: t={self.t}, q={self.q}, p={self.p}, w={self.w}"
            )

    def with_time(self, t: float) -> "State":
        return replace(self, t=t)

    def as_array(self) -> np.ndarray:
        """Return the (q, p, w) components as an array."""
        return np.array([self.q, self.p, self.w])


class DampedOscillatorParams(BaseModel):
    """Linear oscillator V = k q^2 / 2 with viscous damping D = b p."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    b: float = Field(0.1, ge=0.0)
    k: float = Field(1.0, gt=0.0)

    def is_underdamped(self) -> bool:
        return self.b * self.b < 4.0 * self.k


class DuffingParams(BaseModel):
    """Duffing potential V = alpha q^2 / 2 + beta q^4 / 4 with damping D = b p."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    alpha: float = 1.0
    beta: float = 1.0
    b: float = Field(0.1, ge=0.0)


class VanDerPolParams(BaseModel):
    """Van der Pol oscillator: V = q^2 / 2, D = mu (q^2 - 1) p."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mu: float = 1.0


SystemParams = BaseModel


def endpoint_average(dissipation: Dissipation) -> DiscreteDissipation:
    """Build the discrete dissipation (D(q, p) + D(q+, p+)) / 2."""

    def discrete(q: float, q_new: float, p: float, p_new: float) -> float:
        return 0.5 * (dissipation(q, p) + dissipation(q_new, p_new))

    return discrete


def make_potential_quotient(potential: Potential, force: Force) -> PotentialQuotient:
    """Build (V(q+) - V(q)) / (q+ - q) for an arbitrary potential.

    When the two points are closer than the cancellation threshold the
    quotient is replaced by V' at their midpoint, which is its limit.

    Args:
        potential: V(q)
        force: F(q) = -V'(q)

    Returns:
        Function of (q, q_new) returning the difference quotient
    """

    def quotient(q: float, q_new: float) -> float:
        dq = q_new - q
        if abs(dq) < _QUOTIENT_GUARD * max(1.0, abs(q)):
            return -force(0.5 * (q + q_new))
        return (potential(q_new) - potential(q)) / dq

    return quotient


@dataclass(frozen=True)
class SystemSpec:
    """A dissipative one-degree-of-freedom system.

    Attributes:
        name: Catalog name
        potential: V(q)
        force: F(q) = -V'(q)
        dissipation: D(q, p)
        discrete_dissipation: D-bar(q, q+, p, p+), consistent with D on the diagonal
        potential_quotient: discrete gradient of V between q and q+
        params: Parameter record the closures were built from
    """

    name: str
    potential: Potential
    force: Force
    dissipation: Dissipation
    discrete_dissipation: DiscreteDissipation
    potential_quotient: PotentialQuotient
    params: Optional[SystemParams] = None

    @classmethod
    def custom(
        cls,
        name: str,
        potential: Potential,
        force: Force,
        dissipation: Dissipation,
        discrete_dissipation: Optional[DiscreteDissipation] = None,
        params: Optional[SystemParams] = None,
    ) -> "SystemSpec":
        """Assemble a system from V, F and D with generic discrete pieces."""
        return cls(
            name=name,
            potential=potential,
            force=force,
            dissipation=dissipation,
            discrete_dissipation=discrete_dissipation or endpoint_average(dissipation),
            potential_quotient=make_potential_quotient(potential, force),
            params=params,
        )

    def is_damped_oscillator(self) -> bool:
        return isinstance(self.params, DampedOscillatorParams)


def hamiltonian(state: State, sys: SystemSpec) -> float:
    """Conservative energy p^2/2 + V(q); the reservoir is ignored."""
    return 0.5 * state.p * state.p + sys.potential(state.q)


def k_energy(state: State, sys: SystemSpec) -> float:
    """Non-potential Hamiltonian K = H + w."""
    return hamiltonian(state, sys) + state.w


def continuous_rhs(state: State, sys: SystemSpec) -> Tuple[float, float, float]:
    """Right-hand side (q', p', w') of the augmented system."""
    d = sys.dissipation(state.q, state.p)
    return state.p, sys.force(state.q) - d, d * state.p


def k_gradient(state: State, sys: SystemSpec) -> Tuple[float, float]:
    """Partial derivatives of K with w treated as a function of q.

    dK/dq = V'(q) + D(q, p) because dw/dq = D, and dK/dp = p because w does
    not depend on p.
    """
    return -sys.force(state.q) + sys.dissipation(state.q, state.p), state.p


def damped_oscillator(params: Optional[DampedOscillatorParams] = None) -> SystemSpec:
    params = params or DampedOscillatorParams()
    b, k = params.b, params.k

    def dissipation(q: float, p: float) -> float:
        return b * p

    return SystemSpec(
        name="dho",
        potential=lambda q: 0.5 * k * q * q,
        force=lambda q: -k * q,
        dissipation=dissipation,
        discrete_dissipation=endpoint_average(dissipation),
        potential_quotient=lambda q, q_new: 0.5 * k * (q + q_new),
        params=params,
    )


def duffing(params: Optional[DuffingParams] = None) -> SystemSpec:
    params = params or DuffingParams()
    alpha, beta, b = params.alpha, params.beta, params.b

    def dissipation(q: float, p: float) -> float:
        return b * p

    def quotient(q: float, q_new: float) -> float:
        # (q+^4 - q^4) / (q+ - q) factored so that q+ = q needs no special case
        return 0.5 * alpha * (q + q_new) + 0.25 * beta * (q + q_new) * (q * q + q_new * q_new)

    return SystemSpec(
        name="duffing",
        potential=lambda q: 0.5 * alpha * q * q + 0.25 * beta * q ** 4,
        force=lambda q: -alpha * q - beta * q ** 3,
        dissipation=dissipation,
        discrete_dissipation=endpoint_average(dissipation),
        potential_quotient=quotient,
        params=params,
    )


def van_der_pol(params: Optional[VanDerPolParams] = None) -> SystemSpec:
    params = params or VanDerPolParams()
    mu = params.mu

    def dissipation(q: float, p: float) -> float:
        return mu * (q * q - 1.0) * p

    return SystemSpec(
        name="vdp",
        potential=lambda q: 0.5 * q * q,
        force=lambda q: -q,
        dissipation=dissipation,
        discrete_dissipation=endpoint_average(dissipation),
        potential_quotient=lambda q, q_new: 0.5 * (q + q_new),
        params=params,
    )


_FACTORIES = {
    "dho": (damped_oscillator, DampedOscillatorParams),
    "duffing": (duffing, DuffingParams),
    "vdp": (van_der_pol, VanDerPolParams),
}

SYSTEM_NAMES = tuple(_FACTORIES)


def get_system(name: str, **params: float) -> SystemSpec:
    """Build a built-in system by name.

    Keyword parameters that the chosen system does not define are ignored,
    so one flat parameter set can be passed for any system.

    Args:
        name: One of "dho", "duffing", "vdp"
        **params: Parameter overrides (b, k, alpha, beta, mu)

    Returns:
        The configured system

    Raises:
        UnknownSystemError: If the name is not in the catalog
    """
    try:
        factory, model = _FACTORIES[name]
    except KeyError:
        raise UnknownSystemError(name, list(_FACTORIES)) from None
    accepted = {key: value for key, value in params.items() if key in model.model_fields}
    logger.debug("Building system %s with %s", name, accepted)
    return factory(model(**accepted))


def builtin_systems(**params: float) -> Dict[str, SystemSpec]:
    """Catalog of all built-in systems, sharing any parameter overrides."""
    return {name: get_system(name, **params) for name in _FACTORIES}
