"""Ground-truth islanded-grid model: battery, conventional unit, renewable, load.

The battery has quadratic conversion losses (state-affine, input-nonlinear
dynamics); the conventional unit carries a binary commitment with minimum
power and switching costs; the renewable infeed is curtailable below the
weather-dependent availability; the islanded balance forces the four powers
to sum to zero.  The simulator never clamps: constraint violations caused by
an imperfect controller propagate and are measured, not prevented.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GridParams",
    "PlantState",
    "ControlInput",
    "Exogenous",
    "Violation",
    "battery_step",
    "stage_cost",
    "validate_input",
    "step",
]

BALANCE_TOL = 1e-6


@dataclass(frozen=True)
class GridParams:
    """Physical and economic constants of the grid (per-unit), plus sample time."""

    c0: float = 1.0
    c1: float = 0.3
    c2: float = 0.2
    gamma: float = 0.9
    p_t_min: float = 0.3
    p_t_max: float = 1.0
    p_s_min: float = -1.0
    p_s_max: float = 1.0
    p_r_min: float = 0.0
    A: float = 0.99
    B_l: float = -0.5
    B_q: float = -0.05
    x_min: float = 0.5
    x_max: float = 6.5
    dt_minutes: float = 30.0

    def __post_init__(self):
        if not 0.0 < self.A < 1.0:
            raise ValueError(f"self-discharge factor A must lie in (0, 1), got {self.A}")
        if not (self.B_l < 0.0 and self.B_q < 0.0):
            raise ValueError(f"input gains must be negative, got B_l={self.B_l}, B_q={self.B_q}")
        if not self.p_s_min < 0.0 < self.p_s_max:
            raise ValueError(f"storage power bounds must straddle zero, got [{self.p_s_min}, {self.p_s_max}]")
        if not 0.0 <= self.p_t_min < self.p_t_max:
            raise ValueError(f"conventional bounds need 0 <= p_t_min < p_t_max, got [{self.p_t_min}, {self.p_t_max}]")
        if not 0.0 <= self.x_min < self.x_max:
            raise ValueError(f"capacity bounds need 0 <= x_min < x_max, got [{self.x_min}, {self.x_max}]")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"discount gamma must lie in (0, 1), got {self.gamma}")
        if self.p_r_min < 0.0:
            raise ValueError(f"renewable minimum must be nonnegative, got {self.p_r_min}")
        if self.dt_minutes <= 0.0:
            raise ValueError(f"sample time must be positive, got {self.dt_minutes}")


@dataclass(frozen=True)
class PlantState:
    """Stored energy and the previous commitment of the conventional unit."""

    x: float
    delta_prev: int = 0


@dataclass(frozen=True)
class ControlInput:
    p_t: float
    p_s: float
    p_r: float
    delta: int

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise ValueError(f"delta must be 0 or 1, got {self.delta}")


@dataclass(frozen=True)
class Exogenous:
    """Available renewable power (>= 0) and load (<= 0, power provided to grid is positive)."""

    w_r: float
    w_d: float

    def __post_init__(self):
        if self.w_r < 0.0:
            raise ValueError(f"available renewable power must be >= 0, got {self.w_r}")
        if self.w_d > 0.0:
            raise ValueError(f"load must be <= 0 in the provided-to-grid sign convention, got {self.w_d}")


@dataclass(frozen=True)
class Violation:
    name: str
    magnitude: float


def battery_step(x: float, p_s: float, params: GridParams) -> float:
    """Next stored energy: ``A*x + B_l*p_s + B_q*p_s**2`` (lossy in both directions)."""
    return params.A * x + params.B_l * p_s + params.B_q * p_s * p_s


def stage_cost(inp: ControlInput, delta_prev: int, params: GridParams) -> float:
    """Economic stage cost: conventional use minus renewable infeed, plus switching and running fees."""
    if delta_prev not in (0, 1):
        raise ValueError(f"delta_prev must be 0 or 1, got {delta_prev}")
    return (
        params.c0 * (inp.p_t - inp.p_r)
        + params.c1 * abs(inp.delta - delta_prev)
        + params.c2 * inp.delta
    )


def validate_input(state: PlantState, inp: ControlInput, exo: Exogenous, params: GridParams) -> list[Violation]:
    """Named constraint violations with magnitudes; empty list when the point is admissible.

    Violations are data, not exceptions: the closed-loop metrics aggregate
    them.  The balance magnitude is the excess of the residual over the
    ``1e-6`` per-unit tolerance, so it is zero exactly at the boundary like
    the box magnitudes.
    """
    out: list[Violation] = []

    def box(name: str, value: float, lo: float, hi: float):
        mag = max(0.0, lo - value) + max(0.0, value - hi)
        if mag > 0.0:
            out.append(Violation(name, mag))

    box("renewable-availability", inp.p_r, -np.inf, exo.w_r)
    box("renewable-minimum", inp.p_r, params.p_r_min, np.inf)
    box("conventional-commitment", inp.p_t, params.p_t_min * inp.delta, params.p_t_max * inp.delta)
    box("storage-power", inp.p_s, params.p_s_min, params.p_s_max)
    box("capacity", state.x, params.x_min, params.x_max)
    residual = abs(inp.p_t + inp.p_s + inp.p_r + exo.w_d)
    if residual > BALANCE_TOL:
        out.append(Violation("balance", residual - BALANCE_TOL))
    return out


def step(state: PlantState, inp: ControlInput, exo: Exogenous, params: GridParams) -> PlantState:
    """Advance the plant one sample; no clamping is performed."""
    return PlantState(x=battery_step(state.x, inp.p_s, params), delta_prev=inp.delta)
