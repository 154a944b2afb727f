"""Exogenous profiles, excitation-phase data collection and input lifting.

The weather/load series behind the original case study are not published, so
profiles here are seeded synthetic day-cycles.  Excitation data for the
data-driven controllers is recorded by driving the true battery with a
randomized input policy, clipped away from the capacity bounds, and the
persistence-of-excitation requirement is verified on both the raw and the
lifted input sequence before the dataset is accepted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .hankel import Sequence, build_hankel, is_persistently_exciting, numerical_rank
from .plant import GridParams, battery_step

__all__ = [
    "Profile",
    "GeneratorParams",
    "IODataset",
    "ExcitationError",
    "generate_profiles",
    "save_profile_csv",
    "load_profile_csv",
    "lift_input",
    "collect_excitation_data",
    "save_dataset_csv",
    "load_dataset_csv",
]


class ExcitationError(RuntimeError):
    """Raised when the excitation policy fails to produce persistently exciting data."""

    def __init__(self, message: str, raw_rank: int, lifted_rank: int, order: int):
        super().__init__(message)
        self.raw_rank = raw_rank
        self.lifted_rank = lifted_rank
        self.order = order


@dataclass(frozen=True)
class Profile:
    """Per-step exogenous series: available renewable power and load."""

    dt_minutes: float
    w_r: np.ndarray
    w_d: np.ndarray

    def __post_init__(self):
        w_r = np.asarray(self.w_r, dtype=float)
        w_d = np.asarray(self.w_d, dtype=float)
        if w_r.ndim != 1 or w_d.ndim != 1 or w_r.shape != w_d.shape:
            raise ValueError(f"w_r and w_d must be 1-d arrays of equal length, got {w_r.shape} and {w_d.shape}")
        if w_r.shape[0] < 1:
            raise ValueError("profile needs at least one step")
        if np.any(w_r < 0):
            k = int(np.argmax(w_r < 0))
            raise ValueError(f"w_r must be >= 0, violated at step {k}")
        if np.any(w_d > 0):
            k = int(np.argmax(w_d > 0))
            raise ValueError(f"w_d must be <= 0 at step {k}")
        object.__setattr__(self, "w_r", w_r)
        object.__setattr__(self, "w_d", w_d)

    @property
    def steps(self) -> int:
        return self.w_r.shape[0]

    def window(self, start: int, count: int) -> "Profile":
        """Sub-profile covering steps ``start .. start+count-1``."""
        if start < 0 or start + count > self.steps:
            raise ValueError(f"window [{start}, {start + count}) outside profile of {self.steps} steps")
        return Profile(self.dt_minutes, self.w_r[start : start + count], self.w_d[start : start + count])


@dataclass(frozen=True)
class GeneratorParams:
    """Shape constants of the synthetic day-cycle generator (artifact defaults)."""

    r0: float = 0.6
    r1: float = 0.4
    d0: float = 0.9
    d1: float = 0.3
    phase: float = np.pi
    margin: float = 0.1
    noise_std: float = 0.1
    steps_per_day: int = 48

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.steps_per_day < 1:
            raise ValueError(f"steps_per_day must be >= 1, got {self.steps_per_day}")
        if self.margin < 0:
            raise ValueError(f"margin must be >= 0, got {self.margin}")


def generate_profiles(
    seed: int,
    steps: int,
    gen_params: GeneratorParams | None = None,
    grid: GridParams | None = None,
) -> Profile:
    """Seeded synthetic renewable/load profile with a daily cycle.

    The load magnitude is clamped to ``p_t_max + p_s_max - margin`` so the
    power balance stays satisfiable even with zero renewables.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    gp = gen_params or GeneratorParams()
    grid = grid or GridParams()
    cap = grid.p_t_max + grid.p_s_max
    if gp.margin >= cap:
        raise ValueError(f"margin {gp.margin} must stay below the dispatchable capacity {cap}")
    rng = np.random.default_rng(seed)
    k = np.arange(steps)
    day = 2.0 * np.pi * k / gp.steps_per_day
    w_r = np.maximum(0.0, gp.r0 + gp.r1 * np.sin(day) + rng.normal(0.0, gp.noise_std, steps))
    load = gp.d0 + gp.d1 * np.sin(day + gp.phase) + rng.normal(0.0, gp.noise_std, steps)
    w_d = -np.clip(load, 0.0, cap - gp.margin)
    return Profile(dt_minutes=grid.dt_minutes, w_r=w_r, w_d=w_d)


def save_profile_csv(profile: Profile, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "w_r", "w_d"])
        for k in range(profile.steps):
            writer.writerow([k, f"{profile.w_r[k]:.17g}", f"{profile.w_d[k]:.17g}"])


def load_profile_csv(path, dt_minutes: float = 30.0) -> Profile:
    """Read a ``step,w_r,w_d`` file, checking signs and the step index."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"step", "w_r", "w_d"}.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected columns step,w_r,w_d, got {reader.fieldnames}")
        w_r, w_d = [], []
        for i, row in enumerate(reader):
            if int(row["step"]) != i:
                raise ValueError(f"{path}: non-monotone step index at row {i}")
            r, d = float(row["w_r"]), float(row["w_d"])
            if r < 0:
                raise ValueError(f"{path}: w_r must be >= 0 at row {i}")
            if d > 0:
                raise ValueError(f"{path}: w_d must be <= 0 at row {i}")
            w_r.append(r)
            w_d.append(d)
    if not w_r:
        raise ValueError(f"{path}: profile file has no rows")
    return Profile(dt_minutes=dt_minutes, w_r=np.array(w_r), w_d=np.array(w_d))


def lift_input(u: float) -> np.ndarray:
    """Auxiliary linear input ``(u, u^2)`` of the input-nonlinear battery."""
    return np.array([u, u * u], dtype=float)


@dataclass(frozen=True)
class IODataset:
    """Recorded battery I/O plus the lifted-input counterpart.

    ``u`` are applied storage powers, ``y`` the stored energies observed when
    each input was applied, and ``v`` the lifted inputs ``(u, u^2)``.
    """

    u: Sequence
    y: Sequence
    v: Sequence

    def __post_init__(self):
        if not (self.u.length == self.y.length == self.v.length):
            raise ValueError(
                f"u, y, v must share length, got {self.u.length}, {self.y.length}, {self.v.length}"
            )
        if self.u.dim != 1 or self.y.dim != 1 or self.v.dim != 2:
            raise ValueError("expected scalar u and y and 2-dimensional lifted v")
        expected = np.column_stack([self.u.samples[:, 0], self.u.samples[:, 0] ** 2])
        if not np.allclose(self.v.samples, expected, atol=1e-12, rtol=0.0):
            raise ValueError("lifted sequence v must equal (u, u^2) elementwise")

    @property
    def N(self) -> int:
        return self.u.length


def _make_dataset(u: np.ndarray, y: np.ndarray) -> IODataset:
    v = np.column_stack([u, u * u])
    return IODataset(u=Sequence(u), y=Sequence(y), v=Sequence(v))


def _input_window(x: float, params: GridParams, margin: float) -> tuple[float, float]:
    # battery_step is strictly decreasing in p_s on the admissible range, so
    # the admissible input interval maps to a state window by root-solving
    # B_q*u^2 + B_l*u + (A*x - target) = 0 for each capacity target.  An
    # unreachable target cannot be overshot, so that side stays unclipped.
    def root_for(target: float, fallback: float) -> float:
        disc = params.B_l * params.B_l - 4.0 * params.B_q * (params.A * x - target)
        if disc < 0.0:
            return fallback
        return (-params.B_l - np.sqrt(disc)) / (2.0 * params.B_q)

    u_hi = root_for(params.x_min + margin, params.p_s_max)  # max discharge before the floor
    u_lo = root_for(params.x_max - margin, params.p_s_min)  # max charge before the ceiling
    return max(params.p_s_min, u_lo), min(params.p_s_max, u_hi)


def collect_excitation_data(
    params: GridParams,
    x_start: float = 3.5,
    seed: int = 7,
    N: int = 185,
    margin: float = 0.25,
    order: int = 11,
    max_retries: int = 10,
    forced_inputs: np.ndarray | None = None,
) -> IODataset:
    """Drive the true battery with a randomized input policy and record I/O.

    Inputs are drawn uniformly over the storage power range and clipped so
    the predicted next state stays inside ``[x_min+margin, x_max-margin]``.
    Persistence of excitation of ``order`` is verified on the raw (dim 1) and
    the lifted (dim 2) input sequence; on failure the seed is bumped and the
    collection retried.  ``forced_inputs`` is a test hook replacing the random
    draws (no retries).
    """
    if N < 2 * order - 1:
        raise ValueError(f"N={N} too short for Hankel order {order}; need at least {2 * order - 1}")
    if not params.x_min + margin < x_start < params.x_max - margin:
        raise ValueError(
            f"x_start={x_start} must lie strictly inside [{params.x_min + margin}, {params.x_max - margin}]"
        )

    attempts = max_retries + 1 if forced_inputs is None else 1
    raw_rank = lifted_rank = 0
    for attempt in range(attempts):
        rng = np.random.default_rng(seed + attempt)
        u = np.empty(N)
        y = np.empty(N)
        x = float(x_start)
        for k in range(N):
            y[k] = x
            if forced_inputs is not None:
                cand = float(forced_inputs[k])
            else:
                cand = rng.uniform(params.p_s_min, params.p_s_max)
            lo, hi = _input_window(x, params, margin)
            u[k] = min(max(cand, lo), hi)
            x = battery_step(x, u[k], params)
        dataset = _make_dataset(u, y)
        if is_persistently_exciting(dataset.u, order) and is_persistently_exciting(dataset.v, order):
            return dataset
        raw_rank = numerical_rank(build_hankel(dataset.u, order))
        lifted_rank = numerical_rank(build_hankel(dataset.v, order))
    raise ExcitationError(
        f"excitation not persistently exciting of order {order} after {attempts} attempt(s): "
        f"raw rank {raw_rank}/{order}, lifted rank {lifted_rank}/{2 * order}",
        raw_rank=raw_rank,
        lifted_rank=lifted_rank,
        order=order,
    )


def save_dataset_csv(dataset: IODataset, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "p_s", "x"])
        for k in range(dataset.N):
            writer.writerow([k, f"{dataset.u.samples[k, 0]:.17g}", f"{dataset.y.samples[k, 0]:.17g}"])


def load_dataset_csv(path) -> IODataset:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"step", "p_s", "x"}.issubset(reader.fieldnames):
            raise ValueError(f"{path}: expected columns step,p_s,x, got {reader.fieldnames}")
        u, y = [], []
        for i, row in enumerate(reader):
            if int(row["step"]) != i:
                raise ValueError(f"{path}: non-monotone step index at row {i}")
            u.append(float(row["p_s"]))
            y.append(float(row["x"]))
    if not u:
        raise ValueError(f"{path}: dataset file has no rows")
    return _make_dataset(np.array(u), np.array(y))
