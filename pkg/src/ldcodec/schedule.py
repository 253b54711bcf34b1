"""Diffusion noise schedules.

The cumulative signal level ``alpha_bar`` is kept both as a lookup table
indexed by integer timestep and as a continuous function of a normalized
timestep ``tau = t / T_max`` so that a predicted timestep can be trained
by gradient descent.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np
import torch

ScheduleKind = str
KINDS = ("linear", "scaled_linear")
KIND_CODES = {"linear": 0, "scaled_linear": 1}

DEFAULT_T_MAX = 1000
DEFAULT_BETA_START = 1e-4
DEFAULT_BETA_END = 0.02


class ScheduleError(ValueError):
    """Invalid schedule parameters or out-of-range timestep."""


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    kind: ScheduleKind
    T_max: int
    beta_start: float
    beta_end: float
    alpha_bar_table: np.ndarray = field(repr=False)

    def __post_init__(self):
        table = np.asarray(self.alpha_bar_table, dtype=np.float64)
        table.setflags(write=False)
        object.__setattr__(self, "alpha_bar_table", table)
        log_table = np.log(table)
        object.__setattr__(self, "_log_steps", torch.from_numpy(np.diff(log_table)))
        object.__setattr__(self, "_table_t", torch.from_numpy(table.copy()))

    def __eq__(self, other):
        if not isinstance(other, NoiseSchedule):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.T_max == other.T_max
            and self.beta_start == other.beta_start
            and self.beta_end == other.beta_end
            and np.array_equal(self.alpha_bar_table, other.alpha_bar_table)
        )

    def __hash__(self):
        return hash((self.kind, self.T_max, self.beta_start, self.beta_end))

    def alpha_bar(self, t: int) -> float:
        """Table lookup at integer timestep ``t`` (0 means clean)."""
        if not 0 <= t <= self.T_max:
            raise ScheduleError(f"timestep {t} outside [0, {self.T_max}]")
        return float(self.alpha_bar_table[t])

    def continuous(self, tau):
        return alpha_bar_continuous(self, tau)

    @classmethod
    def from_alpha_bar(cls, table, kind: ScheduleKind = "linear") -> "NoiseSchedule":
        """Wrap an externally supplied table that already includes the clean entry."""
        table = np.asarray(table, dtype=np.float64)
        _check_table(table)
        betas = 1.0 - table[1:] / table[:-1]
        return cls(kind, len(table) - 1, float(betas[0]), float(betas[-1]), table)


def _check_table(table: np.ndarray) -> None:
    if table.ndim != 1 or len(table) < 2:
        raise ScheduleError("alpha_bar table needs at least two entries")
    if table[0] != 1.0:
        raise ScheduleError("alpha_bar_table[0] must be exactly 1")
    if not np.all(table > 0) or not np.all(table <= 1):
        raise ScheduleError("alpha_bar entries must lie in (0, 1]")
    if not np.all(np.diff(table) < 0):
        raise ScheduleError("alpha_bar must be strictly decreasing")


def betas_for(kind: ScheduleKind, T_max: int, beta_start: float, beta_end: float) -> np.ndarray:
    if kind == "linear":
        return np.linspace(beta_start, beta_end, T_max, dtype=np.float64)
    if kind == "scaled_linear":
        return np.linspace(beta_start**0.5, beta_end**0.5, T_max, dtype=np.float64) ** 2
    raise ScheduleError(f"unknown schedule kind {kind!r}")


def build_schedule(
    kind: ScheduleKind = "linear",
    T_max: int = DEFAULT_T_MAX,
    beta_start: float = DEFAULT_BETA_START,
    beta_end: float = DEFAULT_BETA_END,
) -> NoiseSchedule:
    """Construct a schedule whose entry ``t`` is ``prod_{s<=t} (1 - beta_s)``.

    Entry 0 is the empty product (exactly 1), so the table has ``T_max + 1``
    entries and ``beta_s`` for ``s = 1..T_max`` drives the noising.
    """
    if int(T_max) != T_max or T_max < 1:
        raise ScheduleError(f"T_max must be a positive integer, got {T_max}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ScheduleError(
            f"need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )
    betas = betas_for(kind, int(T_max), float(beta_start), float(beta_end))
    table = np.empty(int(T_max) + 1, dtype=np.float64)
    table[0] = 1.0
    table[1:] = np.cumprod(1.0 - betas)
    _check_table(table)
    return NoiseSchedule(kind, int(T_max), float(beta_start), float(beta_end), table)


Tau = Union[float, torch.Tensor]


def alpha_bar_continuous(schedule: NoiseSchedule, tau: Tau):
    """Evaluate alpha_bar at normalized timestep ``tau`` in [0, 1].

    log(alpha_bar) is interpolated linearly between grid points, which keeps
    the function strictly decreasing and exact at ``tau = t / T_max``.
    Tensor input returns a float64 tensor that is differentiable in ``tau``;
    a Python float returns a float.
    """
    as_float = not isinstance(tau, torch.Tensor)
    tau_t = torch.as_tensor(tau, dtype=torch.float64)
    if not torch.isfinite(tau_t).all() or (tau_t < 0).any() or (tau_t > 1).any():
        raise ScheduleError("tau must lie in [0, 1]")
    tau64 = tau if not as_float else tau_t
    if isinstance(tau64, torch.Tensor) and tau64.dtype != torch.float64:
        tau64 = tau64.to(torch.float64)

    pos = tau64 * schedule.T_max
    # snap positions within rounding noise of a grid point onto that point's segment
    idx = torch.floor(pos.detach() + 1e-9).long().clamp(0, schedule.T_max - 1)
    frac = pos - idx.to(torch.float64)
    base = schedule._table_t[idx]
    step = schedule._log_steps[idx]
    out = base * torch.exp(frac * step)
    return float(out) if as_float else out


def alpha_bar_derivative(schedule: NoiseSchedule, tau: float) -> float:
    """Analytic d alpha_bar / d tau (one-sided from the right at grid points)."""
    pos = tau * schedule.T_max
    idx = min(max(int(np.floor(pos + 1e-9)), 0), schedule.T_max - 1)
    step = float(schedule._log_steps[idx])
    return alpha_bar_continuous(schedule, tau) * step * schedule.T_max
