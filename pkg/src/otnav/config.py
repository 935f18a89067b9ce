"""Parameter records shared by the planner and the tracking controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Any

import numpy as np

JUMP_RULES = ("pow_manhattan", "disabled")
JUMP_SCOPES = ("local", "dense")


@dataclass(frozen=True)
class CostParams:
    """Closed-form rule for the K x K cell-transition cost.

    Staying costs 0, a move to an adjacent cell costs ``adjacent_cost`` and
    any other move is a jump priced ``jump_base ** manhattan`` (capped at
    ``jump_cap``).  With ``jump_scope="local"`` the flow network only carries
    jump arcs from robot cells to target cells and between cells at most
    ``jump_radius`` apart (Chebyshev); ``"dense"`` carries every pair.
    With ``corner_cutting=False`` a diagonal step is adjacent only when both
    cells sharing its corner are free; otherwise it is priced as a jump.
    """

    adjacent_cost: int | float = 1
    stay_cost: int | float = 0
    jump_base: int | float = 10
    jump_rule: str = "pow_manhattan"
    jump_radius: int = 2
    jump_scope: str = "local"
    jump_cap: int | float | None = 10**12
    obstacle_cost: int | float = 10**6
    connectivity: int = 8
    corner_cutting: bool = True

    def __post_init__(self):
        if self.stay_cost != 0:
            raise ValueError("stay_cost must be 0")
        if not self.adjacent_cost > 0:
            raise ValueError("adjacent_cost must be positive")
        if self.jump_rule not in JUMP_RULES:
            raise ValueError(f"jump_rule must be one of {JUMP_RULES}")
        if self.jump_scope not in JUMP_SCOPES:
            raise ValueError(f"jump_scope must be one of {JUMP_SCOPES}")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.jump_radius < 1:
            raise ValueError("jump_radius must be >= 1")
        if self.jump_rule == "pow_manhattan" and not self.jump_base > 1:
            raise ValueError("jump_base must exceed 1")

    @property
    def jumps_enabled(self) -> bool:
        return self.jump_rule != "disabled"

    @classmethod
    def from_jumps(cls, spec: str, **kwargs) -> "CostParams":
        """Parse the CLI jump switch: ``on``, ``off``, ``dense`` or ``radius=R``."""
        spec = spec.strip().lower()
        if spec == "on":
            return cls(**kwargs)
        if spec == "off":
            return cls(jump_rule="disabled", **kwargs)
        if spec == "dense":
            return cls(jump_scope="dense", **kwargs)
        if spec.startswith("radius="):
            return cls(jump_radius=int(spec.split("=", 1)[1]), **kwargs)
        raise ValueError(f"unknown jump setting {spec!r}")

    def with_jumps(self, spec: str) -> "CostParams":
        base = {f.name: getattr(self, f.name) for f in fields(self)}
        for key in ("jump_rule", "jump_scope", "jump_radius"):
            base.pop(key)
        return CostParams.from_jumps(spec, **base)

    def to_dict(self) -> dict[str, Any]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "CostParams":
        data = dict(data or {})
        jumps = data.pop("jumps", None)
        params = cls(**data)
        return params.with_jumps(jumps) if jumps is not None else params


def _mat(value, default):
    if value is None:
        value = default
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 1:
        arr = np.diag(arr)
    return arr


@dataclass(frozen=True)
class MpcConfig:
    """Weights, horizons and limits of the per-robot contractive MPC.

    Times are in seconds; ``u_bounds`` is ``((v_min, v_max), (w_min, w_max))``
    and ``x_bounds`` the position box ``((x_min, x_max), (y_min, y_max))``.
    ``x_bounds=None`` means "use the grid extent".
    """

    T: float = 2.0
    Tc: float = 0.5
    dt: float = 0.05
    Q1: Any = None
    Q2: Any = None
    P: Any = None
    alpha: float = 0.9
    u_bounds: tuple = ((-3.0, 3.0), (-2 * math.pi, 2 * math.pi))
    x_bounds: tuple | None = None
    contraction_penalty: float = 1e3
    penalty_rounds: int = 3
    box_penalty: float = 1e3
    max_iters: int = 300
    step_size: float = 1.0
    tol: float = 1e-9
    restore_iters: int = 20
    transition_time: float = 1.0
    arrival_tolerance: float = 0.25
    max_time: float = 200.0
    replan_every: int = 1

    def __post_init__(self):
        object.__setattr__(self, "Q1", _mat(self.Q1, [10.0, 10.0]))
        object.__setattr__(self, "Q2", _mat(self.Q2, [0.1, 0.1]))
        object.__setattr__(self, "P", _mat(self.P, [1.0, 1.0]))
        object.__setattr__(
            self, "u_bounds", tuple(tuple(float(b) for b in pair) for pair in self.u_bounds)
        )
        if self.x_bounds is not None:
            object.__setattr__(
                self, "x_bounds", tuple(tuple(float(b) for b in pair) for pair in self.x_bounds)
            )
        if not 0.0 < self.Tc < self.T:
            raise ValueError("need 0 < Tc < T")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        for name in ("T", "Tc"):
            ratio = getattr(self, name) / self.dt
            if abs(ratio - round(ratio)) > 1e-9:
                raise ValueError(f"dt must divide {name}")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        for name in ("Q1", "Q2", "P"):
            m = getattr(self, name)
            if m.shape != (2, 2):
                raise ValueError(f"{name} must be 2x2")
            if np.any(np.linalg.eigvalsh(0.5 * (m + m.T)) <= 0):
                raise ValueError(f"{name} must be positive definite")
        for lo, hi in self.u_bounds:
            if lo > hi:
                raise ValueError("u_bounds must be ordered (lo, hi)")
        if self.arrival_tolerance <= 0 or self.transition_time <= 0:
            raise ValueError("arrival_tolerance and transition_time must be positive")
        if self.replan_every < 1:
            raise ValueError("replan_every must be >= 1")

    @property
    def horizon_steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def control_steps(self) -> int:
        return int(round(self.Tc / self.dt))

    def replace(self, **changes) -> "MpcConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "MpcConfig":
        return cls(**dict(data or {}))

    def __eq__(self, other):
        if not isinstance(other, MpcConfig):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None

