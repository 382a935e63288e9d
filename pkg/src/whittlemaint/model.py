"""Machine and fleet specifications.

A machine lives on states ``0..n_states-1`` (0 is as-good-as-new).  Under
operation it stays, advances one state, or fails back to 0; under
intervention it jumps to a random earlier state drawn from a lower-triangular
kernel.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

ROW_TOL = 1e-12


class Mode(str, Enum):
    WITH_FAILURES = "WithFailures"
    PURE_DETERIORATION = "PureDeterioration"


class TopState(str, Enum):
    """Behaviour of the last (truncation) state.

    ``absorb``: the machine self-loops (or fails, when failures are modelled).
    ``reset``: pure-deterioration breakdown state, returns to 0 at cost B.
    """

    ABSORB = "absorb"
    RESET = "reset"


class SpecError(ValueError):
    """Raised when a parameter bundle violates a machine invariant."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__(self.violations[0] if self.violations else "invalid spec")


@dataclass(frozen=True, eq=False)
class MachineSpec:
    beta: float
    n_states: int
    p_advance: np.ndarray
    p_fail: np.ndarray
    intervention_kernel: np.ndarray
    op_cost: np.ndarray
    maint_cost: np.ndarray
    fail_cost: float
    mode: Mode = Mode.WITH_FAILURES
    top_state: TopState = TopState.ABSORB
    warnings: tuple = field(default=())

    def __post_init__(self):
        for name in ("p_advance", "p_fail", "op_cost", "maint_cost"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        kern = np.array(self.intervention_kernel, dtype=float)
        kern.setflags(write=False)
        object.__setattr__(self, "intervention_kernel", kern)
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "top_state", TopState(self.top_state))
        object.__setattr__(self, "n_states", int(self.n_states))
        object.__setattr__(self, "beta", float(self.beta))
        object.__setattr__(self, "fail_cost", float(self.fail_cost))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    @property
    def p_stay(self) -> np.ndarray:
        return 1.0 - self.p_advance - self.p_fail

    def maint_cost_at(self, x: int) -> float:
        """C(x), linearly extrapolated one step past the truncation."""
        if x < self.n_states:
            return float(self.maint_cost[x])
        c = self.maint_cost
        slope = c[-1] - c[-2] if self.n_states > 1 else 0.0
        return float(c[-1] + slope * (x - self.n_states + 1))

    def operation_matrix(self) -> np.ndarray:
        """Dense P0 (n x n)."""
        n = self.n_states
        P = np.zeros((n, n))
        idx = np.arange(n)
        P[idx, idx] += self.p_stay
        P[idx[:-1], idx[:-1] + 1] += self.p_advance[:-1]
        P[:, 0] += self.p_fail
        return P

    def intervention_matrix(self) -> np.ndarray:
        """Dense P1 (n x n); row 0 is a self-loop placeholder."""
        P = self.intervention_kernel.copy()
        P[0, :] = 0.0
        P[0, 0] = 1.0
        return P

    def with_kernel(self, kernel: np.ndarray) -> "MachineSpec":
        return MachineSpec(**{**self.to_fields(), "intervention_kernel": kernel})

    def scaled_costs(self, lam: float) -> "MachineSpec":
        f = self.to_fields()
        f.update(op_cost=self.op_cost * lam, maint_cost=self.maint_cost * lam,
                 fail_cost=self.fail_cost * lam)
        return MachineSpec(**f)

    def to_fields(self) -> dict:
        return dict(beta=self.beta, n_states=self.n_states, p_advance=self.p_advance,
                    p_fail=self.p_fail, intervention_kernel=self.intervention_kernel,
                    op_cost=self.op_cost, maint_cost=self.maint_cost,
                    fail_cost=self.fail_cost, mode=self.mode, top_state=self.top_state,
                    warnings=self.warnings)

    def to_dict(self) -> dict:
        return {
            "beta": self.beta,
            "n_states": self.n_states,
            "p_advance": self.p_advance.tolist(),
            "p_fail": self.p_fail.tolist(),
            "intervention_kernel": self.intervention_kernel.tolist(),
            "op_cost": self.op_cost.tolist(),
            "maint_cost": self.maint_cost.tolist(),
            "fail_cost": self.fail_cost,
            "mode": self.mode.value,
            "top_state": self.top_state.value,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "MachineSpec":
        return cls(
            beta=d["beta"],
            n_states=d["n_states"],
            p_advance=d["p_advance"],
            p_fail=d["p_fail"],
            intervention_kernel=d["intervention_kernel"],
            op_cost=d["op_cost"],
            maint_cost=d["maint_cost"],
            fail_cost=d["fail_cost"],
            mode=d.get("mode", Mode.WITH_FAILURES.value),
            top_state=d.get("top_state", TopState.ABSORB.value),
        )


@dataclass(frozen=True, eq=False)
class FleetSpec:
    machines: tuple
    n_repairmen: int
    allow_idle: bool = True

    def __post_init__(self):
        object.__setattr__(self, "machines", tuple(self.machines))
        if not 1 <= self.n_repairmen <= len(self.machines):
            raise SpecError([f"need 1 <= n_repairmen <= |M|, got {self.n_repairmen} "
                             f"repairmen for {len(self.machines)} machines"])

    def to_dict(self) -> dict:
        return {"machines": [m.to_dict() for m in self.machines],
                "n_repairmen": self.n_repairmen, "allow_idle": self.allow_idle}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FleetSpec":
        return cls(machines=[MachineSpec.from_dict(m) for m in d["machines"]],
                   n_repairmen=int(d["n_repairmen"]), allow_idle=bool(d.get("allow_idle", True)))


@dataclass(frozen=True)
class MachineParams:
    """Raw parameter bundle for the exponential-failure / linear-aging family.

    ``p_fail[x] = q*exp(x/s)`` for x >= 1, ``p_advance[x] = min(r*(x+1), 1-p_fail[x])``,
    ``P1(x, y) ∝ exp(-nu*y)`` for y < x, ``C(x) = a + b*x`` and
    ``K(x) = e + f*x + g*x**2``.
    """

    beta: float
    n_states: int
    r: float
    q: float
    s: float
    nu: float
    a: float
    b: float
    e: float
    f: float = 0.0
    g: float = 0.0
    fail_cost: float = 0.0
    mode: Mode = Mode.WITH_FAILURES
    top_state: TopState = TopState.ABSORB


def intervention_kernel(n_states: int, nu: float) -> np.ndarray:
    """Lower-triangular P1 with exponentially decaying outcome weights."""
    P = np.zeros((n_states, n_states))
    for x in range(1, n_states):
        w = np.exp(-nu * np.arange(x))
        P[x, :x] = w / w.sum()
    return P


def build_machine(params: MachineParams | Mapping[str, Any]) -> MachineSpec:
    if not isinstance(params, MachineParams):
        params = MachineParams(**params)
    p = params
    n = int(p.n_states)
    mode = Mode(p.mode)
    top = TopState(p.top_state)
    notes = []
    xs = np.arange(n, dtype=float)

    p_fail = np.zeros(n)
    if mode is Mode.WITH_FAILURES:
        p_fail[1:] = p.q * np.exp(xs[1:] / p.s)
        if np.any(p_fail > 1.0):
            notes.append(f"p_fail clamped to 1 from x={int(np.argmax(p_fail > 1.0))}")
            p_fail = np.minimum(p_fail, 1.0)
    p_advance = np.minimum(p.r * (xs + 1.0), 1.0 - p_fail)
    clamped = np.nonzero(p.r * (xs + 1.0) > 1.0 - p_fail)[0]
    if clamped.size and clamped[0] < n - 1:
        notes.append(f"p_advance clamped to 1-p_fail from x={int(clamped[0])}")
    p_advance[-1] = 0.0
    fail_cost = p.fail_cost
    if mode is Mode.PURE_DETERIORATION and top is TopState.RESET:
        p_fail[-1] = 1.0
    elif mode is Mode.PURE_DETERIORATION:
        fail_cost = 0.0

    spec = MachineSpec(
        beta=p.beta,
        n_states=n,
        p_advance=p_advance,
        p_fail=p_fail,
        intervention_kernel=intervention_kernel(n, p.nu),
        op_cost=p.e + p.f * xs + p.g * xs ** 2,
        maint_cost=p.a + p.b * xs,
        fail_cost=fail_cost,
        mode=mode,
        top_state=top,
        warnings=tuple(notes),
    )
    for msg in notes:
        warnings.warn(msg, stacklevel=2)
    problems = validate(spec)
    if problems:
        raise SpecError(problems)
    return spec


def validate(spec: MachineSpec) -> list[str]:
    """Return the list of violated invariants (empty when the spec is valid)."""
    out = []
    n = spec.n_states
    if not 0.0 < spec.beta < 1.0:
        out.append(f"beta not in (0,1): {spec.beta}")
    if n < 1:
        return out + ["n_states must be positive"]
    for name in ("p_advance", "p_fail", "op_cost", "maint_cost"):
        if getattr(spec, name).shape != (n,):
            out.append(f"{name} has shape {getattr(spec, name).shape}, expected ({n},)")
    if spec.intervention_kernel.shape != (n, n):
        out.append(f"intervention_kernel has shape {spec.intervention_kernel.shape}, expected ({n}, {n})")
    if out:
        return out

    pa, pf, ps = spec.p_advance, spec.p_fail, spec.p_stay
    reset_top = spec.top_state is TopState.RESET
    for x in range(n):
        if pa[x] < 0 or pf[x] < 0 or ps[x] < -ROW_TOL or ps[x] > 1 + ROW_TOL:
            out.append(f"operation row not stochastic at x={x}")
    if pa[-1] != 0.0:
        out.append(f"p_advance must be 0 at the top state x={n - 1}")
    if pf[0] != 0.0:
        out.append("p_fail must be 0 at x=0")
    if spec.mode is Mode.PURE_DETERIORATION:
        last = n - 1 if reset_top else n
        for x in range(last):
            if pf[x] != 0.0:
                out.append(f"p_fail must be 0 in pure-deterioration mode at x={x}")
                break
    for x in range(1, n - 1):
        if pa[x] < pa[x - 1]:
            out.append(f"p_advance not non-decreasing at x={x}")
            break
    for x in range(1, n):
        if pf[x] < pf[x - 1]:
            out.append(f"p_fail not non-decreasing at x={x}")
            break

    P1 = spec.intervention_kernel
    for x in range(n):
        row = P1[x]
        if np.any(row[x:] != 0.0) or np.any(row < 0):
            out.append(f"P1 row x={x} must be supported on y<x")
            continue
        if x == 0:
            continue
        if abs(row[:x].sum() - 1.0) > ROW_TOL:
            out.append(f"P1 row x={x} sums to {row[:x].sum():.15g}, not 1")
        for y in range(x - 1):
            if not row[y] > row[y + 1]:
                out.append(f"P¹({x},{y}) ≤ P¹({x},{y + 1})")
                break

    for name, arr in (("op_cost", spec.op_cost), ("maint_cost", spec.maint_cost)):
        if np.any(arr < 0):
            out.append(f"{name} negative at x={int(np.argmax(arr < 0))}")
        bad = np.nonzero(np.diff(arr) < 0)[0]
        if bad.size:
            out.append(f"{name} not non-decreasing at x={int(bad[0]) + 1}")
    if spec.fail_cost < 0:
        out.append("fail_cost negative")
    return out


def load_json(path: str | Path) -> MachineSpec | FleetSpec:
    d = json.loads(Path(path).read_text())
    return spec_from_json(d)


def machine_from_json(d: Mapping[str, Any]) -> MachineSpec:
    """Explicit arrays, or a parameter bundle (recognised by its ``r`` key)."""
    if "r" in d:
        return build_machine(MachineParams(**d))
    return MachineSpec.from_dict(d)


def spec_from_json(d: Mapping[str, Any]) -> MachineSpec | FleetSpec:
    if "machines" in d:
        return FleetSpec(machines=[machine_from_json(m) for m in d["machines"]],
                         n_repairmen=int(d["n_repairmen"]), allow_idle=bool(d.get("allow_idle", True)))
    return machine_from_json(d)


def dump_json(spec: MachineSpec | FleetSpec, path: str | Path | None = None) -> str:
    text = json.dumps(spec.to_dict(), indent=2)
    if path is not None:
        Path(path).write_text(text + "\n")
    return text
