"""Closed-form W-indices for a single machine.

The chain is: per-state ratios (delta, kappa, gamma) -> discounted first
passage quantities between states -> the Gittins-type function H -> the
W-index, which trades H against the cost of a policy that always intervenes
on arrival at x.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .model import MachineSpec, Mode, TopState

DENOM_FLOOR = 1e-12
MONOTONE_TOL = 1e-9


class Variant(str, Enum):
    FAILURES = "Failures"
    PURE = "PureDeterioration"
    PERFECT = "PerfectIntervention"


class NearSingularError(ArithmeticError):
    def __init__(self, what: str, state: int, value: float):
        self.state = state
        super().__init__(f"{what} = {value:.3e} below floor at state {state}")


@dataclass(frozen=True, eq=False)
class AuxiliaryTables:
    """Discounted passage quantities under operation.

    ``e_beta_yx[y, x]`` is E[beta^tau(y,x)] and ``k_yx[y, x]`` is the expected
    discounted running cost (failure costs included) accrued before first
    reaching x from y, for y < x.  Entries with y >= x are zero except the
    diagonal of ``e_beta_yx``, which is 1.
    """

    delta: np.ndarray
    kappa: np.ndarray
    gamma: np.ndarray
    e_beta_0x: np.ndarray
    e_beta_yx: np.ndarray
    k_0x: np.ndarray
    k_yx: np.ndarray
    e_step: np.ndarray
    k_step: np.ndarray


@dataclass(frozen=True, eq=False)
class IndexTable:
    w: np.ndarray
    h: np.ndarray
    indexable: bool
    variant: Variant
    machine_id: int | str | None = None

    @property
    def w_monotone(self) -> bool:
        """Whether W is non-decreasing over x >= 1 (within tolerance)."""
        if self.w.size < 3:
            return True
        return bool(np.all(np.diff(self.w[1:]) >= -MONOTONE_TOL * np.maximum(1.0, np.abs(self.w[2:]))))

    def to_dict(self) -> dict:
        return {
            "machine_id": self.machine_id,
            "variant": self.variant.value,
            "indexable": self.indexable,
            "w": self.w.tolist(),
            "h": self.h.tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def _ratios(spec: MachineSpec):
    b = spec.beta
    denom = 1.0 - b * spec.p_stay
    delta = b * spec.p_advance / denom
    kappa = spec.op_cost / denom
    gamma = b * spec.p_fail / denom
    gamma[0] = 0.0
    return delta, kappa, gamma


def build_auxiliary(spec: MachineSpec, floor: float = DENOM_FLOOR) -> AuxiliaryTables:
    n = spec.n_states
    B = spec.fail_cost
    delta, kappa, gamma = _ratios(spec)

    # prod_lt[x] = prod_{z<x} delta(z);  renewal[x] = 1 - sum_{i<x} gamma(i) prod_lt[i]
    prod_lt = np.ones(n)
    renewal = np.ones(n)
    cost_sum = np.zeros(n)
    for x in range(1, n):
        prod_lt[x] = prod_lt[x - 1] * delta[x - 1]
        renewal[x] = renewal[x - 1] - gamma[x - 1] * prod_lt[x - 1]
        cost_sum[x] = cost_sum[x - 1] + (kappa[x - 1] + gamma[x - 1] * B) * prod_lt[x - 1]
    for x in range(n):
        if renewal[x] < floor:
            raise NearSingularError("1 - sum gamma*prod delta", x, renewal[x])

    e0x = prod_lt / renewal
    k0x = cost_sum / renewal

    e_yx = np.zeros((n, n))
    for y in range(n):
        e_yx[y, y] = 1.0
        run = 1.0
        for x in range(y + 1, n):
            run *= delta[x - 1]
            e_yx[y, x] = run * renewal[y] / renewal[x]

    e_step = np.zeros(n)
    k_step = np.zeros(n)
    for y in range(n - 1):
        d = 1.0 - gamma[y] * e0x[y]
        if d < floor:
            raise NearSingularError("1 - gamma*E[beta^tau(0,x)]", y, d)
        e_step[y] = e_yx[y, y + 1]
        k_step[y] = (kappa[y] + gamma[y] * (k0x[y] + B)) / d

    k_yx = np.zeros((n, n))
    for x in range(1, n):
        for y in range(x - 1, -1, -1):
            k_yx[y, x] = k_step[y] + e_step[y] * k_yx[y + 1, x]

    return AuxiliaryTables(delta=delta, kappa=kappa, gamma=gamma, e_beta_0x=e0x,
                           e_beta_yx=e_yx, k_0x=k0x, k_yx=k_yx, e_step=e_step, k_step=k_step)


def h_function(spec: MachineSpec, aux: AuxiliaryTables, literal_failure_term: bool = False) -> np.ndarray:
    """H(x): cost rate of operating until the next visit to x or x+1, then intervening.

    The failure branch is discounted by beta (the machine is back at 0 one
    period later).  ``literal_failure_term=True`` drops that factor.
    """
    b = spec.beta
    n = spec.n_states
    K, B = spec.op_cost, spec.fail_cost
    ps, pa, pf = spec.p_stay, spec.p_advance, spec.p_fail
    C = np.array([spec.maint_cost_at(x) for x in range(n + 1)])
    fail_w = 1.0 if literal_failure_term else b

    h = np.empty(n)
    h[0] = (K[0] + b * ps[0] * C[0] + b * pa[0] * C[1] - C[0]) / (1.0 - b)
    for x in range(1, n):
        e0 = aux.e_beta_0x[x]
        num = (K[x] + fail_w * pf[x] * (aux.k_0x[x] + B)
               + b * ps[x] * C[x] + b * pa[x] * C[x + 1]
               + b * pf[x] * e0 * C[x] - C[x])
        h[x] = num / (1.0 - (b * (1.0 - pf[x]) + b * pf[x] * e0))
    return h


def is_increasing(h: np.ndarray, tol: float = MONOTONE_TOL) -> bool:
    return bool(np.all(np.diff(h) > -tol))


def cycle_terms(spec: MachineSpec, aux: AuxiliaryTables) -> tuple[np.ndarray, np.ndarray]:
    """E_{y<x}[beta^tau(y,x)] and E_{y<x}[K(y, tau(y,x))] under the intervention kernel."""
    P1 = spec.intervention_kernel
    n = spec.n_states
    eb = np.zeros(n)
    ek = np.zeros(n)
    for x in range(1, n):
        eb[x] = P1[x, :x] @ aux.e_beta_yx[:x, x]
        ek[x] = P1[x, :x] @ aux.k_yx[:x, x]
    return eb, ek


def bfrak(spec: MachineSpec, x: int, w: float | np.ndarray, aux: AuxiliaryTables | None = None):
    """Charge-inclusive cost of always intervening on arrival at x; increasing in w."""
    if x < 1:
        raise ValueError("defined for x >= 1")
    aux = aux if aux is not None else build_auxiliary(spec)
    eb, ek = cycle_terms(spec, aux)
    return (np.asarray(w) + ek[x] + eb[x] * spec.maint_cost[x]) / (1.0 - eb[x])


def _state0(spec: MachineSpec, h: np.ndarray, w0: str) -> float:
    if w0 == "neg_maint":
        return -float(spec.maint_cost[0])
    if w0 == "h":
        return float(h[0])
    raise ValueError(f"unknown w0 convention {w0!r}")


def w_index_failures(spec: MachineSpec, *, w0: str = "neg_maint",
                     literal_failure_term: bool = False,
                     variant: Variant = Variant.FAILURES,
                     machine_id=None) -> IndexTable:
    aux = build_auxiliary(spec)
    h = h_function(spec, aux, literal_failure_term=literal_failure_term)
    if not is_increasing(h):
        return IndexTable(w=np.empty(0), h=h, indexable=False, variant=variant, machine_id=machine_id)
    eb, ek = cycle_terms(spec, aux)
    C = spec.maint_cost
    w = h * (1.0 - eb) - eb * C - ek
    w[0] = _state0(spec, h, w0)
    return IndexTable(w=w, h=h, indexable=True, variant=variant, machine_id=machine_id)


def w_index_pure(spec: MachineSpec, *, w0: str = "neg_maint", machine_id=None) -> IndexTable:
    """Failure-free closed form; sums written out over delta products and kappa."""
    if np.any(spec.p_fail != 0.0):
        raise ValueError("pure-deterioration index needs p_fail == 0 everywhere "
                         "(use w_index_failures for a resetting top state)")
    b = spec.beta
    n = spec.n_states
    K, P1 = spec.op_cost, spec.intervention_kernel
    ps, pa = spec.p_stay, spec.p_advance
    C = np.array([spec.maint_cost_at(x) for x in range(n + 1)])
    delta, kappa, _ = _ratios(spec)

    h = (K + b * ps * C[:n] + b * pa * C[1:] - C[:n]) / (1.0 - b)
    if not is_increasing(h):
        return IndexTable(w=np.empty(0), h=h, indexable=False, variant=Variant.PURE, machine_id=machine_id)

    w = np.empty(n)
    for x in range(1, n):
        reach = 0.0
        running = 0.0
        for y in range(x):
            reach += P1[x, y] * np.prod(delta[y:x])
            acc = 0.0
            for hh in range(y, x):
                acc += kappa[hh] * np.prod(delta[y:hh])
            running += P1[x, y] * acc
        lead = (K[x] + b * pa[x] * (C[x + 1] - C[x])) / (1.0 - b)
        w[x] = lead * (1.0 - reach) - running - C[x]
    w[0] = _state0(spec, h, w0)
    return IndexTable(w=w, h=h, indexable=True, variant=Variant.PURE, machine_id=machine_id)


def perfect_kernel(n_states: int) -> np.ndarray:
    P = np.zeros((n_states, n_states))
    P[1:, 0] = 1.0
    return P


def w_index_perfect(spec: MachineSpec, *, w0: str = "neg_maint", machine_id=None) -> IndexTable:
    """Indices computed as if every intervention restored state 0."""
    perfect = spec.with_kernel(perfect_kernel(spec.n_states))
    t = w_index_failures(perfect, w0=w0, machine_id=machine_id)
    return IndexTable(w=t.w, h=t.h, indexable=t.indexable, variant=Variant.PERFECT,
                      machine_id=machine_id)


def w_index(spec: MachineSpec, **kw) -> IndexTable:
    """Dispatch on the machine's mode."""
    if spec.mode is Mode.PURE_DETERIORATION and spec.top_state is not TopState.RESET:
        return w_index_pure(spec, **kw)
    return w_index_failures(spec, **kw)
