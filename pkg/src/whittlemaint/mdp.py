"""Exact dynamic-programming ground truth.

Single machine: the W-charge problem, a Whittle-index oracle by bisection on
the charge and a Gittins-index oracle computed two independent ways.

Fleet: the joint MDP over the product state space, solved by value iteration
with per-machine tensor contractions so the joint kernel is never built.
"""

from __future__ import annotations

import itertools
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .model import FleetSpec, MachineSpec

VI_TOL = 1e-10
BISECT_TOL = 1e-8
MAX_DOUBLINGS = 60


class BudgetExceeded(MemoryError):
    pass


class NotConverged(RuntimeError):
    pass


class ModelInconsistencyError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# single machine


@dataclass
class WChargeSolution:
    w: float
    value: np.ndarray
    operate_set: frozenset
    op_values: np.ndarray = field(repr=False, default=None)
    int_values: np.ndarray = field(repr=False, default=None)


def _machine_arrays(spec: MachineSpec):
    return (np.ascontiguousarray(spec.op_cost), np.ascontiguousarray(spec.maint_cost),
            np.ascontiguousarray(spec.p_stay), np.ascontiguousarray(spec.p_advance),
            np.ascontiguousarray(spec.p_fail), np.ascontiguousarray(spec.intervention_kernel))


def _rho(spec: MachineSpec, timing: str) -> float:
    if timing == "instant":
        return 1.0
    if timing == "period":
        return spec.beta
    raise ValueError(f"timing must be 'instant' or 'period', got {timing!r}")


def _action_values(spec, V, w, rho):
    K, C, ps, pa, pf, P1 = _machine_arrays(spec)
    b = spec.beta
    nxt = np.append(V[1:], 0.0)
    op = K + b * (ps * V + pa * nxt + pf * (spec.fail_cost + V[0]))
    iv = C + w + rho * (P1 @ V)
    iv[0] = np.inf
    return op, iv


def _policy_matrix(spec: MachineSpec, intervene: np.ndarray, w: float, rho: float):
    K, C, ps, pa, pf, P1 = _machine_arrays(spec)
    b = spec.beta
    P0 = spec.operation_matrix()
    cost = np.where(intervene, C + w, K + b * pf * spec.fail_cost)
    M = np.where(intervene[:, None], rho * P1, b * P0)
    return cost, M


def _solve_pi(spec, w, rho, max_iter):
    n = spec.n_states
    intervene = np.zeros(n, dtype=bool)
    for _ in range(max_iter):
        cost, M = _policy_matrix(spec, intervene, w, rho)
        V = np.linalg.solve(np.eye(n) - M, cost)
        op, iv = _action_values(spec, V, w, rho)
        slack = 1e-12 * max(1.0, float(np.max(np.abs(V))))
        # switch only on strict improvement so ties stay with the current action
        better_iv = ~intervene & (iv < op - slack)
        better_op = intervene & (op < iv - slack)
        if not (better_iv.any() or better_op.any()):
            return V
        intervene = (intervene | better_iv) & ~better_op
    raise NotConverged(f"policy iteration did not settle in {max_iter} steps")


def solve_wcharge(spec: MachineSpec, w: float, *, timing: str = "instant", method: str = "vi",
                  tol: float = VI_TOL, max_iter: int = 1_000_000,
                  warm: np.ndarray | None = None) -> WChargeSolution:
    """Solve the single-machine problem with intervention charge ``w``.

    ``timing='instant'``: the intervened machine continues from its outcome
    state in the same epoch.  ``timing='period'``: the outcome is reached one
    discounted period later.  Intervention is not available at state 0.
    ``method='vi'`` is Gauss-Seidel value iteration to absolute ``tol``;
    ``'pi'`` is exact policy iteration, used as an independent cross-check.
    Ties go to operation.
    """
    rho = _rho(spec, timing)
    if method == "pi":
        V = _solve_pi(spec, w, rho, min(max_iter, 10 * spec.n_states + 10))
    elif method == "vi":
        K, C, ps, pa, pf, P1 = _machine_arrays(spec)
        V = np.zeros(spec.n_states) if warm is None else warm.copy()
        it = kernels.wcharge_vi(V, K, C, float(w), ps, pa, pf, spec.fail_cost, P1,
                                spec.beta, rho, tol, max_iter)
        if it >= max_iter:
            raise NotConverged(f"W-charge value iteration hit {max_iter} sweeps")
    else:
        raise ValueError(f"unknown method {method!r}")
    op, iv = _action_values(spec, V, w, rho)
    ops = frozenset(int(x) for x in np.nonzero(op <= iv)[0])
    return WChargeSolution(w=float(w), value=V, operate_set=ops, op_values=op, int_values=iv)


def operate_set(spec: MachineSpec, w: float, **kw) -> frozenset:
    return solve_wcharge(spec, w, **kw).operate_set


def freeze_kernel(spec: MachineSpec, x: int) -> MachineSpec:
    """Spec whose interventions above x land like interventions at x.

    This is the outcome law the closed-form index assumes once the machine has
    run past x, so the Whittle index of the returned spec at x is what the
    closed form computes.
    """
    P1 = spec.intervention_kernel.copy()
    for z in range(x + 1, spec.n_states):
        P1[z, :] = 0.0
        P1[z, :x] = spec.intervention_kernel[x, :x]
    return spec.with_kernel(P1)


def whittle_oracle(spec: MachineSpec, x: int, *, timing: str = "instant",
                   freeze: bool = False, method: str = "vi", tol: float = BISECT_TOL) -> float:
    """Smallest charge under which operating at ``x`` is optimal, by bisection.

    Assumes x's membership in the operate set switches once along the charge
    axis (indexability).  State 0 has no intervention; ``-C(0)`` is returned
    for it, matching the closed-form convention.
    """
    if x == 0:
        return -float(spec.maint_cost[0])
    if freeze:
        spec = freeze_kernel(spec, x)
    K, C = spec.op_cost, spec.maint_cost
    annuity = float(np.max(np.abs(K))) / (1.0 - spec.beta)
    lo = -float(np.max(np.abs(C))) - annuity
    hi = spec.fail_cost + annuity + float(np.max(np.abs(C)))

    warm = {"lo": None, "hi": None}

    def operates(w, side):
        sol = solve_wcharge(spec, w, timing=timing, method=method, warm=warm[side])
        warm[side] = sol.value
        return x in sol.operate_set

    width = max(hi - lo, 1.0)
    for _ in range(MAX_DOUBLINGS):
        if not operates(lo, "lo"):
            break
        lo -= width
        width *= 2
    else:
        raise RuntimeError(f"lower bracket expansion failed at x={x}")
    width = max(hi - lo, 1.0)
    for _ in range(MAX_DOUBLINGS):
        if operates(hi, "hi"):
            break
        hi += width
        width *= 2
    else:
        raise RuntimeError(f"upper bracket expansion failed at x={x}")

    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if operates(mid, "hi"):
            hi = mid
        else:
            lo = mid
    return hi


def _first_passage_terms(spec: MachineSpec, x: int):
    """Discounted quantities for the run from 0 until first reaching x (linear solves)."""
    b, B = spec.beta, spec.fail_cost
    if x == 0:
        return 0.0, 1.0
    P0 = spec.operation_matrix()[:x, :x]  # transitions among transient states 0..x-1
    A = np.eye(x) - b * P0
    run_cost = spec.op_cost[:x] + b * spec.p_fail[:x] * B
    cost = np.linalg.solve(A, run_cost)
    hit = np.zeros(x)
    hit[x - 1] = b * spec.p_advance[x - 1]
    disc = np.linalg.solve(A, hit)
    return cost[0], disc[0]


def gittins_closed(spec: MachineSpec, x: int) -> float:
    """G(x) with the stopping time 'first return to x or first visit to x+1'."""
    b, B = spec.beta, spec.fail_cost
    ps, pa, pf = spec.p_stay[x], spec.p_advance[x], spec.p_fail[x]
    Cx, Cn = spec.maint_cost_at(x), spec.maint_cost_at(x + 1)
    k0, e0 = _first_passage_terms(spec, x)
    if x == 0:
        num = spec.op_cost[0] + b * ps * Cx + b * pa * Cn - Cx
        return num / (1.0 - b)
    num = (spec.op_cost[x] + b * pf * (B + k0) + b * ps * Cx + b * pa * Cn + b * pf * e0 * Cx - Cx)
    den = 1.0 - (b * ps + b * pa + b * pf * e0)
    return num / den


def gittins_stopping(spec: MachineSpec, x: int, tol: float = 1e-10) -> float:
    """G(x) as the optimal stopping rate over all stopping times tau >= 1.

    For a trial rate lam, value iteration solves the retire-or-continue
    problem (retire at z pays C(z), continuing pays K - lam*(1-beta)); G(x) is
    the smallest lam at which continuing one step from x is no worse than
    retiring there.  Bisection to relative ``tol``.
    """
    K, C, ps, pa, pf, _ = _machine_arrays(spec)
    b, B = spec.beta, spec.fail_cost
    V = C.copy()

    def excess(lam):
        kernels.stopping_vi(V, K, C, lam, ps, pa, pf, B, b, VI_TOL * max(1.0, abs(lam)), 100_000_000)
        nxt = V[x + 1] if x + 1 < spec.n_states else 0.0
        cont = K[x] - lam * (1.0 - b) + b * (ps[x] * V[x] + pa[x] * nxt + pf[x] * (B + V[0]))
        return cont - C[x]

    span = float(np.max(np.abs(K)) + B + np.max(np.abs(C))) / (1.0 - b) + 1.0
    lo, hi = -span, span
    while excess(hi) > 0:
        hi += span
    while excess(lo) <= 0:
        lo -= span
    while hi - lo > tol * max(1.0, abs(hi)):
        mid = 0.5 * (lo + hi)
        if excess(mid) <= 0:
            hi = mid
        else:
            lo = mid
    return hi


def gittins_oracle(spec: MachineSpec, x: int, rtol: float = 1e-6) -> float:
    g = gittins_closed(spec, x)
    g2 = gittins_stopping(spec, x)
    if abs(g - g2) > rtol * max(1.0, abs(g)):
        raise ModelInconsistencyError(
            f"G({x}) disagreement: first-return form {g:.10g} vs optimal stopping {g2:.10g}")
    return g


# --------------------------------------------------------------------------
# joint fleet MDP


@dataclass
class JointMdp:
    shape: tuple
    actions: list
    value: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float
    runtime: float

    @property
    def n_joint_states(self) -> int:
        return int(np.prod(self.shape))

    def summary(self) -> dict:
        return {"n_joint_states": self.n_joint_states, "n_actions": len(self.actions),
                "iterations": self.iterations, "residual": self.residual,
                "runtime_s": round(self.runtime, 3)}

    def summary_json(self) -> str:
        return json.dumps(self.summary())


def joint_actions(n_machines: int, n_repairmen: int) -> list:
    """Intervention sets of size <= n_repairmen.

    Ordered by size, then by the 0/1 action vector ascending, so the first
    minimiser is the preferred one on ties.
    """
    acts = []
    for k in range(n_repairmen + 1):
        group = list(itertools.combinations(range(n_machines), k))
        group.sort(key=lambda c: tuple(int(i in c) for i in range(n_machines)))
        acts.extend(group)
    return acts


class _Joint:
    def __init__(self, fleet: FleetSpec, budget: float):
        self.fleet = fleet
        self.machines = fleet.machines
        self.shape = tuple(m.n_states for m in self.machines)
        self.actions = joint_actions(len(self.machines), fleet.n_repairmen)
        size = float(np.prod(self.shape)) * len(self.actions)
        if size > budget:
            raise BudgetExceeded(f"joint problem needs {size:.3g} expected-value entries "
                                 f"(budget {budget:.3g})")
        betas = {m.beta for m in self.machines}
        if len(betas) != 1:
            raise ValueError("joint MDP needs a common discount factor")
        self.beta = betas.pop()
        self.P0 = [m.operation_matrix() for m in self.machines]
        self.P1 = [m.intervention_matrix() for m in self.machines]
        M = len(self.machines)
        op_cost = [m.op_cost + m.beta * m.p_fail * m.fail_cost for m in self.machines]
        int_cost = []
        for m in self.machines:
            c = m.maint_cost.astype(float).copy()
            c[0] = np.inf
            int_cost.append(c)
        self.costs = []
        for act in self.actions:
            total = np.zeros(self.shape)
            for i in range(M):
                vec = int_cost[i] if i in act else op_cost[i]
                view = [1] * M
                view[i] = -1
                total = total + vec.reshape(view)
            self.costs.append(total)

    def expect(self, V: np.ndarray, act) -> np.ndarray:
        out = V
        for i in range(len(self.machines)):
            P = self.P1[i] if i in act else self.P0[i]
            out = np.moveaxis(np.tensordot(P, out, axes=([1], [i])), 0, i)
        return out

    def q_values(self, V):
        return np.stack([c + self.beta * self.expect(V, a) for c, a in zip(self.costs, self.actions)])


def _stop(diff, V, beta, epsilon):
    return diff * beta / (1.0 - beta) < epsilon * max(1.0, float(np.max(np.abs(V))))


def solve_joint(fleet: FleetSpec, epsilon: float = 1e-4, *, max_iter: int = 1_000_000,
                budget: float = 1e8) -> JointMdp:
    t0 = time.perf_counter()
    J = _Joint(fleet, budget)
    V = np.zeros(J.shape)
    diff = np.inf
    for it in range(1, max_iter + 1):
        Q = J.q_values(V)
        Vn = Q.min(axis=0)
        diff = float(np.max(np.abs(Vn - V)))
        V = Vn
        if _stop(diff, V, J.beta, epsilon):
            break
    else:
        raise NotConverged(f"value iteration did not converge in {max_iter} sweeps")
    Q = J.q_values(V)
    policy = np.argmin(Q, axis=0)
    return JointMdp(shape=J.shape, actions=J.actions, value=V, policy=policy, iterations=it,
                    residual=diff, runtime=time.perf_counter() - t0)


def joint_states(shape) -> np.ndarray:
    """All joint states as rows, C order."""
    grids = np.indices(shape).reshape(len(shape), -1).T
    return grids


def evaluate_policy(fleet: FleetSpec, policy, epsilon: float = 1e-4, *, max_iter: int = 1_000_000,
                    budget: float = 1e8) -> np.ndarray:
    """Exact discounted value of a stationary (possibly tie-randomised) policy.

    ``policy`` is either a ``Policy`` (its tie-breaking is averaged exactly), a
    callable ``states (N, M) -> probabilities (N, |actions|)``, or an integer
    array of action indices per joint state (as in ``JointMdp.policy``).
    """
    J = _Joint(fleet, budget)
    probs = _policy_probabilities(J, policy)
    V = np.zeros(J.shape)
    used = [k for k in range(len(J.actions)) if np.any(probs[k] > 0)]
    for it in range(1, max_iter + 1):
        Vn = np.zeros(J.shape)
        for k in used:
            p = probs[k]
            q = J.costs[k] + J.beta * J.expect(V, J.actions[k])
            Vn += p * np.where(p > 0, q, 0.0)
        diff = float(np.max(np.abs(Vn - V)))
        V = Vn
        if _stop(diff, V, J.beta, epsilon):
            return V
    raise NotConverged(f"policy evaluation did not converge in {max_iter} sweeps")


def _policy_probabilities(J: _Joint, policy) -> np.ndarray:
    shape = J.shape
    nA = len(J.actions)
    if isinstance(policy, np.ndarray) and policy.dtype.kind in "iu":
        pol = policy.reshape(shape)
        return np.stack([(pol == k).astype(float) for k in range(nA)])
    states = joint_states(shape)
    if hasattr(policy, "action_probabilities"):
        P = policy.action_probabilities(states, J.actions, J.fleet.n_repairmen)
    else:
        P = np.asarray(policy(states))
    if P.shape != (states.shape[0], nA):
        raise ValueError(f"policy returned {P.shape}, expected {(states.shape[0], nA)}")
    if not np.allclose(P.sum(axis=1), 1.0):
        raise ValueError("policy probabilities must sum to 1 per state")
    return P.T.reshape((nA,) + shape)


def suboptimality(v_policy: float, v_opt: float) -> float:
    """Percentage cost excess of a policy over the optimum."""
    return 100.0 * (v_policy - v_opt) / v_opt if v_opt != 0 else math.copysign(0.0, v_policy - v_opt)


def value_at(V: np.ndarray, state) -> float:
    return float(V[tuple(state)])

