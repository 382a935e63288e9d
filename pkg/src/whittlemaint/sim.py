"""Monte Carlo simulation of a fleet under one or more policies.

All policies in a batch see the same uniforms: for replicate ``r`` the
operation draw and the intervention-outcome draw of machine ``m`` at period
``t`` are fixed by ``(seed, r)``, so policy differences are not masked by
sampling noise.  Tie-breaking uniforms come from a separate stream keyed by
the policy's own seed.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .model import FleetSpec
from .policy import Policy

CHUNK_CELLS = 2_000_000  # uniforms per array per chunk
_TIE_TAG = 0x7E


@dataclass(frozen=True)
class Trajectory:
    horizon: int
    discounted_cost: float
    n_interventions: int
    n_failures: int
    seed: int


@dataclass
class BatchResult:
    policies: list[str]
    horizon: int
    n_replicates: int
    seed: int
    cost: np.ndarray  # (n_policies, n_replicates)
    n_interventions: np.ndarray
    n_failures: np.ndarray
    scenario_id: str | None = None
    extra: dict = field(default_factory=dict)

    @property
    def mean_cost(self) -> np.ndarray:
        return self.cost.mean(axis=1)

    @property
    def mean_interventions(self) -> np.ndarray:
        return self.n_interventions.mean(axis=1)

    @property
    def mean_failures(self) -> np.ndarray:
        return self.n_failures.mean(axis=1)

    def std_error(self) -> np.ndarray:
        if self.n_replicates < 2:
            return np.full(len(self.policies), np.nan)
        return self.cost.std(axis=1, ddof=1) / np.sqrt(self.n_replicates)

    def rows(self) -> list[dict]:
        return [{
            "scenario_id": self.scenario_id,
            "policy": name,
            "mean_cost": float(self.mean_cost[i]),
            "mean_interventions": float(self.mean_interventions[i]),
            "mean_failures": float(self.mean_failures[i]),
            "n_replicates": self.n_replicates,
            "seed": self.seed,
        } for i, name in enumerate(self.policies)]

    def to_json(self) -> str:
        return json.dumps(self.rows(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["scenario_id", "policy", "cost", "interventions", "failures", "n_replicates", "seed"])
        for r in self.rows():
            w.writerow([r["scenario_id"] or "", r["policy"], f"{r['mean_cost']:.6f}",
                        f"{r['mean_interventions']:.4f}", f"{r['mean_failures']:.4f}",
                        r["n_replicates"], r["seed"]])
        return buf.getvalue()

    def trajectory(self, policy_idx: int, rep: int) -> Trajectory:
        return Trajectory(self.horizon, float(self.cost[policy_idx, rep]),
                          int(self.n_interventions[policy_idx, rep]),
                          int(self.n_failures[policy_idx, rep]), self.seed)


def _fleet_arrays(fleet: FleetSpec):
    ms = fleet.machines
    M = len(ms)
    n = max(m.n_states for m in ms)
    pa = np.zeros((M, n))
    pf = np.zeros((M, n))
    K = np.zeros((M, n))
    C = np.zeros((M, n))
    cdf1 = np.ones((M, n, n))
    for i, m in enumerate(ms):
        k = m.n_states
        pa[i, :k] = m.p_advance
        pf[i, :k] = m.p_fail
        K[i, :k] = m.op_cost
        C[i, :k] = m.maint_cost
        cs = np.cumsum(m.intervention_kernel, axis=1)
        for x in range(1, k):
            cs[x, x - 1:] = 1.0  # exact top so a draw never lands at or above x
        cdf1[i, :k, :k] = cs
    B = np.array([m.fail_cost for m in ms], dtype=float)
    beta = np.array([m.beta for m in ms], dtype=float)
    return pa, pf, K, C, cdf1, B, beta


def _uniforms(seed: int, reps: range, horizon: int, M: int):
    u_op = np.empty((len(reps), horizon, M))
    u_int = np.empty((len(reps), horizon, M))
    for j, r in enumerate(reps):
        g = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, r])))
        u_op[j] = g.random((horizon, M))
        u_int[j] = g.random((horizon, M))
    return u_op, u_int


def _tie_uniforms(seed: int, policy_seed: int, reps: range, horizon: int, M: int):
    out = np.empty((len(reps), horizon, M))
    for j, r in enumerate(reps):
        ss = np.random.SeedSequence([seed, r, _TIE_TAG, policy_seed])
        out[j] = np.random.Generator(np.random.PCG64(ss)).random((horizon, M))
    return out


def simulate_batch(fleet: FleetSpec, policies: Sequence[Policy], horizon: int, n_replicates: int,
                   seed: int, *, scenario_id: str | None = None, use_numba: bool | None = None) -> BatchResult:
    if horizon < 1 or n_replicates < 1:
        raise ValueError("horizon and n_replicates must be >= 1")
    pa, pf, K, C, cdf1, B, beta = _fleet_arrays(fleet)
    M, n = pa.shape
    n_states = [m.n_states for m in fleet.machines]
    tables = []
    for p in policies:
        score, elig = p.tables(n_states)
        if score.shape[1] < n:
            score = np.pad(score, ((0, 0), (0, n - score.shape[1])))
            elig = np.pad(elig, ((0, 0), (0, n - elig.shape[1])))
        tables.append((np.ascontiguousarray(score), np.ascontiguousarray(elig)))
    if use_numba is None:
        run = kernels.simulate_chunk
    else:
        run = kernels.simulate_loops if use_numba else kernels.simulate_numpy

    P = len(policies)
    cost = np.zeros((P, n_replicates))
    n_int = np.zeros((P, n_replicates), dtype=np.int64)
    n_fail = np.zeros((P, n_replicates), dtype=np.int64)
    chunk = max(1, CHUNK_CELLS // (horizon * M))
    R = fleet.n_repairmen
    for start in range(0, n_replicates, chunk):
        reps = range(start, min(start + chunk, n_replicates))
        sl = slice(reps.start, reps.stop)
        u_op, u_int = _uniforms(seed, reps, horizon, M)
        states0 = np.zeros((len(reps), M), dtype=np.int64)
        for i, (p, (score, elig)) in enumerate(zip(policies, tables)):
            u_tie = _tie_uniforms(seed, p.seed, reps, horizon, M)
            c = np.empty(len(reps))
            ni = np.empty(len(reps), dtype=np.int64)
            nf = np.empty(len(reps), dtype=np.int64)
            run(states0, score, elig, pa, pf, cdf1, K, C, B, beta, R, u_op, u_int, u_tie, c, ni, nf)
            cost[i, sl] = c
            n_int[i, sl] = ni
            n_fail[i, sl] = nf
    return BatchResult(policies=[p.name for p in policies], horizon=horizon,
                       n_replicates=n_replicates, seed=seed, cost=cost,
                       n_interventions=n_int, n_failures=n_fail, scenario_id=scenario_id)


def simulate(fleet: FleetSpec, policy: Policy, horizon: int, seed: int, **kw) -> Trajectory:
    """One trajectory; identical to replicate 0 of ``simulate_batch`` with the same seed."""
    return simulate_batch(fleet, [policy], horizon, 1, seed, **kw).trajectory(0, 0)
