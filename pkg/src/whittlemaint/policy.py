"""Decision rules for allocating repairmen.

Every rule is expressed as a score table ``score[m, x]`` and an eligibility
mask ``elig[m, x]``: at each epoch the eligible machines with the largest
scores are intervened, up to the number of repairmen, ties broken uniformly
at random.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .index import IndexTable, w_index, w_index_perfect
from .model import FleetSpec


class PolicyKind(str, Enum):
    INDEX = "Index"
    NAIVE = "Naive"
    THRESHOLD = "Threshold"
    MYOPIC = "MyopicPerfect"


class PolicyError(ValueError):
    pass


@dataclass(eq=False)
class Policy:
    kind: PolicyKind
    index_tables: Sequence[IndexTable] | None = None
    levels: Sequence[int] | None = None
    seed: int = 0
    allow_idle: bool = True
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        self.kind = PolicyKind(self.kind)
        if self.kind in (PolicyKind.INDEX, PolicyKind.MYOPIC) and not self.index_tables:
            raise PolicyError(f"{self.kind.value} policy needs index tables")
        if self.kind is PolicyKind.THRESHOLD and self.levels is None:
            raise PolicyError("threshold policy needs levels")
        if self.index_tables is not None:
            for t in self.index_tables:
                if not t.indexable:
                    raise PolicyError(f"machine {t.machine_id} is not indexable")
        self.rng = np.random.default_rng(self.seed)

    @property
    def name(self) -> str:
        if self.kind is PolicyKind.THRESHOLD:
            return f"Threshold{list(self.levels)}"
        return self.kind.value

    def clone(self, seed: int | None = None) -> "Policy":
        return Policy(self.kind, self.index_tables, self.levels,
                      self.seed if seed is None else seed, self.allow_idle)

    def tables(self, n_states: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
        """Score and eligibility arrays, padded to the largest state space."""
        M = len(n_states)
        n_max = max(n_states)
        score = np.zeros((M, n_max))
        elig = np.zeros((M, n_max), dtype=bool)
        for m, n in enumerate(n_states):
            xs = np.arange(n)
            if self.kind in (PolicyKind.INDEX, PolicyKind.MYOPIC):
                w = np.asarray(self.index_tables[m].w, dtype=float)
                if w.shape != (n,):
                    raise PolicyError(f"index table for machine {m} has {w.size} states, expected {n}")
                score[m, :n] = w
                ok = xs > 0
                if self.allow_idle:
                    ok &= w > 0
            elif self.kind is PolicyKind.NAIVE:
                score[m, :n] = xs
                ok = xs > 0
            else:
                score[m, :n] = xs
                ok = (xs > 0) & (xs >= self.levels[m])
            elig[m, :n] = ok
        return score, elig

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "seed": self.seed, "allow_idle": self.allow_idle}
        if self.levels is not None:
            d["levels"] = [int(v) for v in self.levels]
        if self.index_tables is not None:
            d["index_tables"] = [t.machine_id for t in self.index_tables]
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def action_probabilities(self, states: np.ndarray, actions: Sequence[tuple],
                             n_repairmen: int) -> np.ndarray:
        """Exact distribution over ``actions`` at each row of ``states``.

        Uniform random tie-breaking makes every size-k maximising set equally
        likely; that is averaged here rather than sampled.
        """
        states = np.asarray(states)
        N, M = states.shape
        score, elig = self.tables([self._n_states_hint(m, states) for m in range(M)])
        mach = np.arange(M)
        sc = score[mach, states]
        ok = elig[mach, states]
        key = np.where(ok, sc, -np.inf)
        n_ok = ok.sum(axis=1)
        k = np.minimum(n_repairmen, n_ok)
        srt = -np.sort(-key, axis=1)
        thr = np.where(k > 0, srt[np.arange(N), np.maximum(k - 1, 0)], np.inf)
        above = ok & (key > thr[:, None])
        tied = ok & (key == thr[:, None])
        n_above = above.sum(axis=1)
        n_tied = tied.sum(axis=1)
        need = k - n_above
        weight = np.array([1.0 / math.comb(int(g), int(j)) if j >= 0 and g >= j else 0.0
                           for g, j in zip(n_tied, need)])
        P = np.zeros((N, len(actions)))
        for a_i, act in enumerate(actions):
            sel = np.zeros((N, M), dtype=bool)
            sel[:, list(act)] = True
            valid = (sel.sum(axis=1) == k)
            valid &= ~np.any(sel & ~ok, axis=1)
            valid &= np.all(sel | ~above, axis=1)  # every strictly-better machine chosen
            valid &= np.all(~sel | above | tied, axis=1)
            P[valid, a_i] = weight[valid]
        return P

    def _n_states_hint(self, m: int, states: np.ndarray) -> int:
        if self.index_tables is not None:
            return len(self.index_tables[m].w)
        return int(states[:, m].max()) + 1


def select(score_row: np.ndarray, ok_row: np.ndarray, tie: np.ndarray, n_repairmen: int) -> list[int]:
    """Pick up to ``n_repairmen`` eligible machines by (score, tie key), best first."""
    chosen = []
    avail = ok_row.copy()
    for _ in range(n_repairmen):
        if not avail.any():
            break
        key = np.where(avail, score_row, -np.inf)
        cand = avail & (key == key.max())
        m = int(np.argmax(np.where(cand, tie, -1.0)))
        chosen.append(m)
        avail[m] = False
    return chosen


def decide(policy: Policy, states: Sequence[int], n_repairmen: int) -> frozenset:
    states = np.asarray(states, dtype=int)
    n_states = [policy._n_states_hint(m, states[None, :]) if policy.index_tables is not None
                else int(states.max()) + 1 for m in range(states.size)]
    score, elig = policy.tables(n_states)
    mach = np.arange(states.size)
    tie = policy.rng.random(states.size)
    return frozenset(select(score[mach, states], elig[mach, states], tie, n_repairmen))


def index_policy(fleet: FleetSpec, seed: int = 0, **kw) -> Policy:
    tables = [w_index(m, machine_id=i, **kw) for i, m in enumerate(fleet.machines)]
    return Policy(PolicyKind.INDEX, index_tables=tables, seed=seed, allow_idle=fleet.allow_idle)


def myopic_policy(fleet: FleetSpec, seed: int = 0) -> Policy:
    tables = [w_index_perfect(m, machine_id=i) for i, m in enumerate(fleet.machines)]
    return Policy(PolicyKind.MYOPIC, index_tables=tables, seed=seed, allow_idle=fleet.allow_idle)


def naive_policy(seed: int = 0) -> Policy:
    return Policy(PolicyKind.NAIVE, seed=seed)


def threshold_levels(n_states: int, count: int) -> list[int]:
    interior = n_states - 2
    if count < 1:
        raise PolicyError("count must be >= 1")
    if count > interior:
        raise PolicyError(f"{count} thresholds exceed the {interior} interior states")
    raw = [math.floor(n_states * k / (count + 1) + 0.5) for k in range(1, count + 1)]
    return [min(max(v, 1), n_states - 2) for v in raw]


def enumerate_thresholds(fleet: FleetSpec, count: int = 8, seed: int = 0) -> list[Policy]:
    per_machine = [threshold_levels(m.n_states, count) for m in fleet.machines]
    return [Policy(PolicyKind.THRESHOLD, levels=tuple(lv[k] for lv in per_machine), seed=seed + k)
            for k in range(count)]
