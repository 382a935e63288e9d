"""Scenario sampling and the two study drivers.

``run_suboptimality`` compares the index policy with the exact optimum on
small fleets; ``run_large_system`` simulates large fleets under the index,
naive, threshold and (optionally) perfect-intervention index policies.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import lru_cache
from importlib import resources

import numpy as np

from . import mdp
from .index import bfrak, build_auxiliary, w_index, w_index_perfect
from .model import FleetSpec, MachineParams, MachineSpec, Mode, SpecError, build_machine
from .policy import Policy, PolicyKind, enumerate_thresholds, naive_policy
from .sim import simulate_batch

log = logging.getLogger(__name__)

MAX_REDRAWS = 100
QUANTILES = ("min", "q1", "median", "q3", "max")


class Study(str, Enum):
    SUBOPTIMALITY = "Suboptimality"
    LARGE_SYSTEM = "LargeSystem"
    MYOPIC = "MyopicComparison"


class ExperimentError(RuntimeError):
    pass


@lru_cache(maxsize=None)
def _tables() -> dict:
    text = resources.files("whittlemaint").joinpath("data/distributions.json").read_text()
    return json.loads(text)


def distribution_table(study: Study | str) -> dict:
    study = Study(study)
    return _tables()["suboptimality" if study is Study.SUBOPTIMALITY else "large_system"]


@dataclass(frozen=True)
class CostCell:
    """One cost configuration.  ``op_case`` None rotates the operation sub-case by instance."""

    op_form: str = "Linear"
    maint_case: int = 1
    failure_band: str = "Default"
    op_case: int | None = None

    def label(self) -> str:
        parts = [self.op_form, f"Case {self.maint_case}"]
        if self.failure_band != "Default":
            parts.insert(0, self.failure_band)
        if self.op_case is not None:
            parts.append(f"op{self.op_case}")
        return "/".join(parts)

    def codes(self) -> list[int]:
        form = {"Linear": 0, "Quadratic": 1}[self.op_form]
        band = {"Default": 0, "Low": 1, "Medium": 2, "High": 3}[self.failure_band]
        return [form, int(self.maint_case), band, -1 if self.op_case is None else int(self.op_case)]


@dataclass(frozen=True)
class ScenarioConfig:
    study: Study
    cells: tuple = (CostCell(),)
    sampler_seed: int = 0
    n_instances: int = 50
    fleet_shape: tuple = (3, 1, 8)  # machines, repairmen, states
    beta: float = 0.95
    mode: Mode = Mode.WITH_FAILURES
    n_replicates: int = 1  # trajectories per sampled fleet
    horizon: int = 520
    threshold_count: int = 8
    epsilon: float = 1e-4
    sim_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "study", Study(self.study))
        object.__setattr__(self, "mode", Mode(self.mode))
        object.__setattr__(self, "cells", tuple(
            c if isinstance(c, CostCell) else CostCell(**c) for c in self.cells))
        object.__setattr__(self, "fleet_shape", tuple(int(v) for v in self.fleet_shape))
        table = distribution_table(self.study)
        for c in self.cells:
            if str(c.maint_case) not in table["maint_intercept"]:
                raise ValueError(f"maintenance case {c.maint_case} not defined for {self.study.value}")
            if c.failure_band not in table["failure_multiplier"]:
                raise ValueError(f"failure band {c.failure_band!r} not defined for {self.study.value}")
            if c.op_form not in ("Linear", "Quadratic"):
                raise ValueError(f"unknown operation form {c.op_form!r}")
        if self.n_instances < 1:
            raise ValueError("n_instances must be >= 1")

    @classmethod
    def default(cls, study: Study | str, **kw) -> "ScenarioConfig":
        """Full cost grid of a study with desk-scale defaults."""
        study = Study(study)
        table = distribution_table(study)
        cases = sorted(int(k) for k in table["maint_intercept"])
        if study is Study.SUBOPTIMALITY:
            cells = tuple(CostCell(form, c) for form in ("Linear", "Quadratic") for c in cases)
            base = dict(fleet_shape=(3, 1, 8))
        else:
            bands = ["High"] if study is Study.MYOPIC else ["Low", "Medium", "High"]
            cells = tuple(CostCell("Linear", c, b) for b in bands for c in cases)
            shape = (50, 3, 25) if study is Study.MYOPIC else (25, 2, 25)
            base = dict(fleet_shape=shape, n_instances=25)
        base.update(kw)
        return cls(study=study, cells=cells, **base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["study"] = self.study.value
        d["mode"] = self.mode.value
        d["cells"] = [asdict(c) for c in self.cells]
        d["fleet_shape"] = list(self.fleet_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if "cells" not in d:
            return cls.default(d.pop("study"), **d)
        return cls(**d)


@dataclass
class RunReport:
    study: Study
    suboptimality_stats: dict = field(default_factory=dict)
    suboptimality_values: dict = field(default_factory=dict)
    policy_comparison: list = field(default_factory=list)
    n_discarded_nonindexable: int = 0
    n_clamped: int = 0
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "study": self.study.value,
            "suboptimality_stats": self.suboptimality_stats,
            "suboptimality_values": self.suboptimality_values,
            "policy_comparison": self.policy_comparison,
            "n_discarded_nonindexable": self.n_discarded_nonindexable,
            "n_clamped": self.n_clamped,
            "failures": self.failures,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        if self.study is Study.SUBOPTIMALITY:
            return suboptimality_csv(self)
        return comparison_csv(self)


# --------------------------------------------------------------------------
# sampling


def _u(rng: np.random.Generator, bounds) -> float:
    lo, hi = bounds
    return float(rng.uniform(lo, hi))


def draw_params(rng: np.random.Generator, table: dict, cell: CostCell, op_case: int, *,
                beta: float, n_states: int, mode: Mode) -> MachineParams:
    """One machine's parameters.  Draw order is fixed so seeds are stable."""
    r = _u(rng, table["r"])
    q = _u(rng, table["q"])
    nu = _u(rng, table["nu"])
    a = _u(rng, table["maint_intercept"][str(cell.maint_case)])
    b = _u(rng, table["maint_slope"])
    e = _u(rng, table["op_intercept"][op_case // 2])
    f = _u(rng, table["op_slope"][op_case % 2])
    g = _u(rng, table["op_quadratic"])
    mult = _u(rng, table["failure_multiplier"][cell.failure_band])
    if cell.op_form == "Linear":
        g = 0.0
    mean_c = a + b * (n_states / 2.0)  # mean of a + b*x over the intervenable states 1..n-1
    fail_cost = mean_c * mult
    if mode is Mode.PURE_DETERIORATION:
        q, fail_cost = 0.0, 0.0
    return MachineParams(beta=beta, n_states=n_states, r=r, q=q, s=float(table["s"]), nu=nu,
                         a=a, b=b, e=e, f=f, g=g, fail_cost=fail_cost, mode=mode)


def _instance_rng(config: ScenarioConfig, cell: CostCell, instance_id: int) -> np.random.Generator:
    study = list(Study).index(config.study)
    ss = np.random.SeedSequence([config.sampler_seed, study, *[c + 1 for c in cell.codes()], instance_id])
    return np.random.Generator(np.random.PCG64(ss))


def _acceptable(spec: MachineSpec, need_perfect: bool) -> bool:
    if not w_index(spec).indexable:
        return False
    return not need_perfect or w_index_perfect(spec).indexable


def sample_fleet(config: ScenarioConfig, cell: CostCell, instance_id: int) -> tuple[FleetSpec, int]:
    """Fleet for one instance plus the number of machine draws rejected on the way."""
    n_machines, n_repairmen, n_states = config.fleet_shape
    table = distribution_table(config.study)
    rng = _instance_rng(config, cell, instance_id)
    op_case = cell.op_case if cell.op_case is not None else instance_id % 4
    need_perfect = config.study is Study.MYOPIC
    machines, discarded = [], 0
    for m in range(n_machines):
        reasons = []
        for _ in range(MAX_REDRAWS):
            params = draw_params(rng, table, cell, op_case, beta=config.beta,
                                 n_states=n_states, mode=config.mode)
            try:
                spec = build_machine(params)
            except SpecError as exc:
                reasons.append(str(exc))
                discarded += 1
                continue
            if _acceptable(spec, need_perfect):
                machines.append(spec)
                break
            reasons.append("H not increasing")
            discarded += 1
        else:
            raise ExperimentError(
                f"{MAX_REDRAWS} consecutive rejected draws for machine {m} of instance {instance_id} "
                f"({cell.label()}); last reasons: {reasons[-3:]}")
    return FleetSpec(machines, n_repairmen), discarded


def sample_scenario(config: ScenarioConfig, instance_id: int, cell: CostCell | None = None) -> FleetSpec:
    return sample_fleet(config, cell or config.cells[0], instance_id)[0]


# --------------------------------------------------------------------------
# studies


def order_stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return {k: float("nan") for k in QUANTILES} | {"n": 0}
    qs = np.quantile(v, [0.0, 0.25, 0.5, 0.75, 1.0])
    return {k: float(x) for k, x in zip(QUANTILES, qs)} | {"n": int(v.size)}


def _index_policy(fleet: FleetSpec, seed: int = 0) -> Policy:
    tables = [w_index(m, machine_id=i) for i, m in enumerate(fleet.machines)]
    return Policy(PolicyKind.INDEX, index_tables=tables, seed=seed, allow_idle=fleet.allow_idle)


def instance_suboptimality(fleet: FleetSpec, epsilon: float) -> float:
    """Raw percentage excess of the index policy over the optimum, from all machines new."""
    opt = mdp.solve_joint(fleet, epsilon)
    v_idx = mdp.evaluate_policy(fleet, _index_policy(fleet), epsilon)
    start = (0,) * len(fleet.machines)
    return mdp.suboptimality(mdp.value_at(v_idx, start), mdp.value_at(opt.value, start))


def run_suboptimality(config: ScenarioConfig) -> RunReport:
    report = RunReport(Study.SUBOPTIMALITY)
    for cell in config.cells:
        vals = []
        for i in range(config.n_instances):
            try:
                fleet, disc = sample_fleet(config, cell, i)
                report.n_discarded_nonindexable += disc
                s = instance_suboptimality(fleet, config.epsilon)
            except (ExperimentError, mdp.NotConverged, mdp.BudgetExceeded, ArithmeticError) as exc:
                report.failures.append({"cell": cell.label(), "instance": i, "error": str(exc)})
                continue
            if s < 0:
                log.info("clamped suboptimality %.3g%% to 0 (%s, instance %d)", s, cell.label(), i)
                report.n_clamped += 1
                s = 0.0
            vals.append(s)
        report.suboptimality_values[cell.label()] = vals
        report.suboptimality_stats[cell.label()] = order_stats(vals)
    return report


def _policies(fleet: FleetSpec, config: ScenarioConfig) -> list[Policy]:
    pols = [_index_policy(fleet, seed=0), naive_policy(seed=1)]
    pols += enumerate_thresholds(fleet, config.threshold_count, seed=2)
    if config.study is Study.MYOPIC:
        tables = [w_index_perfect(m, machine_id=i) for i, m in enumerate(fleet.machines)]
        pols.append(Policy(PolicyKind.MYOPIC, index_tables=tables, seed=2 + config.threshold_count,
                           allow_idle=fleet.allow_idle))
    return pols


def _sim_seed(config: ScenarioConfig, cell: CostCell, instance_id: int) -> int:
    ss = np.random.SeedSequence([config.sim_seed, *[c + 1 for c in cell.codes()], instance_id])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def _ratio(other: float, index: float) -> float:
    return (other - index) / other


def run_large_system(config: ScenarioConfig) -> RunReport:
    report = RunReport(config.study)
    T = config.threshold_count
    for cell in config.cells:
        cost, ints, fails = [], [], []
        for i in range(config.n_instances):
            try:
                fleet, disc = sample_fleet(config, cell, i)
            except ExperimentError as exc:
                report.failures.append({"cell": cell.label(), "instance": i, "error": str(exc)})
                continue
            report.n_discarded_nonindexable += disc
            res = simulate_batch(fleet, _policies(fleet, config), config.horizon, config.n_replicates,
                                 _sim_seed(config, cell, i), scenario_id=f"{cell.label()}#{i}")
            cost.append(res.mean_cost)
            ints.append(res.mean_interventions)
            fails.append(res.mean_failures)
        if not cost:
            continue
        c = np.mean(cost, axis=0)
        n_i = np.mean(ints, axis=0)
        n_f = np.mean(fails, axis=0)
        thr = slice(2, 2 + T)
        row = {
            "failure_band": cell.failure_band, "maint_case": cell.maint_case, "label": cell.label(),
            "n_instances": len(cost),
            "index_cost": float(c[0]), "index_interventions": float(n_i[0]), "index_failures": float(n_f[0]),
            "naive_cost": float(c[1]), "naive_interventions": float(n_i[1]), "naive_failures": float(n_f[1]),
            "threshold_cost": float(c[thr].mean()), "threshold_interventions": float(n_i[thr].mean()),
            "threshold_failures": float(n_f[thr].mean()), "best_threshold": float(c[thr].min()),
        }
        row["ratio_index_naive"] = _ratio(row["naive_cost"], row["index_cost"])
        row["ratio_index_threshold"] = _ratio(row["threshold_cost"], row["index_cost"])
        if config.study is Study.MYOPIC:
            row.update(myopic_cost=float(c[-1]), myopic_interventions=float(n_i[-1]),
                       myopic_failures=float(n_f[-1]))
            row["ratio_index_myopic"] = _ratio(row["myopic_cost"], row["index_cost"])
        report.policy_comparison.append(row)
    return report


def run_study(config: ScenarioConfig) -> RunReport:
    if config.study is Study.SUBOPTIMALITY:
        return run_suboptimality(config)
    return run_large_system(config)


# --------------------------------------------------------------------------
# tables and figure data


def suboptimality_csv(report: RunReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["configuration", "n", *QUANTILES])
    for label, st in report.suboptimality_stats.items():
        w.writerow([label, st["n"], *(f"{st[k]:.3f}" for k in QUANTILES)])
    return buf.getvalue()


COMPARISON_COLUMNS = [
    "failure_band", "maint_case", "n_instances",
    "index_cost", "index_interventions", "index_failures",
    "naive_cost", "naive_interventions", "naive_failures",
    "threshold_cost", "threshold_interventions", "threshold_failures", "best_threshold",
    "ratio_index_naive", "ratio_index_threshold",
]
MYOPIC_COLUMNS = ["myopic_cost", "myopic_interventions", "myopic_failures", "ratio_index_myopic"]


def comparison_csv(report: RunReport) -> str:
    cols = COMPARISON_COLUMNS + (MYOPIC_COLUMNS if report.study is Study.MYOPIC else [])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in report.policy_comparison:
        out = []
        for k in cols:
            v = row[k]
            if k.startswith("ratio"):
                out.append(f"{100 * v:.1f}%")
            elif isinstance(v, float):
                out.append(f"{v:.1f}")
            else:
                out.append(v)
        w.writerow(out)
    return buf.getvalue()


def index_curves_csv(fleet: FleetSpec) -> str:
    """W-index per state, one column per machine."""
    tables = [w_index(m) for m in fleet.machines]
    n = max(m.n_states for m in fleet.machines)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state", *[f"machine_{i + 1}" for i in range(len(tables))]])
    for x in range(n):
        w.writerow([x, *[f"{t.w[x]:.6f}" if t.indexable and x < t.w.size else "" for t in tables]])
    return buf.getvalue()


def intersection_samples(spec: MachineSpec, n_points: int = 41) -> dict:
    """H(x), W(x) and the curves W -> bfrak(x, W) on a grid spanning the indices."""
    t = w_index(spec)
    if not t.indexable:
        raise ExperimentError("machine is not indexable")
    aux = build_auxiliary(spec)
    lo, hi = float(np.min(t.w[1:])), float(np.max(t.w[1:]))
    pad = 0.1 * max(hi - lo, 1.0)
    grid = np.linspace(lo - pad, hi + pad, n_points)
    curves = {str(x): [float(v) for v in bfrak(spec, x, grid, aux)] for x in range(1, spec.n_states)}
    return {"w_grid": grid.tolist(), "h": t.h.tolist(), "w": t.w.tolist(), "bfrak": curves}


def intersection_csv(fleet: FleetSpec) -> str:
    """Per machine and state: H(x), W(x) and bfrak(x, W(x)), which meets H at the index."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["machine", "state", "H", "W", "bfrak_at_W"])
    for i, m in enumerate(fleet.machines):
        t = w_index(m)
        if not t.indexable:
            continue
        aux = build_auxiliary(m)
        for x in range(1, m.n_states):
            w.writerow([i + 1, x, f"{t.h[x]:.6f}", f"{t.w[x]:.6f}", f"{float(bfrak(m, x, t.w[x], aux)):.6f}"])
    return buf.getvalue()


def with_overrides(config: ScenarioConfig, **kw) -> ScenarioConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
