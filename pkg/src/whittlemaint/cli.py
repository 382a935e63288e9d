"""Command-line entry point: ``whittlemaint <verb> [options]``.

Exit codes: 0 success, 1 invalid input spec, 2 solver or budget failure,
64 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Sequence

from . import experiment as ex
from . import mdp
from .index import NearSingularError, w_index
from .model import FleetSpec, MachineSpec, SpecError, spec_from_json, validate
from .policy import PolicyError, enumerate_thresholds, index_policy, myopic_policy, naive_policy
from .sim import simulate_batch

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 64

STUDIES = {"suboptimality": ex.Study.SUBOPTIMALITY, "large-system": ex.Study.LARGE_SYSTEM,
           "myopic": ex.Study.MYOPIC}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def _beta(text: str) -> float:
    v = float(text)
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError(f"beta must lie in (0,1), got {v}")
    return v


def _epsilon(text: str) -> float:
    v = float(text)
    if not v > 0.0:
        raise argparse.ArgumentTypeError(f"epsilon must be positive, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="whittlemaint", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    def common(sp, need_input=True):
        sp.add_argument("--input", required=need_input, help="spec or config JSON")
        sp.add_argument("--output", help="output file (.json or .csv); stdout when omitted")
        sp.add_argument("--beta", type=_beta, help="override the discount factor")
        return sp

    common(sub.add_parser("index", help="W-indices for a machine or fleet"))
    s = common(sub.add_parser("solve", help="exact joint MDP and index-policy suboptimality"))
    s.add_argument("--epsilon", type=_epsilon, default=1e-4)
    s = common(sub.add_parser("simulate", help="Monte Carlo policy comparison"))
    s.add_argument("--policy", choices=["index", "naive", "threshold", "myopic", "all"], default="all")
    s.add_argument("--replicates", type=_positive_int, default=25)
    s.add_argument("--horizon", type=_positive_int, default=520)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threshold-count", type=_positive_int, default=8)
    s = common(sub.add_parser("study", help="suboptimality or large-system study"), need_input=False)
    s.add_argument("--study", choices=sorted(STUDIES), required=False)
    s.add_argument("--instances", type=_positive_int)
    s.add_argument("--replicates", type=_positive_int)
    s.add_argument("--horizon", type=_positive_int)
    s.add_argument("--seed", type=int)
    s.add_argument("--epsilon", type=_epsilon)
    s.add_argument("--threshold-count", type=_positive_int)
    common(sub.add_parser("plot-data", help="index curves and H / bfrak intersection data"))
    common(sub.add_parser("validate", help="check a spec against the model invariants"))
    return p


# --------------------------------------------------------------------------
# helpers


def _load_raw(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise UsageError(f"input file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise SpecError([f"{path}: not valid JSON ({exc})"]) from exc


def _with_beta(raw: dict, beta: float | None) -> dict:
    if beta is None:
        return raw
    if "machines" in raw:
        return {**raw, "machines": [{**m, "beta": beta} for m in raw["machines"]]}
    return {**raw, "beta": beta}


def _load_spec(args) -> MachineSpec | FleetSpec:
    try:
        spec = spec_from_json(_with_beta(_load_raw(args.input), args.beta))
    except (KeyError, TypeError) as exc:
        raise SpecError([f"malformed spec: {exc}"]) from exc
    machines = spec.machines if isinstance(spec, FleetSpec) else (spec,)
    problems = [f"machine {i}: {msg}" for i, m in enumerate(machines) for msg in validate(m)]
    if problems:
        raise SpecError(problems)
    return spec


def _as_fleet(spec) -> FleetSpec:
    return spec if isinstance(spec, FleetSpec) else FleetSpec([spec], 1)


def _emit(text: str, output: str | None) -> None:
    if not text.endswith("\n"):
        text += "\n"
    if output is None:
        sys.stdout.write(text)
    else:
        Path(output).write_text(text)


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2)


def _is_csv(output: str | None) -> bool:
    return output is not None and output.lower().endswith(".csv")


# --------------------------------------------------------------------------
# verbs


def cmd_index(args) -> int:
    spec = _load_spec(args)
    fleet = _as_fleet(spec)
    tables = [w_index(m, machine_id=i) for i, m in enumerate(fleet.machines)]
    bad = [t.machine_id for t in tables if not t.indexable]
    if bad:
        print(f"not indexable (H not increasing): machines {bad}", file=sys.stderr)
    if _is_csv(args.output):
        _emit(ex.index_curves_csv(fleet), args.output)
    else:
        payload = [t.to_dict() for t in tables] if isinstance(spec, FleetSpec) else tables[0].to_dict()
        _emit(_dumps(payload), args.output)
        if args.output is not None and len(tables) > 1:
            Path(args.output).with_suffix(".csv").write_text(ex.index_curves_csv(fleet))
    return EXIT_SOLVER if bad else EXIT_OK


def cmd_solve(args) -> int:
    fleet = _as_fleet(_load_spec(args))
    if len({m.beta for m in fleet.machines}) != 1:
        raise SpecError(["solve needs one discount factor shared by all machines"])
    opt = mdp.solve_joint(fleet, args.epsilon)
    v_idx = mdp.evaluate_policy(fleet, index_policy(fleet), args.epsilon)
    start = (0,) * len(fleet.machines)
    v_opt, v_i = mdp.value_at(opt.value, start), mdp.value_at(v_idx, start)
    out = {
        "n_joint_states": opt.n_joint_states,
        "n_actions": len(opt.actions),
        "iterations": opt.iterations,
        "optimal_value": v_opt,
        "index_value": v_i,
        "suboptimality_pct": mdp.suboptimality(v_i, v_opt),
    }
    _emit(_dumps(out), args.output)
    print(f"suboptimality: {out['suboptimality_pct']:.4f}%", file=sys.stderr)
    return EXIT_OK


def _policy_set(fleet: FleetSpec, which: str, count: int):
    pols = []
    if which in ("index", "all"):
        pols.append(index_policy(fleet, seed=0))
    if which in ("naive", "all"):
        pols.append(naive_policy(seed=1))
    if which in ("threshold", "all"):
        pols.extend(enumerate_thresholds(fleet, count, seed=2))
    if which == "myopic":
        pols.append(myopic_policy(fleet, seed=2 + count))
    return pols


def cmd_simulate(args) -> int:
    fleet = _as_fleet(_load_spec(args))
    res = simulate_batch(fleet, _policy_set(fleet, args.policy, args.threshold_count),
                         args.horizon, args.replicates, args.seed,
                         scenario_id=Path(args.input).stem)
    _emit(res.to_csv() if _is_csv(args.output) else res.to_json(), args.output)
    return EXIT_OK


def cmd_study(args) -> int:
    if args.input:
        raw = _load_raw(args.input)
        if args.study:
            raw["study"] = STUDIES[args.study].value
        try:
            config = ex.ScenarioConfig.from_dict(raw)
        except (TypeError, ValueError, KeyError) as exc:
            raise SpecError([f"bad scenario config: {exc}"]) from exc
    elif args.study:
        config = ex.ScenarioConfig.default(STUDIES[args.study])
    else:
        raise UsageError("study: one of --study or --input is required")
    config = ex.with_overrides(config, n_instances=args.instances, n_replicates=args.replicates,
                               horizon=args.horizon, epsilon=args.epsilon, beta=args.beta,
                               threshold_count=args.threshold_count, sampler_seed=args.seed,
                               sim_seed=args.seed)
    report = ex.run_study(config)
    if args.output is not None and args.output.lower().endswith(".json"):
        _emit(report.to_json(), args.output)
    else:
        _emit(report.to_csv(), args.output)
    print(f"discarded non-indexable draws: {report.n_discarded_nonindexable}; "
          f"failed instances: {len(report.failures)}", file=sys.stderr)
    return EXIT_OK


def cmd_plot_data(args) -> int:
    fleet = _as_fleet(_load_spec(args))
    if _is_csv(args.output):
        _emit(ex.intersection_csv(fleet), args.output)
        return EXIT_OK
    payload = {"machines": [ex.intersection_samples(m) for m in fleet.machines]}
    _emit(_dumps(payload), args.output)
    return EXIT_OK


def cmd_validate(args) -> int:
    spec = _load_spec(args)  # raises SpecError on violations
    n = len(spec.machines) if isinstance(spec, FleetSpec) else 1
    _emit(f"ok: {n} machine(s) valid", args.output)
    return EXIT_OK


VERBS = {"index": cmd_index, "solve": cmd_solve, "simulate": cmd_simulate, "study": cmd_study,
         "plot-data": cmd_plot_data, "validate": cmd_validate}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return VERBS[args.verb](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SpecError as exc:
        for v in exc.violations:
            print(f"invalid: {v}", file=sys.stderr)
        return EXIT_INVALID
    except PolicyError as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (mdp.NotConverged, mdp.BudgetExceeded, mdp.ModelInconsistencyError,
            NearSingularError, ex.ExperimentError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
