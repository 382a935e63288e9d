import json
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from whittlemaint.model import (FleetSpec, MachineParams, MachineSpec, Mode, SpecError, TopState,
                                build_machine, dump_json, intervention_kernel, spec_from_json,
                                validate)

from conftest import random_spec


def params(**kw):
    base = dict(beta=0.95, n_states=8, r=0.02, q=0.01, s=4.0, nu=1.0, a=60.0, b=10.0, e=25.0,
                f=2.0, g=0.0, fail_cost=800.0)
    base.update(kw)
    return MachineParams(**base)


def test_kernel_two_outcomes():
    P = intervention_kernel(3, 1.9436)
    z = math.exp(-1.9436)
    assert P[2, 0] == pytest.approx(1 / (1 + z), abs=1e-12)
    assert P[2, 0] == pytest.approx(0.8748, abs=1e-4)
    assert P[2, 1] == pytest.approx(0.1252, abs=1e-4)
    assert P[2].sum() == pytest.approx(1.0, abs=1e-15)


@pytest.mark.parametrize("nu", [0.1, 1.0, 3.7])
def test_kernel_single_outcome(nu):
    assert intervention_kernel(5, nu)[1, 0] == 1.0


def test_fail_probability_at_top():
    spec = build_machine(params(n_states=25, q=0.0061, s=6.0, r=0.0208))
    assert spec.p_fail[24] == pytest.approx(0.0061 * math.exp(4), rel=1e-14)
    assert spec.p_fail[24] == pytest.approx(0.3331, abs=1e-4)


def test_build_machine_structure():
    spec = build_machine(params())
    x = np.arange(8)
    assert spec.p_fail[0] == 0.0
    np.testing.assert_allclose(spec.p_advance[:-1], 0.02 * (x[:-1] + 1))
    assert spec.p_advance[-1] == 0.0
    np.testing.assert_allclose(spec.maint_cost, 60 + 10 * x)
    np.testing.assert_allclose(spec.op_cost, 25 + 2 * x)
    assert validate(spec) == []


def test_build_machine_is_deterministic():
    a, b = build_machine(params()), build_machine(params())
    for name in ("p_advance", "p_fail", "intervention_kernel", "op_cost", "maint_cost"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_fail_clamp_warns():
    with pytest.warns(UserWarning, match="clamped"):
        spec = build_machine(params(q=0.036, s=2.0))  # only the top state exceeds 1
    assert spec.warnings
    assert spec.p_fail[-1] == 1.0
    assert np.all(spec.p_stay >= -1e-12)


def test_clamp_that_breaks_monotonicity_is_rejected():
    with pytest.warns(UserWarning):
        with pytest.raises(SpecError, match="p_advance not non-decreasing"):
            build_machine(params(q=0.3, s=2.0))


def test_pure_modes():
    pure = build_machine(params(mode="PureDeterioration"))
    assert np.all(pure.p_fail == 0.0) and pure.fail_cost == 0.0
    reset = build_machine(params(mode="PureDeterioration", top_state="reset"))
    assert reset.p_fail[-1] == 1.0 and np.all(reset.p_fail[:-1] == 0.0)
    assert reset.fail_cost == 800.0


def test_validate_advance_monotonicity():
    spec = build_machine(params())
    pa = spec.p_advance.copy()
    pa[0], pa[1] = 0.3, 0.2
    bad = MachineSpec(**{**spec.to_fields(), "p_advance": pa})
    assert "p_advance not non-decreasing at x=1" in validate(bad)


def test_validate_intervention_order():
    spec = build_machine(params())
    P1 = spec.intervention_kernel.copy()
    P1[2, :2] = [0.4, 0.6]
    bad = MachineSpec(**{**spec.to_fields(), "intervention_kernel": P1})
    assert "P¹(2,0) ≤ P¹(2,1)" in validate(bad)


def test_build_machine_rejects_invalid():
    with pytest.raises(SpecError) as err:
        build_machine(params(nu=0.0))
    assert err.value.violations[0].startswith("P¹(2,0)")


def test_generator_validator_round_trip():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        p = params(r=rng.uniform(0.01, 0.025), q=rng.uniform(0.005, 0.015), nu=rng.uniform(1e-3, 2),
                   a=rng.uniform(50, 1200), b=rng.uniform(5, 15), e=rng.uniform(20, 60),
                   f=rng.uniform(1, 12), g=rng.uniform(0.4, 0.6))
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert validate(build_machine(p)) == []


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12),
       mode=st.sampled_from(list(Mode)))
def test_rows_stochastic(seed, n, mode):
    spec = random_spec(np.random.default_rng(seed), n, mode)
    assert validate(spec) == []
    P0 = spec.operation_matrix()
    np.testing.assert_allclose(P0.sum(axis=1), 1.0, atol=1e-12)
    P1 = spec.intervention_kernel
    np.testing.assert_allclose(P1[1:].sum(axis=1), 1.0, atol=1e-12)
    for x in range(2, n):
        assert np.all(np.diff(P1[x, :x]) < 0)


def test_json_round_trip(tmp_path):
    spec = build_machine(params())
    back = spec_from_json(json.loads(dump_json(spec)))
    assert np.array_equal(back.intervention_kernel, spec.intervention_kernel)
    assert back.mode is spec.mode and back.fail_cost == spec.fail_cost
    fleet = FleetSpec([spec, spec], 1)
    path = tmp_path / "fleet.json"
    dump_json(fleet, path)
    again = spec_from_json(json.loads(path.read_text()))
    assert isinstance(again, FleetSpec) and len(again.machines) == 2


def test_params_bundle_json():
    d = {"beta": 0.9, "n_states": 5, "r": 0.02, "q": 0.01, "s": 4, "nu": 1.0, "a": 50, "b": 5,
         "e": 20, "fail_cost": 300}
    spec = spec_from_json(d)
    assert spec.n_states == 5 and spec.beta == 0.9


def test_fleet_repairmen_bounds():
    spec = build_machine(params())
    with pytest.raises(SpecError):
        FleetSpec([spec], 2)
    with pytest.raises(SpecError):
        FleetSpec([spec], 0)


def test_arrays_read_only():
    spec = build_machine(params())
    with pytest.raises(ValueError):
        spec.op_cost[0] = 1.0


def test_maint_cost_extrapolation():
    spec = build_machine(params(n_states=4))
    assert spec.maint_cost_at(4) == pytest.approx(60 + 10 * 4)
    assert spec.top_state is TopState.ABSORB
