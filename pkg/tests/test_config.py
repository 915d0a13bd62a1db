import json

import pytest
from hypothesis import given, strategies as st

from meanfield.config import (
    InitSpec,
    ModelConfig,
    PdeConfig,
    PdeInit,
    SigmaSchedule,
    SweepPlan,
    dt_budget,
    parse,
    serialize,
    sigma_violations,
    to_flat,
    validate_config,
)
from meanfield.errors import ConfigError
from meanfield.kernels import AggregationSpec, KernelSpec, PotentialSpec
from meanfield.particles import sigma_of_N


def model_text(**flat):
    base = {"model.d": 1, "model.N": 100, "model.beta": 0.25, "model.regime": "b", "sigma.kind": "constant",
            "sigma.inf": 0.5, "model.dt": 1e-3}
    base.update(flat)
    return json.dumps(base)


def codes(text, kind=None):
    with pytest.raises(ConfigError) as exc:
        validate_config(text, kind)
    return exc.value.codes


def test_viscous_regime_accepted():
    cfg = validate_config(model_text())
    assert isinstance(cfg, ModelConfig)
    assert cfg.sigma_N == 0.5


def test_viscous_regime_rejects_large_beta():
    assert "sigma-viscous" in codes(model_text(**{"model.beta": 0.4}))


def test_nonviscous_constant_noise_rejected_in_two_dimensions():
    text = model_text(**{"model.d": 2, "kernel.d": 2, "model.beta": 0.5, "model.regime": "a", "sigma.inf": 0.1})
    text = json.dumps({k: v for k, v in json.loads(text).items() if k != "kernel.d"})
    assert "sigma-nonviscous" in codes(text)


def test_all_violations_reported_at_once():
    c = codes(model_text(**{"model.beta": 1.5, "model.N": 0, "model.dt": -1.0}))
    assert {"beta-range", "particle-count", "step-size"} <= set(c)


def test_unknown_key_and_syntax():
    assert "unknown-key" in codes(model_text(**{"model.zzz": 1}))
    assert "syntax" in codes("{not json")
    assert "syntax" in codes("[1, 2]")


def test_nested_objects_are_flattened():
    nested = {"model": {"N": 50, "beta": 0.25, "regime": "b", "dt": 1e-3}, "sigma": {"kind": "constant", "inf": 0.4}}
    cfg = validate_config(json.dumps(nested))
    assert cfg.N == 50 and cfg.sigma.sigma_inf == 0.4


def test_unbounded_potential_needs_override():
    text = model_text(**{"potential.family": "quadratic"})
    assert "bounded-potential" in codes(text)
    cfg = validate_config(model_text(**{"potential.family": "quadratic", "model.allow_unbounded_potential": True}))
    assert cfg.allow_unbounded_potential


def test_dt_budget_violation_and_growth():
    cfg = validate_config(model_text())
    b_small, info_small = dt_budget(cfg.with_N(100))
    b_big, info_big = dt_budget(cfg.with_N(10_000))
    assert b_big < b_small
    # L_N grows like chi^(d+2) = N^(3 beta) in 1D
    assert info_big["L_N"] / info_small["L_N"] == pytest.approx(100 ** 0.75, rel=0.05)
    assert "dt-budget" in codes(model_text(**{"model.dt": 0.5}))


def test_sigma_schedule_examples():
    cfg = ModelConfig(sigma=SigmaSchedule("constant", 0.5))
    assert sigma_of_N(cfg, 10) == sigma_of_N(cfg, 10_000) == 0.5
    cfg = ModelConfig(sigma=SigmaSchedule("power", 0.0, 1.0, 0.25), regime="a")
    assert sigma_of_N(cfg, 16) == pytest.approx(0.5, rel=1e-15)
    bad = ModelConfig(beta=0.5, sigma=SigmaSchedule("constant", 0.5), regime="a")
    with pytest.raises(ConfigError) as exc:
        sigma_of_N(bad, 16)
    assert exc.value.codes == ["sigma-nonviscous"]


def test_nonviscous_supercritical_beta_needs_fast_decay():
    # beta >= d/(d+2): sigma_N N^(3 beta - 1) -> 0 needs alpha > 3 beta - 1
    assert sigma_violations(SigmaSchedule("power", 0.0, 1.0, 0.4), "a", 0.6, 1)
    assert not sigma_violations(SigmaSchedule("power", 0.0, 1.0, 0.4), "a", 0.45, 1)
    assert not sigma_violations(SigmaSchedule("power", 0.0, 1.0, 0.25), "a", 0.25, 1)


def test_pde_config_validation():
    cfg = validate_config(json.dumps({"pde.cells": 256, "pde.sigma_inf": 0.5}))
    assert isinstance(cfg, PdeConfig) and cfg.cells == 256
    assert "pde-grid" in codes(json.dumps({"pde.cells": 0}))
    assert "pde-cfl" in codes(json.dumps({"pde.cfl": 1.5}))
    assert "pde-init" in codes(json.dumps({"pde.init.profile": "triangle"}))


def plan_dict(**over):
    p = {"plan.N_list": [100, 200, 400], "plan.replicas": 4, "model.regime": "a", "sigma.kind": "power",
         "sigma.inf": 0.0, "sigma.c": 0.5, "sigma.alpha": 0.25, "init.kind": "grid", "model.T": 0.2}
    p.update(over)
    return p


def test_plan_fills_pde_from_model():
    plan = validate_config(json.dumps(plan_dict()))
    assert isinstance(plan, SweepPlan)
    assert plan.pde.sigma_inf == 0.0 and plan.pde.T == 0.2 and plan.pde.d == 1


def test_plan_gating_names_the_clause():
    assert "initial-coupling" in codes(json.dumps(plan_dict(**{"init.kind": "gaussian"})))
    assert "sweep" in codes(json.dumps(plan_dict(**{"plan.N_list": [400, 100]})))
    viscous = plan_dict(**{"model.regime": "b", "sigma.kind": "constant", "sigma.inf": 0.5,
                           "plan.experiment": "weak"})
    assert "compact-support" in codes(json.dumps(viscous))
    ok = dict(viscous, **{"kernel.family": "bspline_compact"})
    assert validate_config(json.dumps(ok)).pde.sigma_inf == 0.5
    mismatch = plan_dict(**{"pde.sigma_inf": 0.3})
    assert "plan-consistency" in codes(json.dumps(mismatch))


models = st.builds(
    ModelConfig,
    d=st.just(1),
    N=st.integers(1, 10**6),
    beta=st.floats(0.01, 0.99),
    gamma1=st.floats(0, 5),
    gamma2=st.floats(0, 5),
    sigma=st.builds(SigmaSchedule, kind=st.sampled_from(["constant", "power"]), sigma_inf=st.floats(0, 2),
                    c=st.floats(0, 2), alpha=st.floats(0.01, 1)),
    T=st.floats(0, 10),
    dt=st.floats(1e-6, 1),
    init=st.builds(InitSpec, kind=st.sampled_from(["lattice", "uniform", "gaussian"]), mean=st.floats(-5, 5),
                   std=st.floats(0.1, 5)),
    seed=st.integers(0, 2**63),
    regime=st.sampled_from(["a", "b"]),
    kernel=st.builds(KernelSpec, kernel_id=st.sampled_from(["gaussian", "bspline_compact"]),
                     length_scale=st.floats(0.1, 3), d=st.just(1)),
    potential=st.builds(PotentialSpec, depth=st.floats(0, 3), width=st.floats(0.1, 3)),
    aggregation=st.builds(AggregationSpec, kernel_id=st.sampled_from(["none", "gaussian_bump"]),
                          amplitude=st.floats(0, 2), range=st.floats(0.1, 3)),
    force_mode=st.sampled_from(["auto", "brute", "cell_list", "mesh"]),
    enforce_dt_budget=st.booleans(),
)


@given(models)
def test_model_round_trip(cfg):
    assert parse(serialize(cfg)) == cfg


@given(st.builds(PdeConfig, cells=st.integers(8, 1024), low=st.one_of(st.none(), st.floats(-10, -1)),
                 high=st.one_of(st.none(), st.floats(1, 10)), sigma_inf=st.floats(0, 2), T=st.floats(0, 5),
                 cfl=st.floats(0.05, 1), init=st.builds(PdeInit, profile=st.sampled_from(["gaussian", "barenblatt"]),
                                                        std=st.floats(0.1, 3), t0=st.floats(0.1, 3))))
def test_pde_round_trip(cfg):
    assert parse(serialize(cfg)) == cfg


def test_validated_round_trip_is_identity():
    cfg = validate_config(model_text(**{"model.seed": 12345, "kernel.family": "bspline_compact"}))
    assert validate_config(serialize(cfg)) == cfg
    plan = validate_config(json.dumps(plan_dict()))
    again = validate_config(serialize(plan))
    assert again == plan
    assert to_flat(again) == to_flat(plan)
