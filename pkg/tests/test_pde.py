import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import integrate

from meanfield.config import PdeConfig, PdeInit
from meanfield.errors import CFLError, ConfigError
from meanfield.grid import DensityGrid
from meanfield.kernels import AggregationSpec, PotentialSpec
from meanfield.pde import (
    FluxOperator,
    barenblatt,
    barenblatt_radius,
    gate_report,
    heat_solution,
    make_grid,
    rhs_flux,
    solve,
    stationary_profile,
    step,
)

FLAT = PotentialSpec(depth=0.0)
NO_AGG = AggregationSpec(kernel_id="none")


def pcfg(**kw):
    base = dict(cells=256, low=-8.0, high=8.0, sigma_inf=0.5, potential=FLAT, aggregation=NO_AGG, T=0.2, snapshots=3)
    base.update(kw)
    return PdeConfig(**base)


def test_zero_density_has_zero_flux():
    cfg = pcfg(potential=PotentialSpec(depth=1.0), aggregation=AggregationSpec(amplitude=1.0))
    g = make_grid(cfg)
    for F in rhs_flux(g, cfg):
        assert np.array_equal(F, np.zeros_like(F))


def test_uniform_interior_flux_vanishes():
    cfg = pcfg(sigma_inf=0.0)
    g = make_grid(cfg).with_values(np.full(256, 1 / 16))
    (F,) = rhs_flux(g, cfg)
    assert np.abs(F).max() == 0.0


def test_gaussian_rhs_second_order():
    D = 0.5 * 0.5**2
    errs = []
    for cells in (128, 256, 512):
        cfg = pcfg(cells=cells, low=-8.0, high=8.0)
        g = make_grid(cfg)
        x = g.centers()[:, 0]
        rho = np.exp(-x**2 / 2) / math.sqrt(2 * math.pi)
        r1 = -x * rho
        r2 = (x**2 - 1) * rho
        exact = D * r2 + (r1**2 + rho * r2)  # D rho'' + (1/2)(rho^2)''
        got = FluxOperator(cfg, g).rhs(rho)
        # the walls truncate an O(1e-13) exact flux; compare on |x| < 6
        inner = np.abs(x) < 6
        errs.append(np.abs(got - exact)[inner].max() / np.abs(exact).max())
    assert errs[0] / errs[1] > 3.5 and errs[1] / errs[2] > 3.5
    assert errs[-1] < 1e-3


def test_mass_drift_per_step():
    cfg = pcfg(cells=200, low=-6.0, high=6.0, potential=PotentialSpec(depth=1.0, width=1.0), aggregation=AggregationSpec(amplitude=1.0))
    g = make_grid(cfg)
    x = g.centers()[:, 0]
    rho = np.exp(-(x - 0.3) ** 2) / math.sqrt(math.pi)
    op = FluxOperator(cfg, g)
    m0 = rho.sum() * g.cell_volume
    for _ in range(50):
        dt, _ = op.dt_limit(rho)
        new, clipped = step(rho, dt, op)
        assert abs(new.sum() * g.cell_volume - rho.sum() * g.cell_volume) < 1e-13
        assert clipped == 0.0
        rho = new
    assert abs(rho.sum() * g.cell_volume - m0) < 1e-13


@pytest.mark.parametrize("sigma, potential, binding", [
    (1.0, FLAT, "diffusion"),
    (0.0, PotentialSpec("quadratic", depth=50.0), "advection"),
])
def test_cfl_error_names_constraint(sigma, potential, binding):
    cfg = pcfg(sigma_inf=sigma, potential=potential, gamma2=0.0 if binding == "advection" else 1.0)
    g = make_grid(cfg)
    x = g.centers()[:, 0]
    rho = np.exp(-x**2 / 2) / math.sqrt(2 * math.pi)
    op = FluxOperator(cfg, g)
    lim, name = op.dt_limit(rho)
    assert name == binding
    with pytest.raises(CFLError) as exc:
        step(rho, 2 * lim, op)
    assert exc.value.constraint == binding and binding in str(exc.value)


def test_T_zero_returns_initial():
    cfg = pcfg(T=0.0)
    res = solve(cfg)
    assert res.times == [0.0] and res.steps == 0
    g = make_grid(cfg)
    x = g.centers()[:, 0]
    ref = np.exp(-x**2 / 2)
    assert np.allclose(res.snapshots[0.0].values, ref / (ref.sum() * g.cell_volume), rtol=1e-15)


def test_even_data_stay_even():
    cfg = pcfg(cells=240, potential=PotentialSpec(depth=1.0), aggregation=AggregationSpec(amplitude=0.8), T=0.3)
    v = solve(cfg).snapshots[0.3].values
    assert np.abs(v - v[::-1]).max() < 1e-13 * v.max()


def test_heat_gate():
    cfg = pcfg(cells=512, gamma2=0.0, sigma_inf=0.8, T=1.0, init=PdeInit("gaussian", std=0.7))
    res = solve(cfg)
    rep = gate_report(cfg, res)
    assert rep["gate"] == "heat" and rep["ok"]
    assert rep["l1_error"] < 1e-3 and rep["mass_drift_per_time"] < 1e-12
    x = res.grid.centers()
    assert heat_solution(x, 0.0, 0.0, 0.7, 0.8).sum() * res.grid.cell_volume == pytest.approx(1, abs=1e-9)


def test_barenblatt_is_an_exact_solution():
    # substitution into rho_t = (1/2)(rho^2)'' inside the support
    t, e = 1.5, 1e-5
    r = barenblatt_radius(t)
    x = np.linspace(-0.8 * r, 0.8 * r, 41)
    rt = (barenblatt(x, t + e) - barenblatt(x, t - e)) / (2 * e)
    h = 1e-4
    sq = lambda y: barenblatt(y, t) ** 2  # noqa: E731
    lap = (sq(x + h) - 2 * sq(x) + sq(x - h)) / h**2
    assert np.abs(rt - 0.5 * lap).max() < 1e-5
    mass, _ = integrate.quad(lambda y: barenblatt(y, t), -r, r)
    assert mass == pytest.approx(1.0, abs=1e-10)


def bcfg(cells):
    return pcfg(cells=cells, low=-4.0, high=4.0, sigma_inf=0.0, T=1.0, snapshots=2, init=PdeInit("barenblatt", t0=1.0))


def test_barenblatt_gate_and_refinement():
    errs = []
    for cells in (256, 512):
        cfg = bcfg(cells)
        rep = gate_report(cfg, solve(cfg))
        assert rep["gate"] == "barenblatt" and rep["mass_ok"]
        errs.append(rep["l1_error"])
    assert errs[1] <= 0.02
    assert errs[0] / errs[1] >= 1.5


def test_porous_medium_decay_exponent():
    cfg = replace(bcfg(512), T=3.0, snapshots=7, low=-5.0, high=5.0)
    res = solve(cfg)
    t = np.array(res.times[1:]) + 1.0
    mx = np.array([res.snapshots[s].values.max() for s in res.times[1:]])
    slope = np.polyfit(np.log(t), np.log(mx), 1)[0]
    assert abs(slope + 1 / 3) < 0.03


def test_stationary_oracle_is_zero_flux():
    spec = PotentialSpec(depth=1.0, width=1.0)
    x = np.linspace(-4, 4, 801)
    rho = stationary_profile(x, spec, 0.7)
    assert integrate.trapezoid(rho, x) == pytest.approx(1.0, abs=1e-5)
    d = np.gradient(rho, x)
    du = 2 * x * np.exp(-x**2)
    flux = (0.5 * 0.7**2 + rho) * d + rho * du
    assert np.abs(flux[5:-5]).max() < 1e-4 * rho.max()


def test_stationary_gate():
    cfg = pcfg(cells=512, low=-4.0, high=4.0, sigma_inf=0.3, potential=PotentialSpec(depth=2.0),
               T=1.0, snapshots=2, init=PdeInit("stationary"))
    rep = gate_report(cfg, solve(cfg))
    assert rep["gate"] == "stationary" and rep["ok"]
    assert rep["l1_drift"] < 1e-3


def test_boundary_mass_guard_and_validation():
    with pytest.raises(ConfigError) as exc:
        solve(pcfg(low=-1.0, high=1.0))
    assert "pde-domain" in exc.value.codes
    with pytest.raises(ConfigError):
        solve(pcfg(cells=1))


def test_upwind_option_is_monotone_but_less_accurate():
    base = pcfg(cells=256, low=-4.0, high=4.0, sigma_inf=0.3, potential=PotentialSpec(depth=2.0),
                T=1.0, snapshots=2, init=PdeInit("stationary"))
    hybrid = gate_report(base, solve(base))["l1_drift"]
    upwind_res = solve(replace(base, advection="upwind"))
    assert min(v.values.min() for v in upwind_res.snapshots.values()) >= 0
    assert gate_report(base, upwind_res)["l1_drift"] > hybrid


def test_records_and_residual():
    cfg = pcfg(potential=PotentialSpec(depth=1.0), aggregation=AggregationSpec(amplitude=0.5), snapshots=5)
    res = solve(cfg)
    assert [r["t"] for r in res.records] == pytest.approx([0, 0.05, 0.1, 0.15, 0.2])
    assert all(abs(r["mass"] - 1) < 1e-12 and r["min"] >= 0 for r in res.records)
    # residual of the snapshots against a higher-order operator is small
    assert all(r["residual_l1"] < 5e-3 for r in res.records[1:])


def test_two_dimensional_heat():
    cfg = PdeConfig(d=2, cells=96, low=-7.0, high=7.0, sigma_inf=0.8, gamma2=0.0, potential=FLAT,
                    aggregation=NO_AGG, T=0.5, snapshots=2)
    res = solve(cfg)
    last = res.snapshots[0.5]
    exact = heat_solution(last.centers(), 0.5, 0.0, 1.0, 0.8)
    assert np.abs(last.values - exact).sum() * last.cell_volume < 5e-3
    assert abs(last.mass - 1) < 1e-12
