import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meanfield.config import InitSpec, ModelConfig, SigmaSchedule
from meanfield.errors import BlowUpError, ConfigError
from meanfield.forces import brute_field, cell_list_field, pairwise_force
from meanfield.kernels import AggregationSpec, KernelSpec, PotentialSpec
from meanfield.particles import (
    DriftModel,
    ParticleEnsemble,
    build_kernels,
    drift_at,
    em_step,
    initial_positions,
    sigma_of_N,
    simulate,
)

NO_AGG = AggregationSpec(kernel_id="none")
ZERO_U = PotentialSpec(depth=0.0)
QUAD = PotentialSpec(potential_id="quadratic", depth=1.0)


def cfg(**kw):
    base = dict(N=50, T=0.05, dt=1e-3, sigma=SigmaSchedule("constant", 0.5))
    base.update(kw)
    return ModelConfig(**base)


def test_sigma_of_N_examples():
    assert sigma_of_N(cfg(), 10) == 0.5
    c = cfg(regime="a", sigma=SigmaSchedule("power", 0.0, 1.0, 0.25))
    assert sigma_of_N(c, 16) == pytest.approx(0.5, rel=1e-15)
    with pytest.raises(ConfigError) as exc:
        sigma_of_N(cfg(regime="a", beta=0.5), 16)
    assert exc.value.codes == ["sigma-nonviscous"]


def test_ou_drift_without_interaction():
    c = cfg(gamma2=0.0, gamma1=1.5, potential=QUAD, allow_unbounded_potential=True)
    ks = build_kernels(c)
    x = np.linspace(-2, 2, 50)[:, None]
    ens = ParticleEnsemble(x)
    for k in (0, 17, 49):
        assert drift_at(ens, k, ks, c) == pytest.approx(-1.5 * x[k])


def test_single_particle_has_no_interaction():
    c = cfg(N=1, gamma2=3.0, potential=PotentialSpec(depth=2.0, width=1.5),
            aggregation=AggregationSpec(amplitude=1.0, range=0.7))
    ks = build_kernels(c)
    ens = ParticleEnsemble([[0.4]])
    assert np.array_equal(drift_at(ens, 0, ks, c), -c.gamma1 * ks.u.gradient(np.array([0.4])))
    assert np.array_equal(DriftModel(c, ks)(ens.positions)[0], -c.gamma1 * ks.u.gradient(np.array([0.4])))


def test_two_particle_drift_by_hand():
    a, g1, g2, s = 0.3, 1.2, 0.8, 1.0
    c = cfg(N=2, gamma1=g1, gamma2=g2, aggregation=NO_AGG, potential=PotentialSpec(depth=1.0, width=1.0))
    ks = build_kernels(c)
    chi = 2 ** 0.25
    # V_1 is a centred gaussian of variance 2 s^2, V_N = chi V_1(chi z)
    def vprime(z):
        u = chi * z
        return chi**2 * (-u / (2 * s**2)) * np.exp(-u**2 / (4 * s**2)) / math.sqrt(4 * math.pi * s**2)

    def uprime(x):
        return 2 * x * np.exp(-x**2)

    ens = ParticleEnsemble([[-a], [a]])
    d1 = float(drift_at(ens, 0, ks, c)[0])
    d2 = float(drift_at(ens, 1, ks, c)[0])
    assert d1 == pytest.approx(-g1 * uprime(-a) - 0.5 * g2 * vprime(-2 * a), rel=1e-12)
    assert d2 == pytest.approx(-d1, rel=1e-14)
    assert vprime(-2 * a) > 0  # repulsion pushes particle 1 left
    full = DriftModel(c, ks)(ens.positions)[:, 0]
    assert full == pytest.approx([d1, d2], rel=1e-13)


@pytest.mark.parametrize("mode", ["brute", "cell_list", "mesh"])
def test_drift_model_matches_direct_sum(mode):
    c = cfg(N=120, force_mode=mode, kernel=KernelSpec("bspline_compact"), aggregation=AggregationSpec(amplitude=0.6))
    ks = build_kernels(c)
    x = initial_positions(c)
    ens = ParticleEnsemble(x)
    direct = np.array([drift_at(ens, k, ks, c) for k in range(c.N)])
    tol = 1e-12 if mode != "mesh" else 5e-3 * np.abs(direct).max()
    assert np.abs(DriftModel(c, ks)(x) - direct).max() < tol


def test_frozen_deterministic_step():
    c = cfg(sigma=SigmaSchedule("constant", 0.0), gamma1=0.0, gamma2=0.0)
    ks = build_kernels(c)
    ens = ParticleEnsemble(initial_positions(c))
    out = em_step(ens, 1e-2, ks, c)
    assert np.array_equal(out.positions, ens.positions)
    assert out.step == 1 and out.t == pytest.approx(1e-2)


def test_brownian_increment_variance():
    n, m, dt = 10_000, 20, 1e-2
    c = cfg(N=n, gamma1=0.0, gamma2=0.0, sigma=SigmaSchedule("constant", 1.0), T=m * dt, dt=dt,
            init=InitSpec("lattice"), potential=ZERO_U, aggregation=NO_AGG)
    res = simulate(c)
    inc = res.snapshots[max(res.snapshots)] - res.snapshots[0.0]
    var = inc.var(ddof=1)
    # chi-square: var/m dt has sd sqrt(2/(n-1))
    assert abs(var / (m * dt) - 1) < 3 * math.sqrt(2 / (n - 1))


def test_ou_moments():
    n, g1, s, T, x0 = 10_000, 1.0, 0.7, 0.5, 1.0
    c = cfg(N=n, gamma1=g1, gamma2=0.0, sigma=SigmaSchedule("constant", s), T=T, dt=1e-3,
            potential=QUAD, allow_unbounded_potential=True,
            aggregation=NO_AGG, seed=2)
    x = simulate(c, ensemble=ParticleEnsemble(np.full((n, 1), x0), seed=c.seed)).final.positions[:, 0]
    mean = x0 * math.exp(-g1 * T)
    var = s**2 * (1 - math.exp(-2 * g1 * T)) / (2 * g1)
    assert abs(x.mean() - mean) < 3 * math.sqrt(var / n)
    assert abs(x.var(ddof=1) / var - 1) < 3 * math.sqrt(2 / (n - 1))


def test_T_zero_single_snapshot():
    c = cfg(T=0.0)
    res = simulate(c)
    assert list(res.snapshots) == [0.0]
    assert np.array_equal(res.snapshots[0.0], initial_positions(c))


def test_same_seed_bit_identical_and_seed_matters():
    c = cfg(N=80, aggregation=AggregationSpec(amplitude=0.5))
    a = simulate(c).final.positions
    b = simulate(c).final.positions
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, simulate(replace(c, seed=1)).final.positions)


class Recorder:
    def __init__(self):
        self.times = []

    def observe(self, ens, info):
        assert not ens.positions.flags.writeable
        self.times.append(info["t"])


def test_observer_stride_does_not_change_trajectory():
    c = cfg(N=60)
    r1, r7 = Recorder(), Recorder()
    a = simulate(c, observers=[r1], stride=1).final.positions
    b = simulate(c, observers=[r7], stride=7).final.positions
    assert a.tobytes() == b.tobytes()
    assert len(r1.times) == 51 and r7.times[-1] == pytest.approx(c.T)


def test_translation_equivariance():
    c = cfg(N=40, potential=ZERO_U, aggregation=AggregationSpec(amplitude=0.5))
    x0 = initial_positions(c)
    v = np.array([0.8125])
    a = simulate(c, ensemble=ParticleEnsemble(x0)).final.positions
    b = simulate(c, ensemble=ParticleEnsemble(x0 + v)).final.positions
    assert np.abs(b - (a + v)).max() < 1e-12


@settings(max_examples=10)
@given(st.permutations(list(range(12))))
def test_exchange_symmetry(perm):
    c = cfg(N=12, T=0.02, aggregation=AggregationSpec(amplitude=0.5))
    x0 = initial_positions(c)
    perm = np.asarray(perm)
    base = simulate(c, ensemble=ParticleEnsemble(x0)).final
    swapped = simulate(c, ensemble=ParticleEnsemble(x0[perm], labels=perm)).final
    assert np.array_equal(swapped.positions, base.positions[perm])


def test_blow_up_reports_index_and_partial():
    c = cfg(N=20, T=50.0, dt=0.1, potential=PotentialSpec("quadratic", depth=100.0),
            allow_unbounded_potential=True, enforce_dt_budget=False, aggregation=NO_AGG)
    with pytest.raises(BlowUpError) as exc, np.errstate(over="ignore", invalid="ignore"):
        simulate(c, snapshot_times=[0.0, 1.0, 50.0])
    e = exc.value
    assert 0 <= e.index < 20 and 0 < e.time <= 50.0
    assert 0.0 in e.partial.snapshots and np.isfinite(e.partial.final.positions).all()


def test_dt_budget_enforced():
    with pytest.raises(ConfigError) as exc:
        simulate(cfg(dt=0.5, T=1.0))
    assert "dt-budget" in exc.value.codes


def test_initial_laws():
    lat = initial_positions(cfg(N=4, init=InitSpec("lattice", low=0.0, high=1.0)))
    assert lat[:, 0] == pytest.approx([0.125, 0.375, 0.625, 0.875])
    u = initial_positions(cfg(N=1000, init=InitSpec("uniform", low=-2.0, high=3.0)))
    assert u.min() >= -2 and u.max() <= 3
    with pytest.raises(ConfigError):
        initial_positions(cfg(init=InitSpec("grid")))
    # initial draw does not depend on the noise
    a = initial_positions(cfg(sigma=SigmaSchedule("constant", 0.1)))
    b = initial_positions(cfg(sigma=SigmaSchedule("constant", 0.9)))
    assert np.array_equal(a, b)


def test_pairwise_force_modes_agree_compact():
    c = cfg(N=200, kernel=KernelSpec("bspline_compact"), init=InitSpec("uniform", low=-1.0, high=1.0))
    ks = build_kernels(c)
    x = initial_positions(c)
    assert np.abs(pairwise_force(x, ks.v_n, "brute") - pairwise_force(x, ks.v_n, "cell_list")).max() < 1e-12


def test_pairwise_force_gaussian_within_truncation():
    c = cfg(N=300, beta=0.3, init=InitSpec("uniform", low=-1.0, high=1.0))
    ks = build_kernels(c)
    x = initial_positions(c)
    diff = np.abs(brute_field(x, ks.v_n) - cell_list_field(x, ks.v_n)).max()
    assert diff < 1e-9 * np.abs(brute_field(x, ks.v_n)).max() + 1e-12


@pytest.mark.parametrize("kernel", ["gaussian", "bspline_compact"])
def test_isolated_particles_feel_nothing(kernel):
    c = cfg(N=5, kernel=KernelSpec(kernel))
    ks = build_kernels(c)
    x = 1e3 * np.arange(5.0)[:, None]
    ens = ParticleEnsemble(x)
    assert np.array_equal(pairwise_force(ens, ks.v_n, "cell_list"), np.zeros_like(x))
    assert np.abs(pairwise_force(ens, ks.v_n, "brute")).max() == 0.0


def test_two_dimensional_run():
    c = cfg(d=2, N=64, beta=0.25, kernel=KernelSpec("gaussian", d=2), init=InitSpec("uniform"),
            aggregation=AggregationSpec(amplitude=0.5), force_mode="cell_list")
    res = simulate(c)
    b = simulate(replace(c, force_mode="brute"))
    assert res.final.positions.shape == (64, 2)
    assert np.abs(res.final.positions - b.final.positions).max() < 1e-10
