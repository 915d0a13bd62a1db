import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from meanfield import testfunctions as tf
from meanfield.config import InitSpec, ModelConfig, SigmaSchedule
from meanfield.diagnostics import (
    DiagnosticsObserver,
    DiagnosticsTrace,
    WeakFormObserver,
    accumulate_AN,
    an_integrand,
    compute_SN,
    doob_bound,
    grad_h_sq_grid,
    martingale_residual_test,
    moment_constants,
    quadratic_form,
    stopping_time,
    submartingale_check,
    survival_fractions,
)
from meanfield.errors import ConsistencyError
from meanfield.kernels import AggregationSpec, KernelSpec, PotentialSpec, grad_sq_norm
from meanfield.particles import ParticleEnsemble, build_kernels, run_replicas, simulate

NO_AGG = AggregationSpec(kernel_id="none")
FLAT = PotentialSpec(depth=0.0)


def cfg(**kw):
    base = dict(N=40, T=0.1, dt=1e-3, sigma=SigmaSchedule("constant", 0.5),
                aggregation=AggregationSpec(amplitude=0.5))
    base.update(kw)
    return ModelConfig(**base)


def traced(c, replica=0, stride=10, **obs):
    o = DiagnosticsObserver(**obs)
    simulate(c, observers=[o], stride=stride, replica=replica)
    return o.trace


def test_quadratic_form_nonnegative():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(2, 100_000)) * rng.lognormal(size=(2, 100_000))
    assert quadratic_form(a, b).min() >= 0
    av, bv = rng.normal(size=(2, 1000, 2))
    assert quadratic_form(av, bv).min() >= 0


def test_integrand_sign_without_external_drift():
    g = np.array([[0.3], [-1.2]])
    assert an_integrand(g, np.zeros_like(g), 0.0, 0.0) == pytest.approx(np.mean(2 * g[:, 0] ** 2))


def test_single_particle_integrand_is_grad_w_norm():
    c = cfg(N=1, potential=FLAT, aggregation=NO_AGG)
    ks = build_kernels(c)
    x = np.array([[0.2]])
    gh = grad_h_sq_grid(x, ks.w_n, cells_per_support=256)
    # ||grad W_N||^2 = chi^(d+2) ||grad W_1||^2
    exact = ks.chi**3 * grad_sq_norm(ks.w1)
    assert gh == pytest.approx(exact, rel=1e-4)
    assert exact == pytest.approx(ks.chi**3 / (4 * math.sqrt(math.pi)))
    o = DiagnosticsObserver(grad_h="pairs")
    simulate(c, ensemble=ParticleEnsemble(x), observers=[o])
    assert o.trace.integrand[0] == pytest.approx(0.25 * exact, rel=1e-12)


def test_accumulate_AN_trapezoid_and_guard():
    tr = DiagnosticsTrace()
    for v in (1.0, 3.0, 2.0):
        accumulate_AN(tr, v, 0.5)
    assert tr.A_N == [0.0, 1.0, 2.25]
    assert tr.times == [0.0, 0.5, 1.0]
    with pytest.raises(ConsistencyError):
        accumulate_AN(tr, -1e-6, 0.5)


def test_trace_exact_properties():
    c = cfg()
    for r in range(5):
        tr = traced(c, replica=r)
        A = np.asarray(tr.A_N)
        assert A.min() >= -1e-9 and np.all(np.diff(A) >= 0)
        assert tr.S_N[0] == tr.hN_l2[0]
        S, M = compute_SN(tr, 0)
        assert S == M
    assert tr.times[0] == 0.0 and tr.times[-1] == pytest.approx(c.T)


def test_S_N_without_external_drift():
    c = cfg(potential=FLAT, aggregation=NO_AGG)
    tr = traced(c)
    assert np.array_equal(np.asarray(tr.drift_integral), np.zeros(len(tr)))
    assert np.allclose(tr.S_N, np.asarray(tr.hN_l2) + np.asarray(tr.A_N), rtol=1e-15, atol=0)


def test_grad_h_grid_matches_pairs():
    c = cfg(N=60)
    a = traced(c, grad_h="grid")
    b = traced(c, grad_h="pairs")
    assert np.allclose(a.grad_hN_l2, b.grad_hN_l2, rtol=1e-3)


def test_stopping_time_examples():
    tr = traced(cfg())
    assert stopping_time(tr, 1e308) is None
    assert stopping_time(tr, tr.S_N[0] - 1.0) == 0.0
    ks = np.quantile(tr.S_N, [0.2, 0.5, 0.8])
    taus = [stopping_time(tr, k) for k in ks]
    vals = [math.inf if t is None else t for t in taus]
    assert vals == sorted(vals)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=30), st.floats(-5, 5), st.floats(0, 3))
def test_stopping_time_monotone_in_threshold(s, k, dk):
    tr = DiagnosticsTrace(times=list(range(len(s))), S_N=s)
    a, b = stopping_time(tr, k), stopping_time(tr, k + dk)
    assert (math.inf if a is None else a) <= (math.inf if b is None else b)


def test_survival_fractions_monotone():
    traces = [traced(cfg(N=30), replica=r) for r in range(8)]
    allS = np.concatenate([t.S_N for t in traces])
    ks = np.quantile(allS, [0.1, 0.4, 0.7, 0.95])
    surv = survival_fractions(traces, ks)
    assert all(b >= a for a, b in zip(surv, surv[1:]))


def weak_runs(c, f, replicas, workers=4):
    def job(r):
        w = WeakFormObserver(f, record_every=max(1, int(round(c.T / c.dt / 4))))
        simulate(c, observers=[w], replica=r)
        return w
    return run_replicas(job, replicas, workers)


def test_martingale_residual_zero_without_noise():
    c = cfg(sigma=SigmaSchedule("constant", 0.0), regime="a")
    f = tf.make("clip_identity")
    runs = weak_runs(c, f, 3)
    for w in runs:
        assert all(v == 0.0 for v in w.values) and w.sup_sq == 0.0


def test_martingale_residual_brownian_variance():
    n, s, T, reps = 50, 0.8, 0.2, 200
    c = cfg(N=n, gamma1=0.0, gamma2=0.0, sigma=SigmaSchedule("constant", s), T=T, dt=2e-3,
            potential=FLAT, aggregation=NO_AGG, init=InitSpec("uniform", low=-0.5, high=0.5))
    # clip_identity is linear on the region the particles visit
    f = tf.make("clip_identity")
    rep = martingale_residual_test(weak_runs(c, f, reps), f, s, T, n)
    var = s**2 * T / n
    assert abs(rep["final_var"] / var - 1) < 3 * math.sqrt(2 / (reps - 1))
    assert rep["plain_ok"] and rep["doob_ok"]
    assert rep["E_sup_sq"] <= doob_bound(s, f.grad_sup, T, n) * 1.5


def test_martingale_test_needs_replicas():
    f = tf.make("bump")
    with pytest.raises(ValueError, match="at least 50"):
        martingale_residual_test([WeakFormObserver(f)] * 10, f, 0.5, 1.0, 10)


def test_doob_statistic_scales_like_one_over_N():
    f = tf.make("tanh")
    esup = []
    for n in (50, 100):
        c = cfg(N=n, T=0.1, dt=2e-3)
        rep = martingale_residual_test(weak_runs(c, f, 100), f, 0.5, c.T, n)
        assert rep["doob_ok"]
        esup.append(rep["E_sup_sq"])
    assert 1.0 <= esup[0] / esup[1] <= 4.0


def test_M_N_martingale_mean():
    reps = 200

    def increments(dt):
        c = cfg(N=50, T=0.2, dt=dt)

        def job(r):
            return np.asarray(traced(c, r, stride=int(round(0.05 / dt)), grad_h="pairs").M_N)

        M = np.array(run_replicas(job, reps, 4))
        return M - M[:, :1]

    a, b = increments(2e-3), increments(1e-3)
    ma, mb = a.mean(0), b.mean(0)
    sea, seb = a.std(0, ddof=1) / math.sqrt(reps), b.std(0, ddof=1) / math.sqrt(reps)
    extrap = 2 * mb - ma
    band = 3 * np.sqrt(4 * seb**2 + sea**2)
    assert np.all(np.abs(extrap) <= band)
    assert np.all(np.abs(mb) <= 3 * seb + 1e-300)


def test_submartingale_at_rest():
    c = cfg(N=1, sigma=SigmaSchedule("constant", 0.0), regime="a", potential=FLAT, aggregation=NO_AGG)
    o = DiagnosticsObserver()
    simulate(c, ensemble=ParticleEnsemble([[0.0]]), observers=[o], stride=20)
    c2, c3 = moment_constants(c)
    tr = o.trace
    sub = np.asarray(tr.moment_phi) + c2 * np.asarray(tr.A_N) + c3 * np.asarray(tr.times)
    assert np.allclose(np.diff(sub), c3 * np.diff(tr.times), rtol=0, atol=1e-15)
    # zero-variance increments: z is +inf for the candidate
    rep = submartingale_check([tr, tr], c2, c3)
    assert rep["submartingale_ok"]


def test_submartingale_ou_mode():
    c = cfg(N=30, gamma2=0.0, T=0.2, dt=2e-3, potential=PotentialSpec("quadratic", depth=1.0),
            allow_unbounded_potential=True)
    c2, c3 = moment_constants(c)
    traces = run_replicas(lambda r: traced(c, r, stride=20), 200, 4)
    rep = submartingale_check(traces, c2, c3)
    assert rep["submartingale_ok"] and rep["supermartingale_ok"]


def test_moment_constants_equal_rates():
    c = cfg(gamma1=1.0, gamma2=1.0)
    c2, c3 = moment_constants(c)
    assert c2 == pytest.approx(0.5)
    assert c3 == pytest.approx(0.5 + 0.25 * 1.5 / 2)
