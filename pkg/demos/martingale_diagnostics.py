"""Watching the particle system through its diagnostics.

A small viscous system is run many times.  For each replica we track the
L2 norm of the mollified empirical density, the nonnegative process A_N
built from it, and the weak-form residual M_N(f) for a smooth test
function f.  The residual should behave like a martingale: its mean stays
at zero within sampling error and its second moment scales like 1/N,
under the Doob bound 4 sigma^2 |grad f|^2 T / N.

Run with ``python demos/martingale_diagnostics.py``.
"""

import numpy as np

from meanfield import testfunctions as tf
from meanfield.config import ModelConfig, SigmaSchedule
from meanfield.diagnostics import (
    DiagnosticsObserver,
    WeakFormObserver,
    martingale_residual_test,
    stopping_time,
    survival_fractions,
)
from meanfield.kernels import AggregationSpec
from meanfield.particles import run_replicas, simulate

SIGMA, T, DT, REPLICAS = 0.5, 0.2, 2e-3, 60


def model(N, seed=11):
    return ModelConfig(N=N, sigma=SigmaSchedule("constant", SIGMA), T=T, dt=DT,
                       aggregation=AggregationSpec(amplitude=0.5), seed=seed)


def diagnostics(N):
    c = model(N)

    def job(r):
        o = DiagnosticsObserver()
        simulate(c, observers=[o], stride=10, replica=r)
        return o.trace

    traces = run_replicas(job, REPLICAS, 1)
    tr = traces[0]
    print(f"\nN={N}, replica 0")
    print("     t    ||h_N||^2      A_N        S_N")
    for t, h, a, s in zip(tr.times, tr.hN_l2, tr.A_N, tr.S_N):
        print(f"  {t:5.3f}  {h:9.4f}  {a:9.4f}  {s:9.4f}")
    levels = np.quantile(np.concatenate([t.S_N for t in traces]), [0.5, 0.9, 0.99])
    print("  first exit of S_N above level k:", ", ".join(
        f"k={k:.3f}: {stopping_time(tr, k)}" for k in levels))
    surv = survival_fractions(traces, levels)
    print("  fraction of replicas with tau_k > T:", ", ".join(f"{p:.2f}" for p in surv))


def martingale(N, f):
    c = model(N)
    stride = int(round(T / DT / 4))

    def job(r):
        w = WeakFormObserver(f, record_every=stride)
        simulate(c, observers=[w], replica=r)
        return w

    rep = martingale_residual_test(run_replicas(job, REPLICAS, 1), f, SIGMA, T, N)
    print(f"  N={N:4d}  final mean {rep['final_mean']:+.2e} +- {rep['final_se']:.1e}"
          f"   E sup M^2 {rep['E_sup_sq']:.2e}   Doob bound {rep['doob_bound']:.2e}")
    return rep


def main():
    diagnostics(50)
    f = tf.make("tanh")
    print(f"\nweak-form residual for f = {f.name}, {REPLICAS} replicas")
    a, b = martingale(100, f), martingale(400, f)
    print(f"  ratio of E sup M^2 (N=100 over N=400): {a['E_sup_sq'] / b['E_sup_sq']:.2f}, 1/N scaling predicts 4")


if __name__ == "__main__":
    main()
