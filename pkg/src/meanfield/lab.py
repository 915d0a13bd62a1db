"""Law-of-large-numbers sweeps: particle replicas against one PDE solution.

One :class:`SweepPlan` fixes a particle model template, the matching PDE
and a list of particle counts.  The PDE is solved once on the checkpoint
times; every ``(N, replica)`` job samples its initial positions from the
gridded initial density, runs the particle system and measures, at every
checkpoint, the grid L2 distance between ``h_N`` and ``rho``, the pairing
gaps for the plan's test functions and the bounded-Lipschitz interval.
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from . import pde as pdemod
from . import testfunctions
from .config import dt_budget, plan_violations
from .empirical import bl_distance, mollified_field, pairing
from .errors import ConfigError, NumericalError
from .particles import build_kernels, run_replicas, simulate

log = logging.getLogger(__name__)


def checkpoint_times(plan):
    """``plan.checkpoints`` uniform times on ``[0, T]`` (both ends included)."""
    T = plan.model.T
    if plan.checkpoints <= 1 or T == 0:
        return [float(T)] if plan.checkpoints == 1 and T > 0 else [0.0]
    return [float(t) for t in np.linspace(0.0, T, plan.checkpoints)]


def check_plan(plan):
    bad = list(plan_violations(plan))
    if plan.model.T != plan.pde.T:
        bad.append(("plan-consistency", "model and PDE horizons T differ"))
    if not bad and plan.model.enforce_dt_budget:
        # the budget shrinks with N, so the largest N decides
        budget, _ = dt_budget(plan.model.with_N(max(plan.N_list)))
        if plan.model.dt > budget:
            bad.append(("dt-budget", f"dt={plan.model.dt:g} exceeds the budget {budget:.3g} at N={max(plan.N_list)}"))
    if bad:
        raise ConfigError(bad)


def reference_solution(plan, times=None):
    """Solve the plan's PDE once at the checkpoint times."""
    times = checkpoint_times(plan) if times is None else times
    cfg = replace(plan.pde, T=max(max(times), 0.0))
    return pdemod.solve(cfg, times=times)


def l2_gap(positions, w_n, rho):
    """``||W_N * X_N - rho||_2^2`` by quadrature on the cells of ``rho``.

    The mollified density is evaluated at the cell centres of ``rho``; mass
    of ``h_N`` leaving the box is not counted.
    """
    h = mollified_field(positions, w_n, rho, check_coverage=False)
    return h.l2_sq(rho)


def _test_functions(plan):
    return [testfunctions.make(name, plan.model.d) for name in plan.test_functions]


def _measure(x, t, ref, kernels, fs, want_l2, want_weak):
    rho = ref.at(t)
    out = {}
    if want_l2:
        out["l2"] = l2_gap(x, kernels.w_n, rho)
    if want_weak:
        out["gaps"] = [pairing(x, f) - pairing(rho, f) for f in fs]
        lo, up = bl_distance(x, rho.with_values(rho.values / rho.mass))
        out["bl"] = (lo, up)
    return out


def run_sweep(plan, ref=None, workers=None, what=None):
    """Run every ``(N, replica)`` job of ``plan``.

    Returns
    -------
    dict
        ``times``, ``ref``, ``runs`` (``{N: [per-replica dict or None]}``),
        ``failures`` (list of ``{N, replica, error}``) and ``failed``.
    """
    check_plan(plan)
    what = what or plan.experiment
    want_l2 = what in ("l2", "both")
    want_weak = what in ("weak", "both")
    times = checkpoint_times(plan)
    failures = []
    if ref is None:
        try:
            ref = reference_solution(plan, times)
        except NumericalError as exc:
            log.error("PDE failed: %s", exc)
            return {"times": times, "ref": getattr(exc, "partial", None), "runs": {}, "failed": True,
                    "failures": [{"N": None, "replica": None, "error": f"pde: {exc}"}]}
    fs = _test_functions(plan)
    configs = {N: plan.model.with_N(N) for N in plan.N_list}
    kernels = {N: build_kernels(cfg) for N, cfg in configs.items()}
    jobs = [(N, r) for N in plan.N_list for r in range(plan.replicas)]
    init_grid = ref.at(0.0)

    def job(i):
        N, r = jobs[i]
        cfg = configs[N]
        try:
            res = simulate(cfg, kernels[N], snapshot_times=times, replica=r, init_grid=init_grid)
        except NumericalError as exc:
            return {"error": f"{type(exc).__name__}: {exc}"}
        snaps = res.snapshots
        keys = sorted(snaps)
        rec = {"l2": [], "gaps": [], "bl": []}
        for t, key in zip(times, keys):
            m = _measure(snaps[key], t, ref, kernels[N], fs, want_l2, want_weak)
            for k, v in m.items():
                rec[k].append(v)
        return rec

    workers = plan.workers if workers is None else workers
    results = run_replicas(job, len(jobs), workers)
    runs = {N: [] for N in plan.N_list}
    for (N, r), rec in zip(jobs, results):
        if "error" in rec:
            failures.append({"N": N, "replica": r, "error": rec["error"]})
            runs[N].append(None)
        else:
            runs[N].append(rec)
    return {"times": times, "ref": ref, "runs": runs, "failures": failures, "failed": bool(failures)}


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else math.nan
    return float(v.mean()), se


def l2_table(sweep):
    """Rows ``{N, mean, se, replicas}`` of ``E sup_t ||h_N - rho||^2``."""
    rows = []
    for N, recs in sweep["runs"].items():
        sups = [max(r["l2"]) for r in recs if r is not None]
        mean, se = _mean_se(sups)
        rows.append({"N": N, "mean": mean, "se": se, "replicas": len(sups)})
    return rows


def weak_tables(sweep, names):
    """Pairing-gap rows ``{N, f, t, mean, se}`` and BL rows ``{N, t, lower, upper, upper_se}``."""
    weak, bl = [], []
    times = sweep["times"]
    for N, recs in sweep["runs"].items():
        ok = [r for r in recs if r is not None]
        for j, t in enumerate(times):
            for i, name in enumerate(names):
                gaps = [abs(r["gaps"][j][i]) for r in ok]
                mean, se = _mean_se(gaps)
                weak.append({"N": N, "f": name, "t": t, "mean": mean, "se": se})
            lows = [r["bl"][j][0] for r in ok]
            ups = [r["bl"][j][1] for r in ok]
            mu, su = _mean_se(ups)
            bl.append({"N": N, "t": t, "lower": _mean_se(lows)[0], "upper": mu, "upper_se": su})
    return weak, bl


def time_averaged(rows, key="mean", **match):
    """``{N: mean over t of rows[key]}`` for rows matching ``match``."""
    acc = {}
    for r in rows:
        if all(r[k] == v for k, v in match.items()):
            acc.setdefault(r["N"], []).append(r[key])
    return {N: float(np.mean(v)) for N, v in acc.items()}


def strictly_decreasing(values):
    v = list(values)
    return len(v) >= 2 and all(b < a for a, b in zip(v, v[1:]))


def lln_l2_experiment(plan, ref=None, workers=None):
    """Replica mean of the sup-over-checkpoints L2 error for each N.

    Returns
    -------
    dict
        ``table`` (rows), ``decreasing``, ``slope``, ``failed``, ``failures``
        and the raw ``sweep``.
    """
    if plan.model.regime != "a":
        raise ConfigError([("sigma-nonviscous", "the L2 experiment runs the non-viscous regime a")])
    sweep = run_sweep(plan, ref, workers, what="l2")
    table = l2_table(sweep) if sweep["runs"] else []
    means = [r["mean"] for r in table]
    out = {"table": table, "sweep": sweep, "failed": sweep["failed"], "failures": sweep["failures"],
           "decreasing": strictly_decreasing(means)}
    out["slope"] = fit_slope([r["N"] for r in table], means) if len(table) >= 2 else math.nan
    return out


def weak_convergence_experiment(plan, ref=None, workers=None):
    """Pairing gaps and BL intervals against the PDE for each N, f and checkpoint.

    Trend flags use the time average over checkpoints of the replica means.
    """
    m = plan.model
    if m.regime == "b" and m.kernel.kernel_id != "bspline_compact":
        raise ConfigError([("compact-support", "viscous weak convergence needs kernel.family = 'bspline_compact'")])
    sweep = run_sweep(plan, ref, workers, what="weak")
    names = list(plan.test_functions)
    weak, bl = weak_tables(sweep, names) if sweep["runs"] else ([], [])
    trends = {}
    for name in names:
        avg = time_averaged(weak, f=name)
        trends[name] = strictly_decreasing([avg[N] for N in plan.N_list]) if avg else False
    bl_avg = time_averaged(bl, key="upper")
    return {"weak_table": weak, "bl_table": bl, "sweep": sweep, "failed": sweep["failed"],
            "failures": sweep["failures"], "decreasing": trends,
            "bl_decreasing": strictly_decreasing([bl_avg[N] for N in plan.N_list]) if bl_avg else False}


# ---------------------------------------------------------------------------
# Rates


def fit_slope(N, err):
    """Least-squares slope of ``log err`` against ``log N``."""
    x = np.log(np.asarray(N, dtype=float))
    y = np.log(np.asarray(err, dtype=float))
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(coef[0])


def predicted_exponents(model):
    """Exponents of N in the four error terms of the Gronwall bound.

    ``chi_N^-2``, ``N^(beta (1 - 2L/d))`` with ``L = floor((d+2)/2)``,
    ``sigma_N^2 N^(beta (d+2)/d - 1)`` and ``sigma_N^2``.  A constant noise
    level contributes exponent 0 to the last term.
    """
    b, d = model.beta, model.d
    L = (d + 2) // 2
    s = model.sigma
    if s.sigma_inf > 0:
        sig = 0.0
    elif s.kind == "constant":
        sig = -math.inf if s.sigma_inf == 0 else 0.0
    else:
        sig = -2 * s.alpha
    return {
        "mollifier": -2 * b / d,
        "smoothness": b * (1 - 2 * L / d),
        "noise_interaction": sig + b * (d + 2) / d - 1,
        "noise": sig,
    }


def rate_report(tables, model=None, key="mean"):
    """Fitted slope of each error table alongside the predicted dominant exponent.

    Parameters
    ----------
    tables : dict
        ``{name: {N: error}}`` or ``{name: [rows with "N" and key]}``.
    model : ModelConfig, optional
        When given, the slowest of the predicted exponents is reported.

    Notes
    -----
    Informational only: the constants in the bound are unknown.
    """
    out = {"tables": {}}
    if model is not None:
        ex = predicted_exponents(model)
        out["predicted"] = ex
        out["dominant_exponent"] = max(ex.values())
    for name, t in tables.items():
        if isinstance(t, dict):
            Ns, errs = list(t), [t[n] for n in t]
        else:
            Ns, errs = [r["N"] for r in t], [r[key] for r in t]
        entry = {"N": Ns, "error": errs}
        if len(Ns) >= 3 and all(e > 0 for e in errs):
            entry["slope"] = fit_slope(Ns, errs)
            if model is not None:
                entry["slope_minus_predicted"] = entry["slope"] - out["dominant_exponent"]
        else:
            entry["slope"] = None
            entry["note"] = "need >= 3 positive entries"
        out["tables"][name] = entry
    return out


@dataclass
class SeedSweep:
    """Outcome of repeating an experiment over master seeds."""

    seeds: list
    passed: list
    slopes: list = field(default_factory=list)
    details: list = field(default_factory=list)

    @property
    def fraction(self):
        return sum(self.passed) / len(self.passed) if self.passed else 0.0


def seed_sweep(plan, seeds, experiment="l2", ref=None, workers=None, f=None):
    """Repeat an experiment for each master seed, sharing one PDE solution.

    ``experiment="l2"`` passes when the L2 table strictly decreases;
    ``"weak"`` needs both the pairing gap for ``f`` (default: the first test
    function) and the BL upper bound to decrease.
    """
    check_plan(plan)
    ref = ref or reference_solution(plan)
    out = SeedSweep(list(seeds), [])
    for s in seeds:
        p = replace(plan, model=replace(plan.model, seed=int(s)))
        if experiment == "l2":
            r = lln_l2_experiment(p, ref, workers)
            out.passed.append(bool(r["decreasing"]) and not r["failed"])
            out.slopes.append(r["slope"])
            out.details.append([row["mean"] for row in r["table"]])
        else:
            r = weak_convergence_experiment(p, ref, workers)
            name = f or plan.test_functions[0]
            out.passed.append(bool(r["decreasing"][name] and r["bl_decreasing"]) and not r["failed"])
            avg = time_averaged(r["weak_table"], f=name)
            bl = time_averaged(r["bl_table"], key="upper")
            out.details.append({"gap": [avg[N] for N in plan.N_list], "bl_upper": [bl[N] for N in plan.N_list]})
            out.slopes.append(fit_slope(plan.N_list, [avg[N] for N in plan.N_list]))
    return out
