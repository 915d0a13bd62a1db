"""Command line entry point.

Exit status: 0 success, 2 invalid configuration, 3 numerical failure of a
run (blow-up, CFL, negative density, coverage), 4 an acceptance gate failed.
"""

import argparse
import dataclasses
import json
import logging
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import artifacts as art
from . import config as cfgmod
from . import diagnostics as diag
from . import kernels as kern
from . import lab
from . import pde as pdemod
from . import testfunctions
from .empirical import Phi
from .errors import ConfigError, ConsistencyError, CoverageError, MassMismatchError, NumericalError
from .particles import build_kernels, run_meta, run_replicas, simulate

log = logging.getLogger("meanfield")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_GATE = 0, 2, 3, 4
SEED_ENV = "MEANFIELD_SEED"


class _Context:
    """Per-invocation state shared by the subcommand handlers."""

    def __init__(self, args, out):
        self.args = args
        self.out = art.ensure_dir(out)
        self.threads = max(1, int(getattr(args, "threads", 1) or 1))
        self.manifest = None
        self.files = []

    def csv(self, name, rows, columns=None):
        art.write_csv(self.out / name, rows, columns)
        self.files.append(name)

    def json(self, name, obj):
        art.write_json(self.out / name, obj)
        self.files.append(name)


def _read_config(path, kind):
    text = Path(path).read_text()
    return cfgmod.validate_config(text, kind)


def _seed_override(seed_from_config, manifest_seed=None):
    """``(seed, source)``: a replayed manifest wins, then the env var, then the config."""
    if manifest_seed is not None:
        return int(manifest_seed), "manifest"
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return int(seed_from_config), "config"
    try:
        return int(raw), "env"
    except ValueError:
        raise ConfigError([("seed", f"{SEED_ENV}={raw!r} is not an integer")]) from None


def _apply_seed(cfg, seed):
    if isinstance(cfg, cfgmod.ModelConfig):
        return dataclasses.replace(cfg, seed=seed)
    if isinstance(cfg, cfgmod.SweepPlan):
        return dataclasses.replace(cfg, model=dataclasses.replace(cfg.model, seed=seed))
    return cfg


def _config_seed(cfg):
    if isinstance(cfg, cfgmod.ModelConfig):
        return cfg.seed
    if isinstance(cfg, cfgmod.SweepPlan):
        return cfg.model.seed
    return 0


# ---------------------------------------------------------------------------
# Handlers.  Each returns (status, derived constants for the manifest).


def _derived_model(cfg):
    kernels = build_kernels(cfg)
    meta = run_meta(cfg, kernels)
    phi = Phi(cfg.d)
    meta.update({
        "lap_V1_at_0": float(kernels.v1.laplacian(np.zeros(cfg.d))),
        "grad_W1_sq_norm": kern.grad_sq_norm(kernels.w1),
        "phi_bounds": phi.constants(),
    })
    return meta


def cmd_simulate(ctx, cfg):
    a = ctx.args
    if cfg.init.kind == "grid":
        raise ConfigError([("initial-coupling", "simulate samples named initial laws; init.kind='grid' is for sweeps")])
    kernels = build_kernels(cfg)
    k = max(2, a.snapshots)
    times = [float(t) for t in np.linspace(0.0, cfg.T, k)] if cfg.T > 0 else [0.0]
    observers = []
    obs = diag.DiagnosticsObserver() if a.diagnostics else None
    if obs is not None:
        observers.append(obs)
    try:
        res = simulate(cfg, kernels, observers=observers, stride=a.stride, snapshot_times=times, replica=a.replica)
    except NumericalError as exc:
        part = getattr(exc, "partial", None)
        if part is not None and part.snapshots:
            art.write_positions(ctx.out / "positions_partial.csv", part.snapshots, cfg.d)
            ctx.files.append("positions_partial.csv")
        raise
    art.write_positions(ctx.out / "positions.csv", res.snapshots, cfg.d)
    ctx.files.append("positions.csv")
    if obs is not None:
        tr = obs.trace.as_arrays()
        cols = [c for c in tr if len(tr[c]) == len(tr["times"])]
        ctx.csv("trace.csv", np.column_stack([tr[c] for c in cols]).tolist(), cols)
    return EXIT_OK, _derived_model(cfg)


def cmd_pde(ctx, cfg):
    a = ctx.args
    try:
        res = pdemod.solve(cfg)
    except NumericalError as exc:
        part = getattr(exc, "partial", None)
        if part is not None and part.snapshots:
            art.write_density(ctx.out / "density_partial.csv", part.snapshots)
            ctx.files.append("density_partial.csv")
        raise
    art.write_density(ctx.out / "density.csv", res.snapshots)
    ctx.files.append("density.csv")
    keys = ["t", "mass", "max", "min", "residual_l1"]
    ctx.csv("records.csv", [{k: r.get(k, "") for k in keys} for r in res.records], keys)
    g = res.grid
    ctx.json("pde_report.json", {"grid": {"origin": list(g.origin), "cell_size": list(g.cell_size), "counts": list(g.cells)},
                                 "records": res.records, "meta": res.meta})
    status = EXIT_OK
    derived = dict(res.meta)
    if a.gate != "none":
        kind = None if a.gate == "auto" else a.gate
        rep = pdemod.gate_report(cfg, res, kind)
        ctx.json("gate.json", rep)
        derived["gate"] = rep
        if not rep["ok"]:
            log.error("PDE gate %s failed: %s", rep["gate"], rep)
            status = EXIT_GATE
    return status, derived


def cmd_diagnose(ctx, cfg):
    a = ctx.args
    if cfg.init.kind == "grid":
        raise ConfigError([("initial-coupling", "diagnose samples named initial laws; init.kind='grid' is for sweeps")])
    kernels = build_kernels(cfg)
    f = testfunctions.make(a.test_function, cfg.d)

    def job(r):
        d_obs = diag.DiagnosticsObserver(grad_h=a.grad_h)
        w_obs = diag.WeakFormObserver(f, record_every=a.stride)
        simulate(cfg, kernels, observers=[d_obs, w_obs], stride=a.stride, replica=r)
        return d_obs.trace, w_obs

    out = run_replicas(job, a.replicas, ctx.threads)
    traces = [t for t, _ in out]
    weak = [w for _, w in out]
    cols = None
    rows = []
    for r, tr in enumerate(traces):
        arr = tr.as_arrays()
        cols = cols or [c for c in arr if len(arr[c]) == len(arr["times"])]
        for i in range(len(tr)):
            rows.append([r] + [arr[c][i] for c in cols])
    ctx.csv("trace.csv", rows, ["replica"] + cols)
    ctx.json("traces.json", [tr.to_dict() for tr in traces])
    ctx.csv("weak.csv", [[r, t, v] for r, w in enumerate(weak) for t, v in zip(w.times, w.values)],
            ["replica", "t", "M"])

    checks = {}
    an_ok = all(np.all(np.diff(tr.A_N) >= -1e-12) and min(tr.A_N) >= -1e-9 for tr in traces)
    s0_ok = all(tr.S_N[0] == tr.hN_l2[0] for tr in traces)
    ks = sorted(set(np.quantile(np.concatenate([tr.S_N for tr in traces]), [0.1, 0.5, 0.9]).tolist()))
    tau_ok = True
    for tr in traces:
        taus = [diag.stopping_time(tr, k) for k in ks]
        vals = [math.inf if t is None else t for t in taus]
        tau_ok &= all(b >= a_ for a_, b in zip(vals, vals[1:]))
    surv = diag.survival_fractions(traces, ks)
    checks.update({"A_N_monotone": bool(an_ok), "S_N0_equals_hN": bool(s0_ok), "tau_monotone": bool(tau_ok),
                   "survival": dict(zip(map(repr, ks), surv)),
                   "survival_monotone": bool(all(b >= a_ for a_, b in zip(surv, surv[1:])))})
    sigma = cfg.sigma(cfg.N)
    c2, c3 = diag.moment_constants(cfg)
    if a.replicas >= 2:
        checks["submartingale"] = diag.submartingale_check(traces, c2, c3)
    if a.replicas >= diag.MIN_REPLICAS:
        checks["martingale"] = diag.martingale_residual_test(weak, f, sigma, cfg.T, cfg.N)
    gates = [an_ok, s0_ok, tau_ok, checks["survival_monotone"]]
    if "martingale" in checks:
        gates += [checks["martingale"]["doob_ok"], checks["martingale"]["plain_ok"]]
    if "submartingale" in checks:
        gates += [checks["submartingale"]["submartingale_ok"], checks["submartingale"]["supermartingale_ok"]]
    checks["ok"] = bool(all(gates))
    ctx.json("diagnose.json", checks)
    return (EXIT_OK if checks["ok"] else EXIT_GATE), _derived_model(cfg)


def cmd_lln(ctx, plan):
    a = ctx.args
    plan = dataclasses.replace(plan, workers=ctx.threads)
    lab.check_plan(plan)
    ref = lab.reference_solution(plan)
    report = {"gates": {}}
    failures = []
    l2 = weak = None
    if plan.experiment in ("l2", "both"):
        l2 = lab.lln_l2_experiment(plan, ref)
        ctx.csv("l2_table.csv", l2["table"], ["N", "mean", "se", "replicas"])
        report["gates"]["l2_decreasing"] = l2["decreasing"]
        report["l2_slope"] = l2["slope"]
        failures += l2["failures"]
    if plan.experiment in ("weak", "both"):
        weak = lab.weak_convergence_experiment(plan, ref)
        ctx.csv("weak_table.csv", weak["weak_table"], ["N", "f", "t", "mean", "se"])
        ctx.csv("bl_table.csv", weak["bl_table"], ["N", "t", "lower", "upper", "upper_se"])
        for name, ok in weak["decreasing"].items():
            report["gates"][f"weak_decreasing[{name}]"] = ok
        report["gates"]["bl_upper_decreasing"] = weak["bl_decreasing"]
        failures += weak["failures"]
    tables = {}
    if l2 is not None:
        tables["l2"] = l2["table"]
    if weak is not None:
        for name in plan.test_functions:
            tables[f"gap[{name}]"] = lab.time_averaged(weak["weak_table"], f=name)
        tables["bl_upper"] = lab.time_averaged(weak["bl_table"], key="upper")
    report["rates"] = lab.rate_report(tables, plan.model)
    report["failures"] = failures
    runs = [{"N": N, "replica": r, "failed": any(f["N"] == N and f["replica"] == r for f in failures)}
            for N in plan.N_list for r in range(plan.replicas)]
    ctx.csv("runs.csv", runs, ["N", "replica", "failed"])
    report["ok"] = bool(all(report["gates"].values())) and not failures
    ctx.json("report.json", report)
    derived = {"pde": ref.meta, "checkpoints": lab.checkpoint_times(plan),
               "chi_N": {N: kern.chi_of(N, plan.model.beta, plan.model.d) for N in plan.N_list},
               "sigma_N": {N: plan.model.sigma(N) for N in plan.N_list}}
    if failures:
        return EXIT_NUMERICAL, derived
    return (EXIT_OK if report["ok"] else EXIT_GATE), derived


def cmd_kernel_check(ctx, cfg):
    a = ctx.args
    spec = cfg.kernel if cfg is not None else kern.KernelSpec()
    beta = cfg.beta if cfg is not None else 0.25
    rep = kern.kernel_report(spec, beta, tuple(a.N), n=a.points)
    ctx.json("kernel_check.json", rep)
    return (EXIT_OK if rep["ok"] else EXIT_GATE), {"kernel_check_ok": rep["ok"]}


HANDLERS = {
    "simulate": (cmd_simulate, "model"),
    "pde": (cmd_pde, "pde"),
    "diagnose": (cmd_diagnose, "model"),
    "lln": (cmd_lln, "plan"),
    "kernel-check": (cmd_kernel_check, "model"),
}


# ---------------------------------------------------------------------------
# Parser


def build_parser():
    p = argparse.ArgumentParser(prog="meanfield", description="Moderately interacting particle systems and their limit PDE.")
    p.add_argument("--threads", type=int, default=1, help="worker threads for replica pools")
    p.add_argument("--log-level", default="WARNING")
    # accepted before or after the subcommand
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for replica pools")
    sub = p.add_subparsers(dest="command", required=True)
    _add = sub.add_parser

    def add_parser(name, **kw):
        return _add(name, parents=[shared], **kw)

    sub.add_parser = add_parser

    def common(sp, config_required=True, flag="--config"):
        sp.add_argument(flag, dest="config", required=config_required, help="flat-key JSON config")
        sp.add_argument("--out", required=True, help="output directory")

    s = sub.add_parser("simulate", help="run one particle trajectory")
    common(s)
    s.add_argument("--snapshots", type=int, default=2, help="number of stored times including 0 and T")
    s.add_argument("--stride", type=int, default=10)
    s.add_argument("--replica", type=int, default=0)
    s.add_argument("--diagnostics", action="store_true", help="record the functional trace")

    s = sub.add_parser("pde", help="solve the limit PDE")
    common(s)
    s.add_argument("--gate", choices=["none", "auto", "heat", "barenblatt", "stationary"], default="none")

    s = sub.add_parser("diagnose", help="trace diagnostics and martingale checks over replicas")
    common(s)
    s.add_argument("--replicas", type=int, default=1)
    s.add_argument("--stride", type=int, default=10)
    s.add_argument("--test-function", default="clip_identity", choices=sorted(testfunctions.REGISTRY))
    s.add_argument("--grad-h", choices=["grid", "pairs"], default="grid")

    s = sub.add_parser("lln", help="N-sweep against the PDE")
    common(s, flag="--plan")

    s = sub.add_parser("kernel-check", help="Fourier identities, masses and scaling of the kernels")
    common(s, config_required=False)
    s.add_argument("--N", type=int, nargs="+", default=[16, 256, 4096])
    s.add_argument("--points", type=int, default=1024)

    s = sub.add_parser("replay", help="re-run from a manifest")
    s.add_argument("--manifest", required=True, help="manifest.json or the directory holding it")
    s.add_argument("--out", required=True)
    return p


def _execute(command, args, cfg, manifest_seed=None, replay_args=None):
    handler, kind = HANDLERS[command]
    ctx = _Context(args, args.out)
    seed, source = _seed_override(_config_seed(cfg) if cfg is not None else 0, manifest_seed)
    cfg = _apply_seed(cfg, seed) if cfg is not None else None
    man = art.RunManifest(
        subcommand=command,
        kind=kind,
        config=cfgmod.to_flat(cfg) if cfg is not None else {},
        args=replay_args if replay_args is not None else _handler_args(args),
        seed=seed,
        seed_source=source,
        threads=ctx.threads,
        version=art.tool_version(),
        started=art.now(),
    )
    status = EXIT_OK
    try:
        status, derived = handler(ctx, cfg)
        man.derived = derived
    except ConfigError as exc:
        status = EXIT_CONFIG
        man.derived = {"error": str(exc), "violations": exc.violations}
        _report(exc)
    except (NumericalError, CoverageError, MassMismatchError, ConsistencyError) as exc:
        status = EXIT_NUMERICAL
        man.derived = {"error": f"{type(exc).__name__}: {exc}"}
        _report(exc)
    man.finished = art.now()
    man.exit_status = status
    man.add_outputs(ctx.out, ctx.files)
    man.write(ctx.out)
    return status


_GLOBAL = {"threads", "log_level", "command", "config", "out", "manifest"}


def _handler_args(args):
    return {k: v for k, v in vars(args).items() if k not in _GLOBAL}


def _report(exc):
    if isinstance(exc, ConfigError):
        for code, msg in exc.violations:
            print(f"error [{code}]: {msg}", file=sys.stderr)
    else:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)


def _replay(args):
    man = art.load_manifest(args.manifest)
    handler, kind = HANDLERS[man.subcommand]
    cfg = cfgmod.validate_config(man.config, kind) if man.config else None
    ns = argparse.Namespace(**{**man.args, "threads": args.threads, "out": args.out, "command": man.subcommand})
    return _execute(man.subcommand, ns, cfg, manifest_seed=man.seed, replay_args=man.args)


def run(argv=None):
    """Parse ``argv`` and execute; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            return _replay(args)
        handler, kind = HANDLERS[args.command]
        cfg = _read_config(args.config, kind) if args.config else None
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return _execute(args.command, args, cfg)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
