"""Run configuration: model, PDE and sweep-plan records with validation.

Configs are stored as a single JSON object with flat dotted keys, for
example ``{"model.N": 1000, "kernel.family": "gaussian", ...}``.  Nested
objects are flattened on read, so ``{"kernel": {"family": "gaussian"}}`` is
equivalent.  Every violated modelling assumption is reported with a distinct
code; see :data:`VIOLATION_CODES`.
"""

from dataclasses import dataclass, field, fields, replace
import json
import math

from .errors import ConfigError
from .kernels import AggregationSpec, KernelSpec, PotentialSpec, mollifier, potential, aggregation_kernel, self_convolve, chi_of

VIOLATION_CODES = {
    "dimension": "dimension d must be a positive integer (grids support d <= 2)",
    "particle-count": "N must be a positive integer",
    "beta-range": "the interaction exponent beta must lie in (0, 1)",
    "gamma-sign": "gamma1 and gamma2 must be nonnegative",
    "horizon": "the horizon T must be nonnegative",
    "step-size": "the time step dt must be positive",
    "sigma-schedule": "malformed noise schedule",
    "sigma-nonviscous": "regime a: needs sigma_N -> 0, and sigma_N N^(beta(d+2)/d - 1) -> 0 when beta >= d/(d+2)",
    "sigma-viscous": "regime b: needs beta < d/(d+2) and a positive limiting noise sigma_inf",
    "regime": "regime must be 'a' (non-viscous) or 'b' (viscous)",
    "bounded-potential": "the confining potential must be bounded with bounded gradient",
    "init-moments": "initial law must be a compactly supported or Gaussian family",
    "dt-budget": "dt exceeds the explicit stability budget",
    "force-mode": "unknown force evaluation mode",
    "kernel.family": "unknown mollifier family",
    "kernel.scale": "mollifier length scale must be positive",
    "potential.family": "unknown potential",
    "potential.depth": "potential depth must be nonnegative",
    "potential.width": "potential width must be positive",
    "aggregation.family": "unknown aggregation kernel",
    "aggregation.amplitude": "aggregation amplitude must be nonnegative",
    "aggregation.range": "aggregation range must be positive",
    "pde-grid": "PDE grid must have positive cell counts and low < high",
    "pde-cfl": "cfl safety factor must lie in (0, 1]",
    "pde-init": "unknown or malformed PDE initial profile",
    "pde-domain": "initial density touches the box boundary",
    "plan-consistency": "particle and PDE configs of a sweep disagree",
    "initial-coupling": "particles must be sampled from the PDE initial density",
    "compact-support": "viscous weak convergence requires a compactly supported mollifier",
    "gradient-integrability": "grad U and grad G_a must be integrable for the non-viscous experiment",
    "sweep": "malformed sweep plan",
    "syntax": "config text is not a JSON object",
    "unknown-key": "unrecognised config key",
}

FORCE_MODES = ("auto", "brute", "cell_list", "mesh")
INIT_KINDS = ("lattice", "uniform", "gaussian", "grid")
PDE_PROFILES = ("gaussian", "barenblatt", "uniform_bump", "stationary")
REGIMES = ("a", "b")


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class SigmaSchedule:
    """Noise level ``sigma_N = sigma_inf + c * N**(-alpha)``.

    ``kind="constant"`` ignores ``c`` and ``alpha``.
    """

    kind: str = "constant"
    sigma_inf: float = 0.5
    c: float = 0.0
    alpha: float = 0.0

    def __call__(self, N):
        if self.kind == "constant":
            return float(self.sigma_inf)
        return float(self.sigma_inf + self.c * float(N) ** (-self.alpha))

    @property
    def vanishes(self):
        return self.sigma_inf == 0


@dataclass(frozen=True)
class InitSpec:
    """Initial law of the particles.

    ``lattice`` and ``uniform`` live on ``[low, high]^d``; ``gaussian`` is
    isotropic ``N(mean, std^2 I)``; ``grid`` samples a piecewise constant
    density supplied at run time (the PDE initial datum in sweeps).
    """

    kind: str = "gaussian"
    mean: float = 0.0
    std: float = 1.0
    low: float = -1.0
    high: float = 1.0


@dataclass(frozen=True)
class ModelConfig:
    d: int = 1
    N: int = 100
    beta: float = 0.25
    gamma1: float = 1.0
    gamma2: float = 1.0
    sigma: SigmaSchedule = field(default_factory=SigmaSchedule)
    T: float = 1.0
    dt: float = 1e-3
    init: InitSpec = field(default_factory=InitSpec)
    seed: int = 0
    regime: str = "b"
    kernel: KernelSpec = field(default_factory=KernelSpec)
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)
    force_mode: str = "auto"
    mesh_cells: int = 0
    allow_unbounded_potential: bool = False
    enforce_dt_budget: bool = True

    @property
    def sigma_N(self):
        return self.sigma(self.N)

    @property
    def n_steps(self):
        return int(round(self.T / self.dt))

    def with_N(self, N):
        return replace(self, N=int(N))


@dataclass(frozen=True)
class PdeInit:
    """Named initial profile for the PDE.

    ``gaussian`` uses ``mean``/``std``; ``barenblatt`` is the porous-medium
    self-similar profile at time ``t0``; ``uniform_bump`` is a C^2 plateau of
    half width ``std``; ``stationary`` is the zero-flux equilibrium of the
    configured potential (1D only).
    """

    profile: str = "gaussian"
    mean: float = 0.0
    std: float = 1.0
    t0: float = 1.0


@dataclass(frozen=True)
class PdeConfig:
    d: int = 1
    cells: int = 512
    low: float = None
    high: float = None
    sigma_inf: float = 0.0
    gamma1: float = 1.0
    gamma2: float = 1.0
    potential: PotentialSpec = field(default_factory=PotentialSpec)
    aggregation: AggregationSpec = field(default_factory=AggregationSpec)
    T: float = 1.0
    cfl: float = 0.4
    init: PdeInit = field(default_factory=PdeInit)
    snapshots: int = 11
    conv_mode: str = "direct"
    margin: float = 0.0
    advection: str = "hybrid"

    @property
    def auto_box(self):
        return self.low is None or self.high is None


@dataclass(frozen=True)
class SweepPlan:
    model: ModelConfig = field(default_factory=ModelConfig)
    pde: PdeConfig = field(default_factory=PdeConfig)
    N_list: tuple = (250, 1000, 4000)
    replicas: int = 20
    checkpoints: int = 20
    test_functions: tuple = ("bump", "sine", "tanh")
    experiment: str = "l2"
    workers: int = 1


# ---------------------------------------------------------------------------
# Flat key schema: key -> (path of attribute names, caster)

def _tuple_int(v):
    if isinstance(v, str):
        v = [s for s in v.split(",") if s.strip()]
    return tuple(int(x) for x in v)


def _tuple_str(v):
    if isinstance(v, str):
        v = [s.strip() for s in v.split(",") if s.strip()]
    return tuple(str(x) for x in v)


def _bool(v):
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


def _float(v):
    return None if v is None else float(v)


_KERNEL_KEYS = {
    "kernel.family": (("kernel", "kernel_id"), str),
    "kernel.scale": (("kernel", "length_scale"), float),
}
_POTENTIAL_KEYS = {
    "potential.family": (("potential", "potential_id"), str),
    "potential.depth": (("potential", "depth"), float),
    "potential.width": (("potential", "width"), float),
}
_AGG_KEYS = {
    "aggregation.family": (("aggregation", "kernel_id"), str),
    "aggregation.amplitude": (("aggregation", "amplitude"), float),
    "aggregation.range": (("aggregation", "range"), float),
}

MODEL_KEYS = {
    "model.d": (("d",), int),
    "model.N": (("N",), int),
    "model.beta": (("beta",), float),
    "model.gamma1": (("gamma1",), float),
    "model.gamma2": (("gamma2",), float),
    "model.T": (("T",), float),
    "model.dt": (("dt",), float),
    "model.seed": (("seed",), int),
    "model.regime": (("regime",), str),
    "sigma.kind": (("sigma", "kind"), str),
    "sigma.inf": (("sigma", "sigma_inf"), float),
    "sigma.c": (("sigma", "c"), float),
    "sigma.alpha": (("sigma", "alpha"), float),
    "init.kind": (("init", "kind"), str),
    "init.mean": (("init", "mean"), float),
    "init.std": (("init", "std"), float),
    "init.low": (("init", "low"), float),
    "init.high": (("init", "high"), float),
    "force.mode": (("force_mode",), str),
    "force.mesh_cells": (("mesh_cells",), int),
    "model.allow_unbounded_potential": (("allow_unbounded_potential",), _bool),
    "model.enforce_dt_budget": (("enforce_dt_budget",), _bool),
    **_KERNEL_KEYS,
    **_POTENTIAL_KEYS,
    **_AGG_KEYS,
}

PDE_KEYS = {
    "pde.d": (("d",), int),
    "pde.cells": (("cells",), int),
    "pde.low": (("low",), _float),
    "pde.high": (("high",), _float),
    "pde.sigma_inf": (("sigma_inf",), float),
    "pde.gamma1": (("gamma1",), float),
    "pde.gamma2": (("gamma2",), float),
    "pde.T": (("T",), float),
    "pde.cfl": (("cfl",), float),
    "pde.snapshots": (("snapshots",), int),
    "pde.conv_mode": (("conv_mode",), str),
    "pde.margin": (("margin",), float),
    "pde.advection": (("advection",), str),
    "pde.init.profile": (("init", "profile"), str),
    "pde.init.mean": (("init", "mean"), float),
    "pde.init.std": (("init", "std"), float),
    "pde.init.t0": (("init", "t0"), float),
    **_POTENTIAL_KEYS,
    **_AGG_KEYS,
}

PLAN_KEYS = {
    "plan.N_list": (("N_list",), _tuple_int),
    "plan.replicas": (("replicas",), int),
    "plan.checkpoints": (("checkpoints",), int),
    "plan.test_functions": (("test_functions",), _tuple_str),
    "plan.experiment": (("experiment",), str),
    "plan.workers": (("workers",), int),
}


def flatten(obj, prefix=""):
    """Flatten nested dicts into dotted keys."""
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def _get(obj, path):
    for name in path:
        obj = getattr(obj, name)
    return obj


def _to_flat(obj, schema):
    out = {}
    for key, (path, _) in schema.items():
        v = _get(obj, path)
        if isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, float) and not math.isfinite(v):
            v = None
        out[key] = v
    return out


def _collect(flat, schema, violations):
    """Group flat values by top-level attribute, casting each value."""
    groups = {}
    for key, (path, cast) in schema.items():
        if key not in flat:
            continue
        try:
            value = cast(flat[key])
        except (TypeError, ValueError):
            violations.append(("syntax", f"{key}: cannot interpret {flat[key]!r}"))
            continue
        if len(path) == 1:
            groups[path[0]] = value
        else:
            groups.setdefault(path[0], {})[path[1]] = value
    return groups


def _build_sub(cls, default, values, violations, **extra):
    kwargs = {f.name: getattr(default, f.name) for f in fields(cls)}
    kwargs.update(values or {})
    kwargs.update(extra)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        violations.extend(exc.violations)
        return replace(default, **extra)


def _model_from_flat(flat, violations, base=None):
    base = base or ModelConfig()
    groups = _collect(flat, MODEL_KEYS, violations)
    d = groups.pop("d", base.d)
    if not isinstance(d, int) or d < 1:
        violations.append(("dimension", f"dimension must be a positive integer, got {d!r}"))
        d = 1
    kernel = _build_sub(KernelSpec, base.kernel, groups.pop("kernel", None), violations, d=d)
    pot = _build_sub(PotentialSpec, base.potential, groups.pop("potential", None), violations)
    agg = _build_sub(AggregationSpec, base.aggregation, groups.pop("aggregation", None), violations)
    sigma = replace(base.sigma, **groups.pop("sigma", {}))
    init = replace(base.init, **groups.pop("init", {}))
    return replace(base, d=d, kernel=kernel, potential=pot, aggregation=agg, sigma=sigma, init=init, **groups)


def _pde_from_flat(flat, violations, base=None):
    base = base or PdeConfig()
    groups = _collect(flat, PDE_KEYS, violations)
    pot = _build_sub(PotentialSpec, base.potential, groups.pop("potential", None), violations)
    agg = _build_sub(AggregationSpec, base.aggregation, groups.pop("aggregation", None), violations)
    init = replace(base.init, **groups.pop("init", {}))
    return replace(base, potential=pot, aggregation=agg, init=init, **groups)


# ---------------------------------------------------------------------------
# Validation


def dt_budget(config):
    """Explicit stability budget ``0.1 min(1/(gamma1 L_U), 1/(gamma2 L_N))``.

    ``L_U`` is the Lipschitz constant of grad U and ``L_N`` the one of the
    interaction field ``grad V_N - grad G_a`` (Hessian bounds), which grows
    like ``N^(beta (d+2)/d)``.

    Returns
    -------
    budget : float
    info : dict
        ``L_U`` and ``L_N`` used.
    """
    d = config.d
    L_U = potential(config.potential, d).hessian_bound()
    v1 = self_convolve(mollifier(config.kernel))
    chi = chi_of(config.N, config.beta, d)
    L_N = chi ** (d + 2) * v1.hessian_bound() + aggregation_kernel(config.aggregation, d).hessian_bound()
    terms = []
    if config.gamma1 * L_U > 0:
        terms.append(1.0 / (config.gamma1 * L_U))
    if config.gamma2 * L_N > 0:
        terms.append(1.0 / (config.gamma2 * L_N))
    budget = 0.1 * min(terms) if terms else math.inf
    return budget, {"L_U": L_U, "L_N": L_N}


def model_violations(config, check_dt=True):
    v = []
    d = config.d
    if not isinstance(d, int) or d < 1:
        v.append(("dimension", f"dimension must be a positive integer, got {d!r}"))
    if not isinstance(config.N, int) or config.N < 1:
        v.append(("particle-count", f"N must be a positive integer, got {config.N!r}"))
    if not 0 < config.beta < 1:
        v.append(("beta-range", f"beta must lie in (0, 1), got {config.beta}"))
    if config.gamma1 < 0 or config.gamma2 < 0:
        v.append(("gamma-sign", "gamma1 and gamma2 must be nonnegative"))
    if not config.T >= 0 or not math.isfinite(config.T):
        v.append(("horizon", f"T must be finite and nonnegative, got {config.T}"))
    if not config.dt > 0 or not math.isfinite(config.dt):
        v.append(("step-size", f"dt must be positive, got {config.dt}"))
    v.extend(sigma_violations(config.sigma, config.regime, config.beta, d))
    if not config.potential.bounded and not config.allow_unbounded_potential:
        v.append(("bounded-potential",
                  "quadratic potential is unbounded; pass allow_unbounded_potential to use it"))
    ini = config.init
    if ini.kind not in INIT_KINDS:
        v.append(("init-moments", f"unknown initial law {ini.kind!r}; supported: {INIT_KINDS}"))
    elif ini.kind == "gaussian" and not (ini.std > 0 and math.isfinite(ini.std) and math.isfinite(ini.mean)):
        v.append(("init-moments", "gaussian initial law needs finite mean and positive std"))
    elif ini.kind in ("lattice", "uniform") and not (math.isfinite(ini.low) and math.isfinite(ini.high) and ini.low < ini.high):
        v.append(("init-moments", "box initial law needs finite low < high"))
    if config.force_mode not in FORCE_MODES:
        v.append(("force-mode", f"force mode must be one of {FORCE_MODES}"))
    if config.kernel.d != d:
        v.append(("dimension", "kernel dimension differs from model dimension"))
    if check_dt and config.enforce_dt_budget and not v:
        budget, info = dt_budget(config)
        if config.dt > budget:
            v.append(("dt-budget",
                      f"dt={config.dt:.3g} exceeds budget {budget:.3g} (L_U={info['L_U']:.3g}, L_N={info['L_N']:.3g})"))
    return v


def sigma_violations(sigma, regime, beta, d):
    v = []
    if sigma.kind not in ("constant", "power"):
        v.append(("sigma-schedule", f"schedule kind must be 'constant' or 'power', got {sigma.kind!r}"))
        return v
    if sigma.sigma_inf < 0 or sigma.c < 0:
        v.append(("sigma-schedule", "noise parameters must be nonnegative"))
    if sigma.kind == "power" and not sigma.alpha > 0:
        v.append(("sigma-schedule", "power schedule needs alpha > 0"))
    if regime not in REGIMES:
        v.append(("regime", f"regime must be 'a' or 'b', got {regime!r}"))
        return v
    crit = d / (d + 2)
    decaying = sigma.kind == "power" and sigma.c > 0
    if regime == "a":
        if sigma.sigma_inf != 0:
            v.append(("sigma-nonviscous", "regime a needs sigma_N -> 0, but sigma_inf > 0"))
        elif beta >= crit and decaying:
            need = beta * (d + 2) / d - 1
            if not sigma.alpha > need:
                v.append(("sigma-nonviscous",
                          f"beta >= d/(d+2) needs sigma_N N^(beta(d+2)/d-1) -> 0, i.e. alpha > {need:.4g}"))
    else:
        if not beta < crit:
            v.append(("sigma-viscous", f"regime b needs beta < d/(d+2) = {crit:.4g}, got {beta}"))
        if not sigma.sigma_inf > 0:
            v.append(("sigma-viscous", "regime b needs a positive limiting noise sigma_inf"))
    return v


def pde_violations(cfg):
    v = []
    if not isinstance(cfg.d, int) or cfg.d not in (1, 2):
        v.append(("dimension", "PDE solver supports d in {1, 2}"))
    if cfg.cells < 2:
        v.append(("pde-grid", "need at least 2 cells per axis"))
    if not cfg.auto_box and not cfg.low < cfg.high:
        v.append(("pde-grid", "box needs low < high"))
    if not 0 < cfg.cfl <= 1:
        v.append(("pde-cfl", f"cfl must lie in (0, 1], got {cfg.cfl}"))
    if cfg.sigma_inf < 0:
        v.append(("sigma-schedule", "sigma_inf must be nonnegative"))
    if cfg.gamma1 < 0 or cfg.gamma2 < 0:
        v.append(("gamma-sign", "gamma1 and gamma2 must be nonnegative"))
    if not cfg.T >= 0:
        v.append(("horizon", "T must be nonnegative"))
    if cfg.init.profile not in PDE_PROFILES:
        v.append(("pde-init", f"profile must be one of {PDE_PROFILES}"))
    elif not cfg.init.std > 0 or not cfg.init.t0 > 0:
        v.append(("pde-init", "profile needs positive std and t0"))
    elif cfg.init.profile == "stationary" and cfg.d != 1:
        v.append(("pde-init", "stationary profile is 1D only"))
    if cfg.conv_mode not in ("direct", "fft"):
        v.append(("pde-grid", "conv_mode must be 'direct' or 'fft'"))
    if cfg.advection not in ("hybrid", "upwind"):
        v.append(("pde-grid", "advection must be 'hybrid' or 'upwind'"))
    if cfg.snapshots < 1:
        v.append(("pde-grid", "need at least one snapshot"))
    return v


def gradient_integrability(potential_spec, aggregation_spec, d, tol=1e-6):
    """Numerically check ``grad U, grad G_a in L^1`` on expanding radial shells.

    Returns ``(ok, integrals)``.  The integral over the shell between R and
    2R must become negligible relative to the bulk as R grows.
    """
    from scipy import integrate

    out = {}
    ok = True
    for name, ev in (("U", potential(potential_spec, d)), ("G_a", aggregation_kernel(aggregation_spec, d))):
        area = 2.0 if d == 1 else 2 * math.pi * (1 if d == 2 else 1)

        def radial(r):
            pt = [r] + [0.0] * (d - 1)
            return float(abs(ev.gradient(pt)[0])) * area * r ** (d - 1)

        bulk, _ = integrate.quad(radial, 0, 50, limit=200)
        tail, _ = integrate.quad(radial, 50, 100, limit=200)
        out[name] = bulk + tail
        if not (math.isfinite(bulk) and tail <= tol * max(bulk, 1.0)):
            ok = False
    return ok, out


def plan_violations(plan):
    v = list(model_violations(plan.model, check_dt=False))
    v.extend(pde_violations(plan.pde))
    m, p = plan.model, plan.pde
    if len(plan.N_list) < 1 or any(n < 1 for n in plan.N_list) or list(plan.N_list) != sorted(set(plan.N_list)):
        v.append(("sweep", "N_list must be strictly increasing positive integers"))
    if plan.replicas < 1 or plan.checkpoints < 1 or plan.workers < 1:
        v.append(("sweep", "replicas, checkpoints and workers must be >= 1"))
    if plan.experiment not in ("l2", "weak", "both"):
        v.append(("sweep", "experiment must be 'l2', 'weak' or 'both'"))
    if m.d != p.d:
        v.append(("plan-consistency", "model and PDE dimensions differ"))
    if (m.gamma1, m.gamma2) != (p.gamma1, p.gamma2):
        v.append(("plan-consistency", "model and PDE gammas differ"))
    if m.potential != p.potential or m.aggregation != p.aggregation:
        v.append(("plan-consistency", "model and PDE potential/aggregation differ"))
    if m.regime == "a" and p.sigma_inf != 0:
        v.append(("plan-consistency", "regime a pairs with the non-viscous PDE (sigma_inf = 0)"))
    if m.regime == "b" and p.sigma_inf != m.sigma.sigma_inf:
        v.append(("plan-consistency", "regime b: PDE sigma_inf must equal the particle noise limit"))
    if m.init.kind != "grid":
        v.append(("initial-coupling", "sweeps sample particles from the PDE initial density (init.kind = 'grid')"))
    if m.regime == "b" and plan.experiment in ("weak", "both") and m.kernel.kernel_id != "bspline_compact":
        v.append(("compact-support", "viscous weak convergence needs kernel.family = 'bspline_compact'"))
    if m.regime == "a":
        ok, _ = gradient_integrability(m.potential, m.aggregation, m.d)
        if not ok:
            v.append(("gradient-integrability", "grad U or grad G_a fails the L^1 quadrature check"))
    return v


# ---------------------------------------------------------------------------
# Parse / serialise


def _load(text):
    if isinstance(text, dict):
        raw = text
    else:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([("syntax", f"invalid JSON: {exc}")]) from None
    if not isinstance(raw, dict):
        raise ConfigError([("syntax", "config must be a JSON object")])
    return flatten(raw)


def detect_kind(flat):
    if any(k.startswith("plan.") for k in flat):
        return "plan"
    if any(k.startswith("model.") or k.startswith("sigma.") or k.startswith("init.") for k in flat):
        return "model"
    if any(k.startswith("pde.") for k in flat):
        return "pde"
    return "model"


def validate_config(text, kind=None):
    """Parse and validate config text (or a dict).

    Parameters
    ----------
    text : str or dict
    kind : {"model", "pde", "plan"}, optional
        Inferred from the key prefixes when omitted.

    Returns
    -------
    ModelConfig, PdeConfig or SweepPlan

    Raises
    ------
    ConfigError
        Listing every violated condition with its code.
    """
    flat = _load(text)
    kind = kind or detect_kind(flat)
    violations = []
    known = {"model": MODEL_KEYS, "pde": PDE_KEYS, "plan": {**MODEL_KEYS, **PDE_KEYS, **PLAN_KEYS}}[kind]
    unknown = sorted(set(flat) - set(known))
    if unknown:
        violations.append(("unknown-key", f"unrecognised keys: {', '.join(unknown)}"))
    if kind == "model":
        cfg = _model_from_flat(flat, violations)
        if not violations:
            violations.extend(model_violations(cfg))
    elif kind == "pde":
        cfg = _pde_from_flat(flat, violations)
        if not violations:
            violations.extend(pde_violations(cfg))
    elif kind == "plan":
        model = _model_from_flat(flat, violations, base=replace(ModelConfig(), init=InitSpec(kind="grid")))
        model_keys = {k: v for k, v in flat.items() if k in _POTENTIAL_KEYS or k in _AGG_KEYS}
        gam = {f"pde.{g}": flat[f"model.{g}"] for g in ("gamma1", "gamma2") if f"model.{g}" in flat and f"pde.{g}" not in flat}
        sig = {}
        if "pde.sigma_inf" not in flat:
            sig["pde.sigma_inf"] = 0.0 if model.regime == "a" else model.sigma.sigma_inf
        dim = {"pde.d": model.d} if "pde.d" not in flat else {}
        if "pde.T" not in flat:
            dim["pde.T"] = model.T
        pde = _pde_from_flat({**flat, **model_keys, **gam, **sig, **dim}, violations)
        groups = _collect(flat, PLAN_KEYS, violations)
        cfg = SweepPlan(model=model, pde=pde, **groups)
        if not violations:
            violations.extend(plan_violations(cfg))
    else:
        raise ValueError(f"unknown config kind {kind!r}")
    if violations:
        raise ConfigError(violations)
    return cfg


def to_flat(cfg):
    if isinstance(cfg, ModelConfig):
        return _to_flat(cfg, MODEL_KEYS)
    if isinstance(cfg, PdeConfig):
        return _to_flat(cfg, PDE_KEYS)
    if isinstance(cfg, SweepPlan):
        out = _to_flat(cfg.pde, PDE_KEYS)
        out.update(_to_flat(cfg.model, MODEL_KEYS))
        out.update(_to_flat(cfg, PLAN_KEYS))
        return out
    raise TypeError(f"cannot serialise {type(cfg).__name__}")


def serialize(cfg):
    """Flat-key JSON text; ``validate_config(serialize(c)) == c``."""
    return json.dumps(to_flat(cfg), indent=2, sort_keys=True)


def parse(text, kind=None):
    """Parse without semantic validation (structural errors still raise)."""
    flat = _load(text)
    kind = kind or detect_kind(flat)
    violations = []
    if kind == "model":
        cfg = _model_from_flat(flat, violations)
    elif kind == "pde":
        cfg = _pde_from_flat(flat, violations)
    else:
        model = _model_from_flat(flat, violations, base=replace(ModelConfig(), init=InitSpec(kind="grid")))
        pde = _pde_from_flat(flat, violations)
        cfg = SweepPlan(model=model, pde=pde, **_collect(flat, PLAN_KEYS, violations))
    if violations:
        raise ConfigError(violations)
    return cfg
