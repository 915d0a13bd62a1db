"""Euler-Maruyama integration of the moderately interacting particle system.

Particle ``k`` follows

    dX^k = [-gamma1 grad U(X^k)
            + (gamma2/N) sum_i (grad G_a - grad V_N)(X^k - X^i)] dt
           + sigma_N dW^k,

the ``i = k`` term included (it vanishes because the kernels are even).
"""

from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from .config import ModelConfig, dt_budget, model_violations, sigma_violations
from .errors import BlowUpError, ConfigError
from .forces import MeshField, interaction_field
from .grid import DensityGrid
from .kernels import KernelSet
from . import rng as rngmod

log = logging.getLogger(__name__)


@dataclass
class ParticleEnsemble:
    """Positions ``(N, d)`` at time ``t`` plus the random-stream lineage.

    ``labels[j]`` is the identity of the particle stored in row ``j``; it
    selects the row of every noise block, so permuting rows together with
    labels permutes trajectories.
    """

    positions: np.ndarray
    t: float = 0.0
    step: int = 0
    seed: int = 0
    replica: int = 0
    labels: np.ndarray = None

    def __post_init__(self):
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=float))
        if self.labels is None:
            self.labels = np.arange(self.N)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def N(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]

    @property
    def rng_state(self):
        return {"seed": self.seed, "N": self.N, "replica": self.replica, "step": self.step}

    def copy(self):
        return replace(self, positions=self.positions.copy(), labels=self.labels.copy())

    def readonly(self):
        view = self.positions.view()
        view.flags.writeable = False
        return view


# ---------------------------------------------------------------------------
# Noise level and initial law


def sigma_of_N(config, N=None):
    """``sigma_N`` for the configured schedule, after checking it fits the regime."""
    bad = sigma_violations(config.sigma, config.regime, config.beta, config.d)
    if bad:
        raise ConfigError(bad)
    return config.sigma(config.N if N is None else N)


def sample_grid(grid, n, gen):
    """Exact draws from the piecewise constant density held by ``grid``."""
    p = np.clip(grid.values, 0, None).ravel()
    p = p / p.sum()
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    cells = np.searchsorted(cdf, gen.random(n), side="right")
    cells = np.minimum(cells, p.size - 1)
    idx = np.stack(np.unravel_index(cells, grid.cells), axis=-1)
    jitter = gen.random((n, grid.d))
    return grid.low + (idx + jitter) * np.asarray(grid.cell_size)


def initial_positions(config, replica=0, grid=None, seed=None):
    """Draw the ``(N, d)`` initial positions from ``config.init``.

    Uses a stream separate from the Brownian increments, so initial
    positions are independent of the driving noise.
    """
    ini, N, d = config.init, config.N, config.d
    seed = config.seed if seed is None else seed
    gen = rngmod.generator(seed, N, replica, rngmod.STREAM_INIT)
    if ini.kind == "lattice":
        m = N if d == 1 else int(math.ceil(N ** (1.0 / d)))
        axis = ini.low + (np.arange(m) + 0.5) * (ini.high - ini.low) / m
        pts = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        return pts[:N].copy()
    if ini.kind == "uniform":
        return gen.uniform(ini.low, ini.high, (N, d))
    if ini.kind == "gaussian":
        return ini.mean + ini.std * gen.standard_normal((N, d))
    if ini.kind == "grid":
        if grid is None:
            raise ConfigError([("initial-coupling", "init.kind='grid' needs a DensityGrid to sample from")])
        if grid.d != d:
            raise ConfigError([("dimension", "initial density grid has the wrong dimension")])
        return sample_grid(grid, N, gen)
    raise ConfigError([("init-moments", f"unknown initial law {ini.kind!r}")])


def initial_ensemble(config, replica=0, grid=None):
    return ParticleEnsemble(initial_positions(config, replica, grid), 0.0, 0, config.seed, replica)


# ---------------------------------------------------------------------------
# Drift


def build_kernels(config):
    return KernelSet.build(config.kernel, config.potential, config.aggregation, config.N, config.beta)


def resolve_mode(config):
    if config.force_mode != "auto":
        return config.force_mode
    return "brute" if config.N <= 1000 else "cell_list"


class DriftModel:
    """Evaluates the full drift of every particle for one config.

    ``mode`` applies to the repulsion kernel ``V_N``.  The aggregation
    kernel has an N-independent range, so it is summed exactly except in
    ``mesh`` mode where it gets its own coarser mesh.
    """

    def __init__(self, config, kernels=None):
        self.config = config
        self.kernels = kernels or build_kernels(config)
        self.mode = resolve_mode(config)
        self._mesh_v = self._mesh_g = None
        if self.mode == "mesh":
            self._mesh_v = MeshField(self.kernels.v_n)
            if config.aggregation.active:
                self._mesh_g = MeshField(self.kernels.g)

    def components(self, x):
        """``(grad U, grad G_a * X_N, grad V_N * X_N)`` at the rows of ``x``."""
        ks = self.kernels
        grad_u = ks.u.gradient(x)
        g_mode = "mesh" if self._mesh_g is not None else "brute"
        if self.config.gamma2 == 0:
            zero = np.zeros_like(x)
            return grad_u, zero, zero
        grad_g = interaction_field(x, ks.g, g_mode, mesh=self._mesh_g)
        grad_v = interaction_field(x, ks.v_n, self.mode, mesh=self._mesh_v)
        return grad_u, grad_g, grad_v

    def __call__(self, x):
        c = self.config
        grad_u, grad_g, grad_v = self.components(x)
        return -c.gamma1 * grad_u + c.gamma2 * (grad_g - grad_v)


def drift_at(ensemble, k, kernels, config):
    """Exact drift of particle ``k`` by direct summation over all particles."""
    x = ensemble.positions
    xk = x[k]
    diff = xk[None, :] - x
    n = ensemble.N
    inter = (kernels.g.gradient(diff) - kernels.v_n.gradient(diff)).sum(axis=0) / n
    return -config.gamma1 * kernels.u.gradient(xk) + config.gamma2 * inter


# ---------------------------------------------------------------------------
# Stepping


def _in_label_order(ensemble):
    """Permutation putting rows in label order (identity in the common case)."""
    lab = ensemble.labels
    if np.array_equal(lab, np.arange(lab.size)):
        return None
    return np.argsort(lab, kind="stable")


def _drift_rows(ensemble, drift):
    """Drift evaluated in label order, so sums do not depend on row order."""
    perm = _in_label_order(ensemble)
    if perm is None:
        return drift(ensemble.positions)
    out = np.empty_like(ensemble.positions)
    out[perm] = drift(ensemble.positions[perm])
    return out


def _noise_rows(ensemble):
    block = rngmod.noise_block(ensemble.seed, ensemble.N, ensemble.replica, ensemble.step, ensemble.d)
    return block[ensemble.labels]


def em_step(ensemble, dt, kernels, config, drift=None, sigma=None, b=None):
    """One Euler-Maruyama step; returns a new ensemble at ``t + dt``.

    Parameters
    ----------
    drift : DriftModel, optional
        Reused across steps when given.
    sigma : float, optional
        Noise level; defaults to ``sigma_N`` of the config.
    b : ndarray, optional
        Precomputed drift at the current positions.

    Raises
    ------
    BlowUpError
        If any coordinate becomes non-finite.
    """
    drift = drift or DriftModel(config, kernels)
    sigma = config.sigma(config.N) if sigma is None else sigma
    if b is None:
        b = _drift_rows(ensemble, drift)
    new = ensemble.positions + b * dt
    if sigma != 0:
        new = new + (sigma * math.sqrt(dt)) * _noise_rows(ensemble)
    bad = ~np.isfinite(new).all(axis=1)
    if bad.any():
        j = int(np.nonzero(bad)[0][0])
        raise BlowUpError(
            f"non-finite position for particle {int(ensemble.labels[j])} at t={ensemble.t + dt:.6g}",
            index=int(ensemble.labels[j]),
            time=ensemble.t + dt,
        )
    return replace(ensemble, positions=new, t=(ensemble.step + 1) * dt, step=ensemble.step + 1)


@dataclass
class SimulationResult:
    snapshots: dict
    final: ParticleEnsemble
    observers: list
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return sorted(self.snapshots)


def step_plan(T, dt):
    """Number of steps and the effective step ``T/n <= dt``."""
    if T == 0:
        return 0, dt
    n = max(1, int(math.ceil(T / dt - 1e-9)))
    return n, T / n


def run_meta(config, kernels=None):
    kernels = kernels or build_kernels(config)
    budget, lips = dt_budget(config)
    n, dt_eff = step_plan(config.T, config.dt)
    return {
        "sigma_N": config.sigma(config.N),
        "chi_N": kernels.chi,
        "truncation_radius_V_N": kernels.v_n.cutoff,
        "truncation_radius_W_N": kernels.w_n.cutoff,
        "dt_budget": budget,
        "L_U": lips["L_U"],
        "L_N": lips["L_N"],
        "n_steps": n,
        "dt_effective": dt_eff,
        "force_mode": resolve_mode(config),
    }


def simulate(config, kernels=None, observers=(), stride=1, snapshot_times=None,
             replica=0, init_grid=None, ensemble=None, validate=True):
    """Run ``T/dt`` Euler-Maruyama steps.

    Parameters
    ----------
    config : ModelConfig
    kernels : KernelSet, optional
    observers : sequence
        Objects with ``observe(ensemble, info)``; called at step 0, every
        ``stride`` steps and at the final step.  Observers with a true
        ``every_step`` attribute are called at every step.  ``info`` holds
        ``t``, ``step``, ``dt``, ``sigma``, ``drift`` and the drift
        components, all at the current positions.  Observers must not
        mutate what they receive.
    snapshot_times : sequence of float, optional
        Times at which positions are stored (rounded to the nearest step).
        Defaults to ``[0, T]``.
    init_grid : DensityGrid, optional
        Density sampled when ``config.init.kind == "grid"``.
    ensemble : ParticleEnsemble, optional
        Overrides the initial draw.

    Returns
    -------
    SimulationResult

    Raises
    ------
    BlowUpError
        With the partial result attached as ``exc.partial``.
    """
    if validate:
        bad = model_violations(config)
        if bad:
            raise ConfigError(bad)
    kernels = kernels or build_kernels(config)
    drift = DriftModel(config, kernels)
    sigma = config.sigma(config.N)
    n_steps, dt = step_plan(config.T, config.dt)
    ens = ensemble.copy() if ensemble is not None else initial_ensemble(config, replica, init_grid)
    if snapshot_times is None:
        snapshot_times = [0.0, config.T]
    snap_steps = {}
    for t in snapshot_times:
        s = 0 if n_steps == 0 else int(round(t / dt))
        snap_steps.setdefault(min(max(s, 0), n_steps), float(t))
    snaps = {}
    observers = list(observers)
    meta = run_meta(config, kernels)
    result = SimulationResult(snaps, ens, observers, meta)

    for m in range(n_steps + 1):
        last = m == n_steps
        need_obs = [o for o in observers if getattr(o, "every_step", False) or m % stride == 0 or last]
        if m in snap_steps:
            snaps[m * dt if n_steps else 0.0] = ens.positions.copy()
        if last and not need_obs:
            break
        grad_u, grad_g, grad_v = _components_rows(ens, drift)
        b = -config.gamma1 * grad_u + config.gamma2 * (grad_g - grad_v)
        if need_obs:
            info = {"t": m * dt, "step": m, "dt": dt, "sigma": sigma, "drift": b,
                    "grad_u": grad_u, "grad_g": grad_g, "grad_v": grad_v,
                    "kernels": kernels, "config": config, "last": last}
            pos = ens.readonly()
            view = replace(ens, positions=pos)
            for o in need_obs:
                o.observe(view, info)
        if last:
            break
        try:
            ens = em_step(ens, dt, kernels, config, drift=drift, sigma=sigma, b=b)
        except BlowUpError as exc:
            result.final = ens
            exc.partial = result
            raise
    result.final = ens
    return result


def _components_rows(ensemble, drift):
    perm = _in_label_order(ensemble)
    if perm is None:
        return drift.components(ensemble.positions)
    comps = drift.components(ensemble.positions[perm])
    outs = []
    for c in comps:
        o = np.empty_like(c)
        o[perm] = c
        outs.append(o)
    return tuple(outs)


def run_replicas(job, replicas, workers=1):
    """Evaluate ``job(replica_index)`` for every index, in index order.

    ``workers > 1`` uses a thread pool; results are gathered by index so the
    output does not depend on scheduling.
    """
    idx = list(range(replicas)) if isinstance(replicas, int) else list(replicas)
    if workers <= 1 or len(idx) <= 1:
        return [job(i) for i in idx]
    from concurrent.futures import ThreadPoolExecutor

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(job, idx))
