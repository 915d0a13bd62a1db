"""Conservative finite-volume solver for the limit aggregation-diffusion equation

    d rho/dt = (sigma^2/2) lap rho + gamma2 div(rho grad rho)
               + gamma1 div(rho grad U) - gamma2 div(rho (grad G_a * rho))

on a box with no-flux walls.  Written as ``d rho/dt = -div F`` with face flux

    F = -(sigma^2/2) grad rho - gamma2 rho_face grad rho + upwind(v rho),
    v = -gamma1 grad U + gamma2 grad G_a * rho,

where ``rho_face`` is the arithmetic mean of the two neighbouring cells and
``grad G_a * rho`` is evaluated at the faces by a direct (or FFT) discrete
convolution with face-offset samples of ``grad G_a``.  The advective flux
uses the face mean where the cell Peclet number ``|v| h / (sigma^2/2 +
gamma2 rho_face)`` is at most 2 and first-order upwinding elsewhere
(``advection="hybrid"``, the default); both choices keep the explicit update
monotone under the CFL step.  ``advection="upwind"`` is pure upwinding.
Time stepping is forward Euler under an automatic CFL step.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy import integrate, optimize, signal

from .config import PdeConfig, pde_violations
from .errors import BlowUpError, CFLError, ConfigError, NegativeDensityError
from .grid import DensityGrid
from .kernels import aggregation_kernel, potential

log = logging.getLogger(__name__)

CLIP_FLOOR = -1e-12
BLOWUP_FACTOR = 1e6
BOUNDARY_MASS_TOL = 1e-10


# ---------------------------------------------------------------------------
# Profiles


def barenblatt_constants(d, gamma2=1.0):
    """``(alpha, k, C)`` of the unit-mass profile ``s^-alpha (C - k |x|^2 s^(-2 alpha/d))_+``.

    Here ``s = gamma2 t / 2`` because ``gamma2 div(rho grad rho)`` equals
    ``(gamma2/2) lap(rho^2)``; for ``gamma2 = 1`` and ``d = 1`` this is
    ``t^(-1/3) (C' - x^2 / (6 t^(2/3)))_+``.
    """
    alpha = d / (d + 2)
    k = alpha / (4 * d)
    if d == 1:
        C = (3 * math.sqrt(k) / 4) ** (2 / 3)
    elif d == 2:
        C = math.sqrt(2 * k / math.pi)
    else:
        raise ValueError("Barenblatt constants implemented for d <= 2")
    return alpha, k, C


def barenblatt(x, t, d=1, gamma2=1.0):
    """Unit-mass Barenblatt solution of ``rho_t = gamma2 div(rho grad rho)``."""
    alpha, k, C = barenblatt_constants(d, gamma2)
    s = gamma2 * t / 2
    x = np.asarray(x, dtype=float)
    r2 = x * x if d == 1 and x.shape[-1:] != (1,) else np.einsum("...i,...i->...", x, x)
    return s ** (-alpha) * np.maximum(C - k * r2 * s ** (-2 * alpha / d), 0.0)


def barenblatt_radius(t, d=1, gamma2=1.0):
    alpha, k, C = barenblatt_constants(d, gamma2)
    s = gamma2 * t / 2
    return math.sqrt(C / k) * s ** (alpha / d)


def _bump_profile(r, w):
    u = np.clip((r - w) / (0.5 * w), 0, 1)
    return 1 - u**3 * (10 - 15 * u + 6 * u * u)


def stationary_profile(x, potential_spec, sigma, gamma1=1.0, gamma2=1.0, low=None, high=None):
    """Zero-flux equilibrium in 1D by shooting on ``rho' = -gamma1 rho U' / (sigma^2/2 + gamma2 rho)``.

    The ODE is integrated outward from the origin (``U`` is even) and the
    central value is chosen so the profile has unit mass on ``[low, high]``.
    """
    if sigma <= 0:
        raise ValueError("stationary oracle needs sigma > 0")
    ev = potential(potential_spec, 1)
    x = np.asarray(x, dtype=float)
    low = x.min() if low is None else low
    high = x.max() if high is None else high
    D = 0.5 * sigma**2

    def rhs(s, y):
        # log rho keeps the tails accurate
        rho = math.exp(y[0])
        return [-gamma1 * float(ev.gradient(np.array([s]))[0]) / (D + gamma2 * rho)]

    reach = float(max(abs(low), abs(high), np.abs(x).max())) + 1e-9

    def shoot(log_rho0):
        sol = integrate.solve_ivp(rhs, (0.0, reach), [log_rho0], dense_output=True,
                                  rtol=1e-12, atol=1e-14, method="DOP853")
        return lambda s: np.exp(sol.sol(np.abs(s))[0])

    def mass(log_rho0):
        f = shoot(log_rho0)
        val, _ = integrate.quad(f, low, high, limit=400, points=[0.0], epsabs=1e-13, epsrel=1e-12)
        return val - 1.0

    log_rho0 = optimize.brentq(mass, -30.0, 5.0, xtol=1e-14)
    return shoot(log_rho0)(x)


def initial_density(cfg, grid):
    """Cell values of the configured initial profile, normalised to unit mass."""
    ini = cfg.init
    c = grid.centers()
    y = c - ini.mean
    r2 = np.einsum("...i,...i->...", y, y)
    if ini.profile == "gaussian":
        vals = np.exp(-0.5 * r2 / ini.std**2)
    elif ini.profile == "barenblatt":
        vals = barenblatt(y, ini.t0, cfg.d, cfg.gamma2 if cfg.gamma2 > 0 else 1.0)
    elif ini.profile == "uniform_bump":
        vals = _bump_profile(np.sqrt(r2), ini.std)
    elif ini.profile == "stationary":
        vals = stationary_profile(c[..., 0], cfg.potential, cfg.sigma_inf, cfg.gamma1, cfg.gamma2,
                                  grid.low[0], grid.high[0])
    else:
        raise ConfigError([("pde-init", f"unknown profile {ini.profile!r}")])
    vals = np.asarray(vals, dtype=float)
    return vals / (vals.sum() * grid.cell_volume)


def auto_box(cfg):
    """Symmetric box around the initial profile."""
    ini = cfg.init
    agg = 3 * cfg.aggregation.range if cfg.aggregation.active else 0.0
    margin = cfg.margin if cfg.margin > 0 else max(agg, ini.std if ini.profile == "gaussian" else 0.0)
    if ini.profile == "gaussian":
        half = 6 * ini.std + margin
    elif ini.profile == "barenblatt":
        g2 = cfg.gamma2 if cfg.gamma2 > 0 else 1.0
        half = 1.5 * barenblatt_radius(ini.t0 + cfg.T, cfg.d, g2) + margin
    elif ini.profile == "uniform_bump":
        half = 1.5 * ini.std + max(margin, ini.std)
    else:
        half = 4 * cfg.potential.width + margin
    return ini.mean - half, ini.mean + half


def make_grid(cfg):
    low, high = auto_box(cfg) if cfg.auto_box else (cfg.low, cfg.high)
    return DensityGrid.from_box([low] * cfg.d, [high] * cfg.d, cfg.cells)


def boundary_mass(grid):
    v = grid.values
    m = 0.0
    for a in range(grid.d):
        first = np.take(v, 0, axis=a).sum()
        last = np.take(v, -1, axis=a).sum()
        m = max(m, first, last)
    return float(m * grid.cell_volume)


# ---------------------------------------------------------------------------
# Operator


class FluxOperator:
    """Face fluxes and their divergence for one PDE config and grid layout."""

    def __init__(self, cfg, grid):
        self.cfg = cfg
        self.grid = grid
        self.d = grid.d
        self.h = np.asarray(grid.cell_size)
        self.D = 0.5 * cfg.sigma_inf**2
        self.g = aggregation_kernel(cfg.aggregation, self.d)
        self.active_g = cfg.aggregation.active and cfg.gamma2 > 0
        self.advection = cfg.advection
        pot = potential(cfg.potential, self.d)
        self.face_points = []
        self.grad_u = []
        self.stencils = []
        centers = [grid.axis_centers(a) for a in range(self.d)]
        for a in range(self.d):
            axes = list(centers)
            axes[a] = grid.origin[a] + self.h[a] * np.arange(1, grid.cells[a])
            pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            self.face_points.append(pts)
            self.grad_u.append(pot.gradient(pts)[..., a] if cfg.potential.depth > 0 else np.zeros(pts.shape[:-1]))
            if self.active_g:
                self.stencils.append(self._stencil(a))

    def _stencil(self, a):
        cells = self.grid.cells
        ms = []
        axes = []
        for b in range(self.d):
            m = min(cells[b], int(math.ceil(self.g.cutoff / self.h[b])) + 1)
            ms.append(m)
            if b == a:
                axes.append(self.h[b] * (np.arange(2 * m) - m + 0.5))
            else:
                axes.append(self.h[b] * (np.arange(2 * m + 1) - m))
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return self.g.gradient(pts)[..., a] * self.grid.cell_volume, ms

    def aggregation_velocity(self, rho, a):
        """``(grad G_a * rho)`` component ``a`` at the faces normal to axis ``a``."""
        stencil, ms = self.stencils[a]
        if self.cfg.conv_mode == "fft":
            full = signal.fftconvolve(rho, stencil, mode="full")
        else:
            full = signal.convolve(rho, stencil, mode="full", method="direct")
        sl = []
        for b in range(self.d):
            n = self.grid.cells[b] - (1 if b == a else 0)
            sl.append(slice(ms[b], ms[b] + n))
        return full[tuple(sl)]

    def velocities(self, rho):
        out = []
        for a in range(self.d):
            v = -self.cfg.gamma1 * self.grad_u[a]
            if self.active_g:
                v = v + self.cfg.gamma2 * self.aggregation_velocity(rho, a)
            out.append(v)
        return out

    def fluxes(self, rho, vel=None):
        """Face flux arrays, one per axis (interior faces only)."""
        vel = self.velocities(rho) if vel is None else vel
        g2 = self.cfg.gamma2
        out = []
        for a in range(self.d):
            lo = np.take(rho, np.arange(rho.shape[a] - 1), axis=a)
            hi = np.take(rho, np.arange(1, rho.shape[a]), axis=a)
            grad = (hi - lo) / self.h[a]
            mean = 0.5 * (lo + hi)
            v = vel[a]
            diff = self.D + g2 * mean
            adv = np.where(v > 0, v * lo, v * hi)
            if self.advection == "hybrid":
                # central weighting where the cell Peclet number allows it
                central = np.abs(v) * self.h[a] <= 2 * diff
                adv = np.where(central, v * mean, adv)
            out.append(-diff * grad + adv)
        return out

    def divergence(self, fluxes):
        div = np.zeros(self.grid.cells)
        for a, F in enumerate(fluxes):
            shape = list(F.shape)
            shape[a] = 1
            z = np.zeros(shape)
            Fp = np.concatenate([z, F, z], axis=a)
            div += np.diff(Fp, axis=a) / self.h[a]
        return div

    def rhs(self, rho):
        return -self.divergence(self.fluxes(rho))

    def dt_limit(self, rho, vel=None):
        """``(dt, binding)`` with ``binding`` in {"diffusion", "advection"}."""
        vel = self.velocities(rho) if vel is None else vel
        hmin = float(self.h.min())
        diff = self.D + self.cfg.gamma2 * max(float(rho.max()), 0.0)
        dt_d = hmin**2 / (2 * self.d * diff) if diff > 0 else math.inf
        vmax = max((float(np.abs(v).max()) if v.size else 0.0) for v in vel)
        dt_a = hmin / vmax if vmax > 0 else math.inf
        if dt_d <= dt_a:
            return self.cfg.cfl * dt_d, "diffusion"
        return self.cfg.cfl * dt_a, "advection"


def rhs_flux(rho, cfg, grid=None):
    """Face fluxes for a density given as a DensityGrid (or array with ``grid``)."""
    if isinstance(rho, DensityGrid):
        grid, rho = rho, rho.values
    return FluxOperator(cfg, grid).fluxes(np.asarray(rho, dtype=float))


def step(rho, dt, op):
    """One forward Euler step with the clipping policy.

    Returns ``(new_rho, clipped_mass)``.

    Raises
    ------
    CFLError
        If ``dt`` exceeds the CFL limit (names the binding constraint).
    NegativeDensityError
        If any value falls below ``-1e-12``.
    """
    vel = op.velocities(rho)
    lim, binding = op.dt_limit(rho, vel)
    if dt > lim * (1 + 1e-12):
        raise CFLError(f"dt={dt:.3g} exceeds the {binding} limit {lim:.3g}", constraint=binding)
    new = rho - dt * op.divergence(op.fluxes(rho, vel))
    mn = float(new.min())
    clipped = 0.0
    if mn < 0:
        if mn < CLIP_FLOOR:
            raise NegativeDensityError(f"density undershoot {mn:.3g} below {CLIP_FLOOR}")
        neg = new < 0
        clipped = float(-new[neg].sum() * op.grid.cell_volume)
        before = float(new.sum())
        new = np.where(neg, 0.0, new)
        new *= before / new.sum()
        log.debug("clipped %.3g mass and renormalised", clipped)
    return new, clipped


# ---------------------------------------------------------------------------
# Residual


def _d4(f, h, a):
    """Fourth-order centred first derivative (second order at the two edge layers)."""
    g = np.gradient(f, h, axis=a, edge_order=2)
    n = f.shape[a]
    if n >= 5:
        sl = lambda s: np.take(f, np.arange(2, n - 2) + s, axis=a)  # noqa: E731
        inner = (-sl(2) + 8 * sl(1) - 8 * sl(-1) + sl(-2)) / (12 * h)
        idx = [slice(None)] * f.ndim
        idx[a] = slice(2, n - 2)
        g[tuple(idx)] = inner
    return g


def high_order_rhs(rho, op):
    """Higher-order evaluation of the right-hand side at cell centres."""
    cfg = op.cfg
    phi = op.D * rho + 0.5 * cfg.gamma2 * rho * rho
    out = np.zeros_like(rho)
    grid = op.grid
    centers = grid.centers()
    pot = potential(cfg.potential, grid.d)
    grad_u = pot.gradient(centers) if cfg.potential.depth > 0 else np.zeros(centers.shape)
    conv = None
    if op.active_g:
        g = op.g
        # centre-to-centre convolution, exact quadrature of the grid function
        pts = centers.reshape(-1, grid.d)
        conv = np.zeros(centers.shape)
        for a in range(grid.d):
            ms = [grid.cells[b] for b in range(grid.d)]
            axes = [grid.cell_size[b] * (np.arange(2 * ms[b] - 1) - (ms[b] - 1)) for b in range(grid.d)]
            st = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            full = signal.fftconvolve(rho, g.gradient(st)[..., a] * grid.cell_volume, mode="full")
            sl = tuple(slice(ms[b] - 1, ms[b] - 1 + grid.cells[b]) for b in range(grid.d))
            conv[..., a] = full[sl]
        del pts
    for a in range(grid.d):
        h = grid.cell_size[a]
        out += _d4(_d4(phi, h, a), h, a)
        v = -cfg.gamma1 * grad_u[..., a]
        if conv is not None:
            v = v + cfg.gamma2 * conv[..., a]
        out -= _d4(rho * v, h, a)
    return out


def snapshot_residual(prev, cur, dt, op):
    """L1 norm of ``(rho_n - rho_{n-1})/dt - (R(rho_n) + R(rho_{n-1}))/2``."""
    r = (cur - prev) / dt - 0.5 * (high_order_rhs(cur, op) + high_order_rhs(prev, op))
    return float(np.abs(r).sum() * op.grid.cell_volume)


# ---------------------------------------------------------------------------
# Driver


@dataclass
class PdeResult:
    grid: DensityGrid
    snapshots: dict
    records: list
    clipped_mass: float = 0.0
    steps: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def times(self):
        return sorted(self.snapshots)

    def at(self, t):
        return self.snapshots[min(self.snapshots, key=lambda s: abs(s - t))]


def snapshot_times(cfg):
    if cfg.snapshots <= 1 or cfg.T == 0:
        return [0.0] if cfg.T == 0 else [0.0, float(cfg.T)]
    return [float(t) for t in np.linspace(0.0, cfg.T, cfg.snapshots)]


def solve(cfg, times=None, rho0=None, validate=True):
    """Integrate the PDE and return snapshots at ``times``.

    Parameters
    ----------
    cfg : PdeConfig
    times : sequence of float, optional
        Snapshot times in ``[0, T]``; defaults to ``cfg.snapshots`` uniform
        times including 0 and T.
    rho0 : DensityGrid, optional
        Initial datum overriding the named profile.

    Raises
    ------
    ConfigError
        Invalid config or initial mass touching the boundary.
    BlowUpError
        If ``max rho`` exceeds ``1e6`` times its initial value; the partial
        result is attached as ``exc.partial``.
    """
    if validate:
        bad = pde_violations(cfg)
        if bad:
            raise ConfigError(bad)
    if rho0 is None:
        grid = make_grid(cfg)
        grid = grid.with_values(initial_density(cfg, grid))
    else:
        grid = rho0
    bm = boundary_mass(grid)
    if bm >= BOUNDARY_MASS_TOL:
        raise ConfigError([("pde-domain", f"boundary cells hold mass {bm:.3g} >= {BOUNDARY_MASS_TOL} at t=0; enlarge the box")])
    op = FluxOperator(cfg, grid)
    times = snapshot_times(cfg) if times is None else sorted(float(t) for t in times)
    rho = grid.values.copy()
    max0 = float(rho.max())
    mass0 = float(rho.sum() * grid.cell_volume)
    t = 0.0
    snaps = {}
    records = []
    clipped = 0.0
    nsteps = 0
    dts = []
    result = PdeResult(grid, snaps, records, 0.0, 0, {})
    prev_snap = None

    def record(tt):
        nonlocal prev_snap
        snaps[tt] = grid.with_values(rho.copy())
        rec = {"t": tt, "mass": float(rho.sum() * grid.cell_volume), "max": float(rho.max()),
               "min": float(rho.min())}
        if prev_snap is not None and tt > prev_snap[0]:
            rec["residual_l1"] = snapshot_residual(prev_snap[1], rho, tt - prev_snap[0], op)
        records.append(rec)
        prev_snap = (tt, rho.copy())

    for target in times:
        while t < target - 1e-14 * max(1.0, target):
            lim, _ = op.dt_limit(rho)
            dt = min(lim, target - t)
            rho, c = step(rho, dt, op)
            clipped += c
            nsteps += 1
            dts.append(dt)
            t = target if abs(target - t - dt) <= 1e-14 * max(1.0, target) else t + dt
            if not np.isfinite(rho).all() or rho.max() > BLOWUP_FACTOR * max0:
                result.clipped_mass, result.steps = clipped, nsteps
                exc = BlowUpError(f"density blow-up at t={t:.6g}: max {rho.max():.3g}", time=t)
                exc.partial = result
                raise exc
        record(target)
    result.clipped_mass = clipped
    result.steps = nsteps
    result.meta = {
        "mass0": mass0,
        "steps": nsteps,
        "dt_min": min(dts) if dts else None,
        "dt_max": max(dts) if dts else None,
        "clipped_mass": clipped,
        "box": [grid.low.tolist(), grid.high.tolist()],
        "cells": list(grid.cells),
    }
    return result


# ---------------------------------------------------------------------------
# Oracle gates

HEAT_TOL = 1e-3
BARENBLATT_TOL = 0.02
MASS_DRIFT_TOL = 1e-12
STATIONARY_TOL = 1e-3


def heat_solution(x, t, mean, std, sigma):
    """Gaussian initial datum under ``rho_t = (sigma^2/2) lap rho``."""
    x = np.asarray(x, dtype=float)
    var = std**2 + sigma**2 * t
    d = x.shape[-1]
    r2 = np.einsum("...i,...i->...", x - mean, x - mean)
    return np.exp(-0.5 * r2 / var) / (2 * math.pi * var) ** (d / 2)


def gate_kind(cfg):
    """Which exact oracle applies to ``cfg``, or ``None``."""
    ini = cfg.init
    flat_u = cfg.potential.depth == 0 or cfg.gamma1 == 0
    no_g = not cfg.aggregation.active or cfg.gamma2 == 0
    if ini.profile == "stationary":
        return "stationary"
    if ini.profile == "gaussian" and cfg.gamma2 == 0 and flat_u and cfg.sigma_inf > 0:
        return "heat"
    if ini.profile == "barenblatt" and cfg.sigma_inf == 0 and flat_u and no_g and cfg.gamma2 > 0:
        return "barenblatt"
    return None


def gate_report(cfg, result, kind=None):
    """Compare a solved run with its exact oracle.

    Every gate checks the mass drift per unit time; ``heat`` and
    ``barenblatt`` add the L1 error at ``T`` against the closed form, and
    ``stationary`` the L1 distance between the first and last snapshot.
    """
    kind = kind or gate_kind(cfg)
    times = result.times
    T = times[-1]
    first, last = result.snapshots[times[0]], result.snapshots[T]
    drift = abs(last.mass - first.mass) / max(T - times[0], 1.0)
    rep = {"gate": kind, "T": T, "mass_drift_per_time": drift, "mass_ok": bool(drift < MASS_DRIFT_TOL)}
    c = last.centers()
    if kind == "heat":
        exact = heat_solution(c, T, cfg.init.mean, cfg.init.std, cfg.sigma_inf)
        err = float(np.abs(last.values - exact).sum() * last.cell_volume)
        rep.update({"l1_error": err, "tol": HEAT_TOL, "oracle_ok": bool(err < HEAT_TOL)})
    elif kind == "barenblatt":
        exact = barenblatt(c - cfg.init.mean, cfg.init.t0 + T, cfg.d, cfg.gamma2)
        err = float(np.abs(last.values - exact).sum() * last.cell_volume)
        rep.update({"l1_error": err, "tol": BARENBLATT_TOL, "oracle_ok": bool(err <= BARENBLATT_TOL)})
    elif kind == "stationary":
        err = float(np.abs(last.values - first.values).sum() * last.cell_volume)
        rep.update({"l1_drift": err, "tol": STATIONARY_TOL, "oracle_ok": bool(err < STATIONARY_TOL)})
    else:
        rep["oracle_ok"] = True
    rep["ok"] = bool(rep["mass_ok"] and rep["oracle_ok"])
    return rep
