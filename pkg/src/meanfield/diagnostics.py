"""Martingale and tightness diagnostics along simulated trajectories.

Along a trajectory we track

* ``||h_N||_2^2`` through the exact pair sum of ``V_N``;
* ``A_N(t) = int_0^t I(u) du`` with integrand
  ``<X_N, 2(|grad g_N|^2 - grad g_N . a + |a|^2)> + sigma_N^2 ||grad h_N||_2^2``
  where ``a = -grad U + grad G_a * X_N``;
* ``S_N = ||h_N||^2 + A_N - int_0^t <X_N, 2|a|^2> du``;
* ``M_N = S_N - c1 sigma_N^2 t N^(beta(d+2)/d - 1)`` with
  ``c1 = -lap V_1(0) = ||grad W_1||_2^2``.

For ``gamma1 = gamma2 = 1`` Ito's formula makes ``M_N`` a martingale; for
other rates the same fields are recorded and the report flags that the
identity is not expected to hold.
"""

from dataclasses import dataclass, field
import math

import numpy as np

from .empirical import Phi, grad_hN_l2_sq_pairs, hN_l2_sq, mollified_field, moment_phi
from .errors import ConsistencyError
from .grid import DensityGrid
from .kernels import grad_sq_norm

MIN_REPLICAS = 50


@dataclass
class DiagnosticsTrace:
    times: list = field(default_factory=list)
    hN_l2: list = field(default_factory=list)
    integrand: list = field(default_factory=list)
    drift_integrand: list = field(default_factory=list)
    A_N: list = field(default_factory=list)
    drift_integral: list = field(default_factory=list)
    S_N: list = field(default_factory=list)
    M_N: list = field(default_factory=list)
    moment_phi: list = field(default_factory=list)
    grad_hN_l2: list = field(default_factory=list)
    tail_mass: list = field(default_factory=list)
    constants: dict = field(default_factory=dict)

    def as_arrays(self):
        return {k: np.asarray(v) for k, v in self.__dict__.items() if isinstance(v, list)}

    def to_dict(self):
        out = {k: [float(x) for x in v] for k, v in self.__dict__.items() if isinstance(v, list)}
        out["constants"] = dict(self.constants)
        return out

    def __len__(self):
        return len(self.times)


def quadratic_form(a, b):
    """``a^2 - a b + b^2`` (componentwise dot products for vectors)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim and a.shape[-1:] == b.shape[-1:] and a.ndim > 1:
        return np.einsum("...i,...i->...", a, a) - np.einsum("...i,...i->...", a, b) + np.einsum("...i,...i->...", b, b)
    return a * a - a * b + b * b


def an_integrand(grad_g, a, sigma, grad_h_sq):
    """Particle average of ``2(|grad g|^2 - grad g . a + |a|^2)`` plus ``sigma^2 ||grad h||^2``."""
    q = quadratic_form(grad_g, a)
    return float(2.0 * np.mean(q) + sigma**2 * grad_h_sq)


def lemma_constant(kernels):
    """``c1 = -lap V_1(0)``, positive, equal to ``||grad W_1||_2^2``."""
    return grad_sq_norm(kernels.w1)


def moment_constants(config, phi=None):
    """Constants ``(c2, c3)`` making ``<X_N, phi> +- (c2 A_N + c3 t)`` sub/supermartingales.

    With ``b`` the drift and ``I`` the ``A_N`` integrand, Ito's formula for
    ``<X_N, phi>`` has drift ``<b . grad phi + sigma^2/2 lap phi>`` and

    * equal rates: ``|b| = gamma |a - grad g|`` and ``I >= <|a - grad g|^2>`` give
      ``c2 = ||grad phi|| gamma^2 / 2``, ``c3 = ||grad phi||/2 + sigma^2 ||lap phi|| / 2``;
    * otherwise ``b = gamma2 (a - grad g) + (gamma2 - gamma1)(a - grad G * X)`` and
      ``I >= <|a - grad g|^2 + |a|^2>`` give
      ``c2 = ||grad phi|| max(gamma2^2, (gamma1 - gamma2)^2) / 2`` and
      ``c3 = ||grad phi|| (1 + |gamma1 - gamma2| ||grad G_a||_inf) + sigma^2 ||lap phi|| / 2``.
    """
    from .kernels import aggregation_kernel

    phi = phi or Phi(config.d)
    g1, g2 = config.gamma1, config.gamma2
    sigma = config.sigma(config.N)
    gp, lp = phi.grad_sup, phi.lap_sup
    if g1 == g2:
        c2 = gp * g2**2 / 2
        c3 = gp / 2 + sigma**2 * lp / 2
    else:
        gsup = aggregation_kernel(config.aggregation, config.d)
        gsup = gsup.gradient_bound() if hasattr(gsup, "gradient_bound") else 0.0
        c2 = gp * max(g2**2, (g1 - g2) ** 2) / 2
        c3 = gp * (1 + abs(g1 - g2) * gsup) + sigma**2 * lp / 2
    return c2, c3


def auto_grid(x, kernel, cells_per_support=32):
    """Cell-centred grid covering ``x`` plus the kernel support."""
    d = x.shape[1]
    h = 2 * kernel.cutoff / cells_per_support
    lo = x.min(0) - kernel.cutoff - 2 * h
    hi = x.max(0) + kernel.cutoff + 2 * h
    cells = np.ceil((hi - lo) / h).astype(int)
    return DensityGrid(tuple(lo), (h,) * d, np.zeros(tuple(cells)))


def grad_h_sq_grid(x, w_n, cells_per_support=32):
    grid = auto_grid(x, w_n, cells_per_support)
    g = mollified_field(x, w_n, grid, "gradient", check_coverage=False)
    return float(np.sum(g * g) * grid.cell_volume)


class DiagnosticsObserver:
    """Builds a :class:`DiagnosticsTrace` as the simulation runs.

    Parameters
    ----------
    grad_h : {"grid", "pairs"}
        How ``||grad h_N||^2`` is evaluated: grid quadrature of the
        mollified gradient, or the pair sum ``-(1/N^2) sum lap V_N``.
    tail_radius : float
        Radius for the tail-mass fraction recorded at each observation.
    """

    def __init__(self, grad_h="grid", tail_radius=3.0, cells_per_support=32, strict=True):
        self.trace = DiagnosticsTrace()
        self.grad_h = grad_h
        self.tail_radius = tail_radius
        self.cells_per_support = cells_per_support
        self.strict = strict
        self._c1 = None

    def observe(self, ensemble, info):
        tr = self.trace
        ks = info["kernels"]
        cfg = info["config"]
        x = ensemble.positions
        N, d = x.shape
        sigma = info["sigma"]
        if self._c1 is None:
            self._c1 = lemma_constant(ks)
            rate_exp = cfg.beta * (d + 2) / d - 1
            tr.constants.update({
                "c1": self._c1,
                "lap_V1_0": -self._c1,
                "rate_exponent": rate_exp,
                "compensator_rate": self._c1 * sigma**2 * float(N) ** rate_exp,
                "martingale_identity_expected": cfg.gamma1 == 1 and cfg.gamma2 == 1,
                "sigma_N": sigma,
            })
        t = float(info["t"])
        grad_g = info["grad_v"]
        a = -info["grad_u"] + info["grad_g"]
        if cfg.gamma2 == 0:
            # the forces were skipped while stepping; the functionals still need them
            from .forces import brute_field

            grad_g = brute_field(x, ks.v_n)
            a = -info["grad_u"] + brute_field(x, ks.g)
        if sigma == 0:
            gh = 0.0
        elif self.grad_h == "pairs":
            gh = grad_hN_l2_sq_pairs(x, ks.v_n)
        else:
            gh = grad_h_sq_grid(x, ks.w_n, self.cells_per_support)
        integrand = an_integrand(grad_g, a, sigma, gh)
        if integrand < -1e-9:
            raise ConsistencyError(f"negative A_N integrand {integrand:.3g} at t={t}")
        drift_int = float(2.0 * np.mean(np.einsum("ki,ki->k", a, a)))
        h2 = hN_l2_sq(x, ks.v_n)
        if tr.times:
            du = t - tr.times[-1]
            A = tr.A_N[-1] + 0.5 * du * (tr.integrand[-1] + integrand)
            D = tr.drift_integral[-1] + 0.5 * du * (tr.drift_integrand[-1] + drift_int)
        else:
            A = D = 0.0
        S = h2 + A - D
        tr.times.append(t)
        tr.hN_l2.append(h2)
        tr.integrand.append(integrand)
        tr.drift_integrand.append(drift_int)
        tr.A_N.append(A)
        tr.drift_integral.append(D)
        tr.S_N.append(S)
        tr.M_N.append(S - tr.constants["compensator_rate"] * t)
        tr.moment_phi.append(moment_phi(x))
        tr.grad_hN_l2.append(gh)
        tr.tail_mass.append(float(np.mean(np.sqrt(np.einsum("ki,ki->k", x, x)) > self.tail_radius)))


def accumulate_AN(trace, integrand, du, t=None):
    """Append one trapezoidal step of ``A_N`` to ``trace`` and return it.

    Raises
    ------
    ConsistencyError
        For an integrand below ``-1e-9``.
    """
    if integrand < -1e-9:
        raise ConsistencyError(f"negative A_N integrand {integrand:.3g}")
    if not trace.A_N:
        trace.times.append(0.0 if t is None else t)
        trace.integrand.append(integrand)
        trace.A_N.append(0.0)
        return trace
    trace.times.append(trace.times[-1] + du if t is None else t)
    trace.A_N.append(trace.A_N[-1] + 0.5 * du * (trace.integrand[-1] + integrand))
    trace.integrand.append(integrand)
    return trace


def compute_SN(trace, i=-1):
    """``S_N`` and ``M_N`` at entry ``i`` of a trace."""
    return trace.S_N[i], trace.M_N[i]


def stopping_time(trace, k):
    """First recorded time with ``S_N > k``, or ``None``."""
    s = np.asarray(trace.S_N if hasattr(trace, "S_N") else trace)
    times = np.asarray(trace.times) if hasattr(trace, "times") else np.arange(s.size, dtype=float)
    hit = np.nonzero(s > k)[0]
    return float(times[hit[0]]) if hit.size else None


def survival_fractions(traces, ks):
    """Fraction of traces with ``tau_N^k > T`` for each threshold."""
    out = []
    for k in ks:
        out.append(float(np.mean([stopping_time(tr, k) is None for tr in traces])))
    return out


# ---------------------------------------------------------------------------
# Weak-form residual of the empirical measure


class WeakFormObserver:
    """Accumulates ``M_N(f, t)``, the residual of the weak form.

    Each step contributes
    ``<X_{m+1}, f> - <X_m, f> - (<f(X_m + b_m dt)> - <f(X_m)>) - dt sigma^2/2 <lap f(X_m)>``,
    that is, the observed change minus the drift's deterministic flow and
    the Ito correction.  The flow term equals ``dt <b . grad f>`` up to
    O(dt^2), so the residual is the discrete martingale term plus O(dt)
    bias, and it vanishes identically when ``sigma = 0``.
    """

    every_step = True

    def __init__(self, f, record_every=1):
        self.f = f
        self.record_every = record_every
        self.times = []
        self.values = []
        self._acc = 0.0
        self._pending = None
        self._max_sq = 0.0

    def observe(self, ensemble, info):
        x = ensemble.positions
        fx = float(np.mean(self.f.value(x)))
        if self._pending is not None:
            self._acc += fx - self._pending
        m = info["step"]
        M = self._acc
        self._max_sq = max(self._max_sq, M * M)
        if m % self.record_every == 0 or info.get("last"):
            self.times.append(float(info["t"]))
            self.values.append(M)
        if info.get("last"):
            self._pending = None
            return
        dt, sigma = info["dt"], info["sigma"]
        flow = float(np.mean(self.f.value(x + info["drift"] * dt)))
        ito = 0.5 * sigma**2 * dt * float(np.mean(self.f.laplacian(x))) if sigma else 0.0
        # next residual increment is <X_{m+1}, f> - (flow + ito)
        self._pending = flow + ito

    @property
    def sup_sq(self):
        """``sup_t M_N(f, t)^2`` over every step."""
        return self._max_sq


def doob_bound(sigma, grad_sup, T, N):
    return 4.0 * sigma**2 * grad_sup**2 * T / N


def _mean_se(v):
    v = np.asarray(v, dtype=float)
    n = v.shape[0]
    return v.mean(axis=0), v.std(axis=0, ddof=1) / math.sqrt(n)


def martingale_residual_test(runs, f, sigma, T, N, runs_half=None, slack=0.5):
    """Statistics of ``M_N(f, .)`` over replicas.

    Parameters
    ----------
    runs : list of WeakFormObserver
        One per replica, all from the same config.
    runs_half : list of WeakFormObserver, optional
        Replicas at ``dt/2``; enables the Richardson bias band.

    Returns
    -------
    dict with checkpoint means/SEs, ``E sup M^2``, the Doob bound and, when
    ``runs_half`` is given, the extrapolated mean ``2 m(dt/2) - m(dt)`` and
    whether it lies within 3 standard errors of zero.
    """
    if len(runs) < MIN_REPLICAS:
        raise ValueError(f"martingale_residual_test needs at least {MIN_REPLICAS} replicas, got {len(runs)}")
    vals = np.array([r.values for r in runs])
    times = np.asarray(runs[0].times)
    mean, se = _mean_se(vals)
    sup_sq = np.array([r.sup_sq for r in runs])
    esup, esup_se = float(sup_sq.mean()), float(sup_sq.std(ddof=1) / math.sqrt(len(runs)))
    bound = doob_bound(sigma, f.grad_sup, T, N)
    report = {
        "replicas": len(runs),
        "times": times.tolist(),
        "mean": mean.tolist(),
        "se": se.tolist(),
        "final_mean": float(mean[-1]),
        "final_se": float(se[-1]),
        "final_var": float(vals[:, -1].var(ddof=1)),
        "E_sup_sq": esup,
        "E_sup_sq_se": esup_se,
        "doob_bound": bound,
        "doob_ok": bool(esup <= (1 + slack) * bound) if bound > 0 else bool(esup == 0),
        "plain_ok": bool(np.all(np.abs(mean) <= 3 * se + 1e-300)),
    }
    if runs_half is not None:
        vh = np.array([r.values for r in runs_half])
        th = np.asarray(runs_half[0].times)
        # compare at the coarse checkpoints
        pick = np.searchsorted(th, times - 1e-12)
        mh, seh = _mean_se(vh[:, pick])
        extrap = 2 * mh - mean
        extrap_se = np.sqrt(4 * seh**2 + se**2)
        bias = mean - extrap
        report.update({
            "bias_estimate": bias.tolist(),
            "extrapolated_mean": extrap.tolist(),
            "extrapolated_se": extrap_se.tolist(),
            "richardson_ok": bool(np.all(np.abs(extrap) <= 3 * extrap_se + 1e-300)),
        })
    return report


def submartingale_check(traces, c2, c3, band=3.0):
    """Check the moment functional ``<X_N, phi> +- (c2 A_N + c3 t)``.

    Returns the worst standardized increment of the submartingale candidate
    (should be ``>= -band``) and of the supermartingale mirror (should be
    ``<= band``) over all checkpoint pairs ``s < t``.
    """
    phi = np.array([tr.moment_phi for tr in traces])
    A = np.array([tr.A_N for tr in traces])
    t = np.asarray(traces[0].times)
    sub = phi + c2 * A + c3 * t
    sup = phi - c2 * A - c3 * t
    n = len(traces)
    worst_sub, worst_sup = math.inf, -math.inf
    for i in range(t.size):
        for j in range(i + 1, t.size):
            for arr, kind in ((sub, "sub"), (sup, "sup")):
                inc = arr[:, j] - arr[:, i]
                m = inc.mean()
                se = inc.std(ddof=1) / math.sqrt(n) if n > 1 else 0.0
                if se == 0:
                    z = math.copysign(math.inf, m) if m != 0 else 0.0
                else:
                    z = m / se
                if kind == "sub":
                    worst_sub = min(worst_sub, z)
                else:
                    worst_sup = max(worst_sup, z)
    return {
        "c2": c2,
        "c3": c3,
        "worst_sub_z": worst_sub,
        "worst_sup_z": worst_sup,
        "submartingale_ok": bool(worst_sub >= -band),
        "supermartingale_ok": bool(worst_sup <= band),
    }
