"""Base kernels, confining potentials and their N-dependent rescalings.

Two mollifier families are provided:

* ``gaussian`` -- isotropic normal density with standard deviation
  ``length_scale``.  Its self-convolution is again Gaussian with the scale
  multiplied by sqrt(2).
* ``bspline_compact`` -- tensor product of the centred cardinal cubic
  B-spline (order 4) scaled by ``length_scale``.  Its self-convolution is the
  tensor product of the order-8 (degree 7) cardinal B-spline, so both the
  mollifier and the repulsion kernel have compact support and exact
  piecewise-polynomial derivatives.

All evaluators take points with a trailing axis of length ``d`` (a scalar is
accepted when ``d == 1``) and are pure: they hold only immutable parameters.
"""

from dataclasses import dataclass
from functools import lru_cache
import math
import warnings

import numpy as np
from scipy import stats

from .errors import AliasingWarning, CapabilityError, ConfigError

KERNEL_FAMILIES = ("gaussian", "bspline_compact")
POTENTIAL_FAMILIES = ("bounded_well", "quadratic")
AGGREGATION_FAMILIES = ("gaussian_bump", "none")
ORDERS = ("value", "gradient", "laplacian")

# Neglected mass used to truncate Gaussian kernels for neighbour search.
TRUNCATION_TAIL = 1e-12


# ---------------------------------------------------------------------------
# Specs


@dataclass(frozen=True)
class KernelSpec:
    kernel_id: str = "gaussian"
    length_scale: float = 1.0
    d: int = 1

    def __post_init__(self):
        if self.kernel_id not in KERNEL_FAMILIES:
            raise ConfigError([("kernel.family", f"unknown kernel family {self.kernel_id!r}")])
        if not self.length_scale > 0:
            raise ConfigError([("kernel.scale", "kernel length scale must be positive")])
        if int(self.d) != self.d or self.d < 1:
            raise ConfigError([("dimension", "dimension must be a positive integer")])


@dataclass(frozen=True)
class PotentialSpec:
    """Confining potential ``U``.

    ``bounded_well`` is ``depth * (1 - exp(-|x|^2 / width^2))``, nonnegative,
    bounded with bounded gradient.  ``quadratic`` is ``depth * |x|^2 / 2``;
    it is unbounded and only meant for exact Ornstein-Uhlenbeck checks.
    """

    potential_id: str = "bounded_well"
    depth: float = 1.0
    width: float = 1.0

    def __post_init__(self):
        if self.potential_id not in POTENTIAL_FAMILIES:
            raise ConfigError([("potential.family", f"unknown potential {self.potential_id!r}")])
        if self.depth < 0:
            raise ConfigError([("potential.depth", "potential depth must be nonnegative")])
        if not self.width > 0:
            raise ConfigError([("potential.width", "potential width must be positive")])

    @property
    def bounded(self):
        return self.potential_id == "bounded_well" or self.depth == 0


@dataclass(frozen=True)
class AggregationSpec:
    """Aggregation kernel ``G_a(x) = amplitude * exp(-|x|^2 / (2 range^2))``."""

    kernel_id: str = "none"
    amplitude: float = 0.0
    range: float = 1.0

    def __post_init__(self):
        if self.kernel_id not in AGGREGATION_FAMILIES:
            raise ConfigError([("aggregation.family", f"unknown aggregation kernel {self.kernel_id!r}")])
        if self.amplitude < 0:
            raise ConfigError([("aggregation.amplitude", "aggregation amplitude must be nonnegative")])
        if not self.range > 0:
            raise ConfigError([("aggregation.range", "aggregation range must be positive")])

    @property
    def active(self):
        return self.kernel_id != "none" and self.amplitude > 0


# ---------------------------------------------------------------------------
# Helpers


def as_points(x, d):
    """Return ``x`` as a float array whose trailing axis has length ``d``."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar point given for dimension {d}")
        x = x.reshape(1)
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing axis of length {d}, got shape {x.shape}")
    return x


def _sq_norm(x):
    return np.einsum("...i,...i->...", x, x)


def cardinal_bspline(order, x, deriv=0):
    """Centred cardinal B-spline ``M_order`` (support ``[-order/2, order/2]``).

    Evaluated from the truncated-power form written in ``t = order/2 - |x|``,
    which only sums the terms active near the point and keeps the result
    exactly even (odd for the first derivative).
    """
    m = int(order)
    p = m - 1 - deriv
    if deriv < 0 or p < 1:
        raise CapabilityError(f"B-spline of order {m} has no continuous derivative of order {deriv}")
    x = np.asarray(x, dtype=float)
    t = 0.5 * m - np.abs(x)
    out = np.zeros_like(t)
    for k in range((m + 1) // 2 + 1):
        tk = t - k
        term = np.where(tk > 0, tk, 0.0) ** p
        out += (-1) ** k * math.comb(m, k) * term
    out /= math.factorial(p)
    out = np.where(t > 0, out, 0.0)
    if deriv % 2 == 1:
        # dt/dx = -sign(x); zero at the origin by symmetry
        out = -np.sign(x) * out
    return out


def _bspline_sup(order, deriv):
    xs = np.linspace(-order / 2, order / 2, 4001 * order)
    return float(np.max(np.abs(cardinal_bspline(order, xs, deriv))))


# ---------------------------------------------------------------------------
# Evaluators


class Evaluator:
    """Common interface: ``value``, ``gradient`` and ``laplacian``.

    ``cutoff`` is the per-axis half width beyond which the evaluator vanishes
    (compact support) or is neglected (``compact`` False, truncated tail).
    """

    d = 1
    cutoff = math.inf
    compact = False

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def laplacian(self, x):
        raise NotImplementedError

    def __call__(self, x, order="value"):
        if order not in ORDERS:
            raise CapabilityError(f"order {order!r} not supported by {type(self).__name__}")
        return getattr(self, order)(x)

    def hessian_bound(self):
        """Upper bound on the spectral norm of the Hessian (Lipschitz of gradient)."""
        raise NotImplementedError


class ZeroKernel(Evaluator):
    compact = True
    cutoff = 0.0

    def __init__(self, d):
        self.d = d

    def value(self, x):
        x = as_points(x, self.d)
        return np.zeros(x.shape[:-1])

    def gradient(self, x):
        return np.zeros_like(as_points(x, self.d))

    def laplacian(self, x):
        return self.value(x)

    def hessian_bound(self):
        return 0.0

    def fourier(self, lam):
        return np.zeros(np.asarray(lam, dtype=float).shape[:-1])

    def __repr__(self):
        return f"ZeroKernel(d={self.d})"


class GaussianKernel(Evaluator):
    """``mass * N(0, scale^2 I_d)`` density."""

    def __init__(self, scale, d=1, mass=1.0):
        self.scale = float(scale)
        self.d = int(d)
        self.mass = float(mass)
        self._norm = self.mass * (2 * math.pi * self.scale**2) ** (-self.d / 2)
        self.cutoff = self.scale * float(stats.chi.isf(TRUNCATION_TAIL, self.d))

    def value(self, x):
        x = as_points(x, self.d)
        return self._norm * np.exp(-0.5 * _sq_norm(x) / self.scale**2)

    def gradient(self, x):
        x = as_points(x, self.d)
        return -(x / self.scale**2) * self.value(x)[..., None]

    def laplacian(self, x):
        x = as_points(x, self.d)
        s2 = self.scale**2
        return (_sq_norm(x) / s2**2 - self.d / s2) * self.value(x)

    def hessian_bound(self):
        return self._norm / self.scale**2

    def gradient_bound(self):
        return self._norm * math.exp(-0.5) / self.scale

    def second_moment(self):
        """Per-axis variance of the normalised kernel."""
        return self.scale**2

    def fourier(self, lam):
        """Transform with the ``(2 pi)^(-d/2) int exp(i lam x) f(x) dx`` convention."""
        lam = as_points(lam, self.d)
        return self.mass * (2 * math.pi) ** (-self.d / 2) * np.exp(-0.5 * self.scale**2 * _sq_norm(lam))

    def __repr__(self):
        return f"GaussianKernel(scale={self.scale!r}, d={self.d}, mass={self.mass!r})"


class TensorBSplineKernel(Evaluator):
    """Product of 1D centred cardinal B-splines of the given order."""

    compact = True

    def __init__(self, order, scale, d=1):
        self.order = int(order)
        self.scale = float(scale)
        self.d = int(d)
        self.cutoff = 0.5 * self.order * self.scale

    def _factors(self, x, deriv):
        h = self.scale
        return cardinal_bspline(self.order, x / h, deriv) / h ** (1 + deriv)

    def value(self, x):
        x = as_points(x, self.d)
        return np.prod(self._factors(x, 0), axis=-1)

    def gradient(self, x):
        x = as_points(x, self.d)
        f0 = self._factors(x, 0)
        f1 = self._factors(x, 1)
        out = np.empty_like(x)
        for a in range(self.d):
            others = np.prod(np.delete(f0, a, axis=-1), axis=-1) if self.d > 1 else 1.0
            out[..., a] = f1[..., a] * others
        return out

    def laplacian(self, x):
        x = as_points(x, self.d)
        f0 = self._factors(x, 0)
        f2 = self._factors(x, 2)
        out = np.zeros(x.shape[:-1])
        for a in range(self.d):
            others = np.prod(np.delete(f0, a, axis=-1), axis=-1) if self.d > 1 else 1.0
            out += f2[..., a] * others
        return out

    def hessian_bound(self):
        m, h, d = self.order, self.scale, self.d
        s0, s1, s2 = (_bspline_sup(m, k) for k in range(3))
        if d == 1:
            return s2 / h**3
        # Frobenius bound on the tensor-product Hessian.
        diag = s2 * s0 ** (d - 1)
        off = s1**2 * s0 ** (d - 2)
        return math.sqrt(d * diag**2 + d * (d - 1) * off**2) / h ** (d + 2)

    def gradient_bound(self):
        s0, s1 = _bspline_sup(self.order, 0), _bspline_sup(self.order, 1)
        return math.sqrt(self.d) * s1 * s0 ** (self.d - 1) / self.scale ** (self.d + 1)

    def second_moment(self):
        return self.order * self.scale**2 / 12.0

    def fourier(self, lam):
        lam = as_points(lam, self.d)
        u = 0.5 * lam * self.scale
        # np.sinc(z) = sin(pi z) / (pi z)
        return (2 * math.pi) ** (-self.d / 2) * np.prod(np.sinc(u / math.pi) ** self.order, axis=-1)

    def __repr__(self):
        return f"TensorBSplineKernel(order={self.order}, scale={self.scale!r}, d={self.d})"


class RescaledKernel(Evaluator):
    """``chi^d K(chi x)`` with derivatives ``chi^(d+1) grad K`` and ``chi^(d+2) lap K``."""

    def __init__(self, base, chi):
        self.base = base
        self.chi = float(chi)
        self.d = base.d
        self.compact = base.compact
        self.cutoff = base.cutoff / self.chi

    def value(self, x):
        x = as_points(x, self.d)
        return self.chi**self.d * self.base.value(self.chi * x)

    def gradient(self, x):
        x = as_points(x, self.d)
        return self.chi ** (self.d + 1) * self.base.gradient(self.chi * x)

    def laplacian(self, x):
        x = as_points(x, self.d)
        return self.chi ** (self.d + 2) * self.base.laplacian(self.chi * x)

    def hessian_bound(self):
        return self.chi ** (self.d + 2) * self.base.hessian_bound()

    def gradient_bound(self):
        return self.chi ** (self.d + 1) * self.base.gradient_bound()

    def second_moment(self):
        return self.base.second_moment() / self.chi**2

    def fourier(self, lam):
        lam = as_points(lam, self.d)
        return self.base.fourier(lam / self.chi)

    def __repr__(self):
        return f"RescaledKernel({self.base!r}, chi={self.chi!r})"


class PotentialEvaluator(Evaluator):
    def __init__(self, spec, d):
        self.spec = spec
        self.d = int(d)

    def value(self, x):
        x = as_points(x, self.d)
        u0, ell = self.spec.depth, self.spec.width
        r2 = _sq_norm(x)
        if self.spec.potential_id == "quadratic":
            return 0.5 * u0 * r2
        return u0 * (-np.expm1(-r2 / ell**2))

    def gradient(self, x):
        x = as_points(x, self.d)
        u0, ell = self.spec.depth, self.spec.width
        if self.spec.potential_id == "quadratic":
            return u0 * x
        return (2 * u0 / ell**2) * x * np.exp(-_sq_norm(x) / ell**2)[..., None]

    def laplacian(self, x):
        x = as_points(x, self.d)
        u0, ell = self.spec.depth, self.spec.width
        if self.spec.potential_id == "quadratic":
            return np.full(x.shape[:-1], u0 * self.d)
        r2 = _sq_norm(x)
        return (2 * u0 / ell**2) * np.exp(-r2 / ell**2) * (self.d - 2 * r2 / ell**2)

    def hessian_bound(self):
        if self.spec.potential_id == "quadratic":
            return self.spec.depth
        return 2 * self.spec.depth / self.spec.width**2

    def gradient_bound(self):
        if self.spec.potential_id == "quadratic":
            return math.inf if self.spec.depth > 0 else 0.0
        return math.sqrt(2) * self.spec.depth * math.exp(-0.5) / self.spec.width

    def __repr__(self):
        return f"PotentialEvaluator({self.spec!r}, d={self.d})"


# ---------------------------------------------------------------------------
# Constructors


@lru_cache(maxsize=None)
def mollifier(spec):
    """Base mollifier ``W_1`` for a :class:`KernelSpec`."""
    if spec.kernel_id == "gaussian":
        return GaussianKernel(spec.length_scale, spec.d)
    return TensorBSplineKernel(4, spec.length_scale, spec.d)


@lru_cache(maxsize=None)
def aggregation_kernel(spec, d):
    if not spec.active:
        return ZeroKernel(d)
    mass = spec.amplitude * (2 * math.pi * spec.range**2) ** (d / 2)
    return GaussianKernel(spec.range, d, mass=mass)


def potential(spec, d):
    return PotentialEvaluator(spec, d)


def evaluator_for(spec, d=None):
    if isinstance(spec, Evaluator):
        return spec
    if isinstance(spec, KernelSpec):
        return mollifier(spec)
    if d is None:
        raise ValueError("dimension required for potential/aggregation specs")
    if isinstance(spec, PotentialSpec):
        return potential(spec, d)
    if isinstance(spec, AggregationSpec):
        return aggregation_kernel(spec, d)
    raise TypeError(f"cannot build an evaluator from {spec!r}")


def eval_kernel(spec, x, order="value", d=None):
    """Evaluate a kernel, potential or aggregation kernel at ``x``.

    Parameters
    ----------
    spec : KernelSpec, PotentialSpec, AggregationSpec or Evaluator
    x : array_like
        Points with trailing axis ``d``.
    order : {"value", "gradient", "laplacian"}
    d : int, optional
        Dimension, required for potential and aggregation specs.
    """
    if order not in ORDERS:
        raise CapabilityError(f"unsupported order {order!r}; expected one of {ORDERS}")
    if d is None and isinstance(spec, KernelSpec):
        d = spec.d
    return evaluator_for(spec, d)(x, order)


def self_convolve(w1):
    """Closed-form ``V_1 = W_1 * W_1`` for a mollifier spec or evaluator."""
    w = evaluator_for(w1)
    if isinstance(w, GaussianKernel):
        return GaussianKernel(w.scale * math.sqrt(2), w.d, mass=w.mass**2)
    if isinstance(w, TensorBSplineKernel):
        return TensorBSplineKernel(2 * w.order, w.scale, w.d)
    if isinstance(w, RescaledKernel):
        return RescaledKernel(self_convolve(w.base), w.chi)
    raise TypeError(f"no closed-form self-convolution for {w!r}")


def chi_of(N, beta, d):
    return float(N) ** (beta / d)


def rescale(kernel, N, beta, d=None):
    """Moderate rescaling ``N^beta K(N^(beta/d) z)``.

    Raises :class:`ConfigError` when ``beta`` lies outside (0, 1).
    """
    k = evaluator_for(kernel)
    d = k.d if d is None else d
    if not 0 < beta < 1:
        raise ConfigError([("beta-range", f"beta must lie in (0, 1), got {beta}")])
    if N < 1 or int(N) != N:
        raise ConfigError([("particle-count", f"N must be a positive integer, got {N}")])
    return RescaledKernel(k, chi_of(N, beta, d))


def grad_sq_norm(w1):
    """``||grad W_1||_2^2`` through the identity ``-Laplacian(W_1 * W_1)(0)``."""
    w = evaluator_for(w1)
    v = self_convolve(w)
    return float(-v.laplacian(np.zeros(w.d)))


def tail_constant(w1, samples=20001):
    """Smallest ``c`` with ``W_1(x) <= c / (1 + |x|^(d+2))`` on ``|x| >= 1`` (sampled)."""
    w = evaluator_for(w1)
    d = w.d
    rmax = max(w.cutoff * math.sqrt(d), 2.0)
    if isinstance(w, GaussianKernel) or d == 1:
        r = np.linspace(1.0, rmax, samples)
        pts = np.zeros((samples, d))
        pts[:, 0] = r
        vals = w.value(pts) * (1 + r ** (d + 2))
        if d == 1:
            vals = np.maximum(vals, w.value(-pts) * (1 + r ** (d + 2)))
        return float(vals.max())
    g = np.linspace(-rmax, rmax, 801)
    pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1)
    r = np.sqrt(_sq_norm(pts))
    vals = np.where(r >= 1, w.value(pts) * (1 + r ** (d + 2)), 0.0)
    return float(vals.max())


@dataclass(frozen=True)
class KernelSet:
    """Every kernel the dynamics need for one ``(N, beta)`` pair."""

    w1: Evaluator
    v1: Evaluator
    w_n: Evaluator
    v_n: Evaluator
    g: Evaluator
    u: PotentialEvaluator
    N: int
    beta: float
    d: int

    @property
    def chi(self):
        return chi_of(self.N, self.beta, self.d)

    @classmethod
    def build(cls, kernel, potential_spec, aggregation, N, beta):
        w1 = mollifier(kernel)
        v1 = self_convolve(w1)
        d = kernel.d
        return cls(
            w1=w1,
            v1=v1,
            w_n=rescale(w1, N, beta, d),
            v_n=rescale(v1, N, beta, d),
            g=aggregation_kernel(aggregation, d),
            u=potential(potential_spec, d),
            N=int(N),
            beta=float(beta),
            d=d,
        )


# ---------------------------------------------------------------------------
# Fourier self-check


def _grid(n, half_width, d):
    dx = 2 * half_width / n
    x1 = -half_width + dx * np.arange(n)
    lam1 = 2 * math.pi * np.fft.fftfreq(n, dx)
    if d == 1:
        return x1[:, None], lam1[:, None], dx, lam1[1] - lam1[0]
    xs = np.stack(np.meshgrid(*([x1] * d), indexing="ij"), axis=-1)
    lams = np.stack(np.meshgrid(*([lam1] * d), indexing="ij"), axis=-1)
    return xs, lams, dx, lam1[1] - lam1[0]


def _separable_factors(kernel, x1, lam1):
    """1D factors ``(value, derivative, transform)`` of a product kernel, or ``None``.

    On a tensor grid the kernel values are outer products of these, which
    avoids evaluating the kernel at every grid point.
    """
    if isinstance(kernel, TensorBSplineKernel):
        one = TensorBSplineKernel(kernel.order, kernel.scale, 1)
    elif isinstance(kernel, GaussianKernel):
        one = GaussianKernel(kernel.scale, 1, mass=kernel.mass ** (1.0 / kernel.d))
    else:
        return None
    x = x1[:, None]
    return one.value(x), one.gradient(x)[:, 0], one.fourier(lam1[:, None])


def _outer(factors_per_axis):
    out = factors_per_axis[0]
    for f in factors_per_axis[1:]:
        out = np.multiply.outer(out, f)
    return out


def _dft(values, lams, x0, dx, d, phase=None):
    n = values.shape[0]
    axes = tuple(range(d))
    raw = np.fft.ifftn(values, axes=axes) * n**d
    if phase is None:
        phase = np.exp(1j * lams.sum(axis=-1) * x0)
    return (2 * math.pi) ** (-d / 2) * dx**d * phase * raw


def fourier_self_check(kernel, n=1024, half_width=None):
    """Residuals of the Plancherel, convolution and derivative identities.

    Transforms use the ``(2 pi)^(-d/2) int exp(i lam x) f(x) dx`` convention
    and are computed with an FFT on ``n`` points per axis of
    ``[-half_width, half_width)``.

    Returns
    -------
    dict
        ``plancherel`` (discrete identity), ``plancherel_closed_form`` (against
        ``||W_1||^2 = V_1(0)``), ``transform`` (against the closed-form
        transform), ``convolution`` (``V_1`` vs ``(2 pi)^(d/2) W_1^2``) and
        ``derivative`` (``grad W_1`` vs ``-i lam W_1``), all absolute maxima,
        plus the tail energies used for the aliasing warning.
    """
    w = evaluator_for(kernel)
    d = w.d
    if d > 2:
        raise CapabilityError("Fourier self-check implemented for d <= 2")
    v = self_convolve(w)
    if half_width is None:
        half_width = 1.5 * v.cutoff
    xs, lams, dx, dlam = _grid(n, half_width, d)
    x0 = -half_width
    x1 = -half_width + dx * np.arange(n)
    lam1 = 2 * math.pi * np.fft.fftfreq(n, dx)
    fw = _separable_factors(w, x1, lam1) if d > 1 else None
    fv = _separable_factors(v, x1, lam1) if d > 1 else None

    if fw is not None and fv is not None:
        w_vals = _outer([fw[0]] * d)
        v_vals = _outer([fv[0]] * d)
        w_ft = _outer([fw[2]] * d)
        grads = np.stack([_outer([fw[1] if b == a else fw[0] for b in range(d)]) for a in range(d)], axis=-1)
    else:
        w_vals = w.value(xs)
        v_vals = v.value(xs)
        w_ft = w.fourier(lams)
        grads = w.gradient(xs)
    phase = _outer([np.exp(1j * lam1 * x0)] * d)
    w_hat = _dft(w_vals, lams, x0, dx, d, phase)
    v_hat = _dft(v_vals, lams, x0, dx, d, phase)

    space_energy = np.sum(np.abs(w_vals) ** 2) * dx**d
    freq_energy = np.sum(np.abs(w_hat) ** 2) * dlam**d
    closed_norm = float(v.value(np.zeros(d)))

    conv = np.max(np.abs(v_hat - (2 * math.pi) ** (d / 2) * w_hat**2))
    deriv = 0.0
    for a in range(d):
        g_hat = _dft(grads[..., a], lams, x0, dx, d, phase)
        deriv = max(deriv, float(np.max(np.abs(g_hat - (-1j * lams[..., a]) * w_hat))))

    r = np.sqrt(_sq_norm(xs))
    lam_r = np.sqrt(_sq_norm(lams))
    space_tail = float(np.sum(np.abs(w_vals[r > 0.9 * half_width]) ** 2) * dx**d / space_energy)
    lam_max = math.pi / dx
    freq_tail = float(np.sum(np.abs(w_hat[lam_r > 0.9 * lam_max]) ** 2) * dlam**d / freq_energy)
    if space_tail > 0.01 or freq_tail > 0.01:
        warnings.warn(
            f"Fourier grid too coarse or too small: tail energy {max(space_tail, freq_tail):.3g}",
            AliasingWarning,
            stacklevel=2,
        )
    return {
        "n": n,
        "half_width": half_width,
        "plancherel": float(abs(space_energy - freq_energy)),
        "plancherel_closed_form": float(abs(freq_energy - closed_norm)),
        "transform": float(np.max(np.abs(w_hat - w_ft))),
        "convolution": float(conv),
        "derivative": float(deriv),
        "space_tail_energy": space_tail,
        "freq_tail_energy": freq_tail,
    }


def kernel_mass(kernel, panels=64, nodes=8):
    """``int K`` by tensor Gauss-Legendre quadrature over the truncation box."""
    k = evaluator_for(kernel)
    d = k.d
    c = k.cutoff
    t, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(-c, c, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    x1 = (mid[:, None] + half[:, None] * t[None, :]).ravel()
    w1 = (half[:, None] * w[None, :]).ravel()
    if d == 1:
        return float(np.sum(k.value(x1[:, None]) * w1))
    if d != 2:
        raise CapabilityError("kernel_mass implemented for d <= 2")
    pts = np.stack(np.meshgrid(x1, x1, indexing="ij"), axis=-1)
    return float(w1 @ k.value(pts) @ w1)


def kernel_report(spec, beta=0.25, N_list=(16, 256, 4096), n=1024, tol=1e-6, scaling_tol=1e-10):
    """Fourier residuals of ``W_1``, masses of ``V_N`` and the Laplacian scaling at the origin.

    ``lap V_N(0) / N^(beta (d+2)/d)`` must not depend on N; its largest
    relative deviation from the first entry is ``scaling_spread``.
    """
    w1 = mollifier(spec)
    d = w1.d
    checks = fourier_self_check(w1, n=n)
    v1 = self_convolve(w1)
    masses, ratios = {}, {}
    for N in N_list:
        vn = rescale(v1, N, beta, d)
        masses[int(N)] = kernel_mass(vn)
        ratios[int(N)] = float(vn.laplacian(np.zeros(d))) / float(N) ** (beta * (d + 2) / d)
    r0 = ratios[int(N_list[0])]
    spread = max(abs(r / r0 - 1) for r in ratios.values())
    residual_keys = ("plancherel", "plancherel_closed_form", "transform", "convolution", "derivative")
    worst = max(checks[k] for k in residual_keys)
    mass_err = max(abs(m - 1) for m in masses.values())
    return {
        "kernel": {"family": spec.kernel_id, "length_scale": spec.length_scale, "d": spec.d},
        "beta": beta,
        "fourier": checks,
        "max_fourier_residual": worst,
        "masses": masses,
        "max_mass_error": mass_err,
        "laplacian_ratio": ratios,
        "scaling_spread": spread,
        "grad_sq_norm": grad_sq_norm(w1),
        "ok": bool(worst < tol and mass_err < tol and spread < scaling_tol),
    }
