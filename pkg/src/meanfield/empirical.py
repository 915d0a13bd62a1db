"""Functionals of the empirical measure ``X_N = (1/N) sum_k delta_{X^k}``."""

import itertools
import math

import numpy as np
from scipy import optimize, signal, stats

from .errors import CoverageError, MassMismatchError
from .forces import brute_scalar, cell_list_scalar
from .grid import DensityGrid
from .kernels import GaussianKernel, as_points

__all__ = [
    "DensityGrid",
    "Phi",
    "PHI",
    "mollified_field",
    "hN_l2_sq",
    "grad_hN_l2_sq_pairs",
    "pairing",
    "moment_phi",
    "bl_distance",
    "mollifier_defect",
    "mollifier_ratio",
    "gaussian_ratio_closed_form",
]


def _positions(mu):
    x = getattr(mu, "positions", mu)
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


# ---------------------------------------------------------------------------
# The moment test function


class Phi:
    """Radial C^2 function equal to ``|x|`` for ``|x| >= 1``.

    Inside the unit ball it is the even quartic
    ``3/8 + 3 r^2 / 4 - r^4 / 8``, the unique even polynomial of degree at
    most five that matches ``|x|`` in value, slope and curvature at ``r = 1``.
    Bounds: ``phi(0) = 3/8``, ``||grad phi||_inf = 1``,
    ``||lap phi||_inf = 3 d / 2`` (attained at the origin).
    """

    value_at_origin = 3.0 / 8.0
    grad_sup = 1.0

    def __init__(self, d=1):
        self.d = int(d)

    @property
    def lap_sup(self):
        return 1.5 * self.d

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        x = as_points(x, self.d)
        r2 = np.einsum("...i,...i->...", x, x)
        r = np.sqrt(r2)
        inner = 0.375 + 0.75 * r2 - 0.125 * r2 * r2
        return np.where(r < 1, inner, r)

    def gradient(self, x):
        x = as_points(x, self.d)
        r2 = np.einsum("...i,...i->...", x, x)
        r = np.sqrt(r2)
        # phi'(r)/r inside, 1/r outside
        coef = np.where(r < 1, 1.5 - 0.5 * r2, 1.0 / np.where(r < 1, 1.0, r))
        return x * coef[..., None]

    def laplacian(self, x):
        x = as_points(x, self.d)
        r2 = np.einsum("...i,...i->...", x, x)
        r = np.sqrt(r2)
        d = self.d
        inner = 1.5 - 1.5 * r2 + (d - 1) * (1.5 - 0.5 * r2)
        outer = (d - 1) / np.where(r < 1, 1.0, r)
        return np.where(r < 1, inner, outer)

    def constants(self):
        return {"phi0": self.value_at_origin, "grad_sup": self.grad_sup, "lap_sup": self.lap_sup}


PHI = Phi(1)


def moment_phi(ensemble):
    """``<X_N, phi>``."""
    x = _positions(ensemble)
    return float(np.mean(Phi(x.shape[1]).value(x)))


# ---------------------------------------------------------------------------
# Pairings


def pairing(mu, f):
    """``<mu, f>`` for an ensemble (mean over particles) or a grid (quadrature)."""
    fv = getattr(f, "value", f)
    if isinstance(mu, DensityGrid):
        return float(np.sum(fv(mu.centers()) * mu.values) * mu.cell_volume)
    x = _positions(mu)
    return float(np.mean(fv(x)))


# ---------------------------------------------------------------------------
# Mollified fields


def _check_coverage(x, grid, margin):
    lo = grid.low + margin
    hi = grid.high - margin
    out = (x < lo) | (x > hi)
    if out.any():
        k = int(np.nonzero(out.any(axis=1))[0][0])
        raise CoverageError(
            f"particle {k} at {x[k]} lies within the kernel margin {margin:.3g} of the grid "
            f"boundary [{grid.low}, {grid.high}]; enlarge the grid"
        )


def _direct(x, kernel, grid, order):
    n, d = x.shape
    h = np.asarray(grid.cell_size)
    cells = np.asarray(grid.cells)
    half = np.ceil(kernel.cutoff / h).astype(int) + 1
    width = 2 * half + 1
    out_shape = tuple(cells) + ((d,) if order == "gradient" else ())
    out = np.zeros(out_shape)
    # index of the cell containing each particle
    base = np.floor((x - grid.low) / h).astype(int) - half
    offs = np.stack(np.meshgrid(*[np.arange(w) for w in width], indexing="ij"), axis=-1).reshape(-1, d)
    chunk = max(1, 2_000_000 // offs.shape[0])
    size = int(np.prod(cells))
    acc = np.zeros((size, d) if order == "gradient" else size)
    for s in range(0, n, chunk):
        idx = base[s:s + chunk, None, :] + offs[None, :, :]
        ok = np.all((idx >= 0) & (idx < cells), axis=-1)
        centers = grid.low + (idx + 0.5) * h
        diff = centers - x[s:s + chunk, None, :]
        vals = kernel(diff, order)
        flat = np.ravel_multi_index(tuple(np.where(ok, idx[..., a], 0) for a in range(d)), tuple(cells))
        flat = flat[ok]
        if order == "gradient":
            v = vals[ok]
            for a in range(d):
                acc[:, a] += np.bincount(flat, weights=v[:, a], minlength=size)
        else:
            acc += np.bincount(flat, weights=vals[ok], minlength=size)
    return (acc / n).reshape(out_shape)


def _binned(x, kernel, grid, order):
    n, d = x.shape
    h = np.asarray(grid.cell_size)
    cells = tuple(grid.cells)
    # linear deposit onto cell centres
    u = (x - grid.low) / h - 0.5
    i0 = np.floor(u).astype(int)
    f = u - i0
    mass = np.zeros(cells)
    for c in itertools.product((0, 1), repeat=d):
        w = np.ones(n) / n
        for a in range(d):
            w = w * (f[:, a] if c[a] else 1 - f[:, a])
        idx = tuple(np.clip(i0[:, a] + c[a], 0, cells[a] - 1) for a in range(d))
        np.add.at(mass, idx, w)
    m = np.ceil(kernel.cutoff / h).astype(int) + 1
    axes = [h[a] * np.arange(-m[a], m[a] + 1) for a in range(d)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    stencil = kernel(pts, order)
    sl = tuple(slice(m[a], m[a] + cells[a]) for a in range(d))
    if order == "gradient":
        return np.stack(
            [signal.fftconvolve(mass, stencil[..., a], mode="full")[sl] for a in range(d)], axis=-1
        )
    return signal.fftconvolve(mass, stencil, mode="full")[sl]


def mollified_field(ensemble, kernel, grid, order="value", method="auto", check_coverage=True):
    """``(K * X_N)(x) = (1/N) sum_k K(x - X^k)`` at the cell centres of ``grid``.

    Parameters
    ----------
    kernel : Evaluator
        ``W_N`` (gives ``h_N``) or ``V_N`` (gives ``g_N``).
    order : {"value", "gradient"}
    method : {"auto", "direct", "binning"}
        ``direct`` sums the kernel over the cells within its support;
        ``binning`` deposits particles linearly onto the grid and convolves
        with the sampled kernel.  The two agree to round-off for particles
        sitting on cell centres and to O(cell^2) otherwise.  ``auto`` picks
        direct summation below 1e7 kernel evaluations.

    Returns
    -------
    DensityGrid for ``order="value"``, else an array of shape
    ``grid.cells + (d,)``.
    """
    x = _positions(ensemble)
    if x.shape[1] != grid.d:
        raise ValueError("ensemble and grid dimensions differ")
    margin = kernel.cutoff
    if check_coverage:
        _check_coverage(x, grid, margin)
    if method == "auto":
        support = np.prod(2 * np.ceil(kernel.cutoff / np.asarray(grid.cell_size)) + 3)
        method = "direct" if x.shape[0] * support < 1e7 else "binning"
    if method == "direct":
        vals = _direct(x, kernel, grid, order)
    elif method == "binning":
        vals = _binned(x, kernel, grid, order)
    else:
        raise ValueError(f"unknown method {method!r}")
    if order == "value":
        return grid.with_values(vals)
    return vals


def hN_l2_sq(ensemble, v_n, mode="auto"):
    """``||h_N||_2^2 = (1/N^2) sum_{k,l} V_N(X^k - X^l)`` as an exact pair sum."""
    x = _positions(ensemble)
    if mode == "auto":
        mode = "brute" if x.shape[0] <= 2000 or not v_n.compact else "cell_list"
    per = brute_scalar(x, v_n) if mode == "brute" else cell_list_scalar(x, v_n)
    return float(np.mean(per))


def grad_hN_l2_sq_pairs(ensemble, v_n, mode="auto"):
    """``||grad h_N||_2^2 = -(1/N^2) sum_{k,l} lap V_N(X^k - X^l)``."""
    x = _positions(ensemble)
    if mode == "auto":
        mode = "brute" if x.shape[0] <= 2000 or not v_n.compact else "cell_list"
    if mode == "brute":
        per = brute_scalar(x, v_n, order="laplacian")
    else:
        per = cell_list_scalar(x, v_n, order="laplacian")
    return float(-np.mean(per))


# ---------------------------------------------------------------------------
# Bounded-Lipschitz distance


def _as_weighted(mu):
    if isinstance(mu, DensityGrid):
        pts = mu.centers().reshape(-1, mu.d)
        w = (mu.values * mu.cell_volume).ravel()
        keep = w != 0
        return pts[keep], w[keep]
    x = _positions(mu)
    return x, np.full(x.shape[0], 1.0 / x.shape[0])


def _w1_1d(xa, wa, xb, wb):
    return float(stats.wasserstein_distance(xa[:, 0], xb[:, 0], wa, wb))


def _w1_lp(xa, wa, xb, wb):
    """Exact transport cost by linear programming (HiGHS)."""
    n, m = len(wa), len(wb)
    cost = np.sqrt(((xa[:, None, :] - xb[None, :, :]) ** 2).sum(-1)).ravel()
    from scipy.sparse import coo_matrix, vstack

    rows = np.repeat(np.arange(n), m)
    cols = np.arange(n * m)
    a_rows = coo_matrix((np.ones(n * m), (rows, cols)), shape=(n, n * m))
    b_rows = coo_matrix((np.ones(n * m), (np.tile(np.arange(m), n), cols)), shape=(m, n * m))
    A = vstack([a_rows, b_rows]).tocsr()
    b = np.concatenate([wa, wb * (wa.sum() / wb.sum())])
    res = optimize.linprog(cost, A_eq=A[:-1], b_eq=b[:-1], bounds=(0, None), method="highs")
    if not res.success:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(res.fun)


def _coarsen(x, w, lo, h, k):
    idx = np.clip(np.floor((x - lo) / h).astype(int), 0, k - 1)
    centers = lo + (idx + 0.5) * h
    disp = float(np.sum(w * np.sqrt(((x - centers) ** 2).sum(-1))))
    flat = np.ravel_multi_index(tuple(idx.T), (k,) * x.shape[1])
    mass = np.bincount(flat, weights=w, minlength=k ** x.shape[1])
    keep = mass > 0
    pts = np.stack(np.unravel_index(np.nonzero(keep)[0], (k,) * x.shape[1]), axis=-1)
    return lo + (pts + 0.5) * h, mass[keep], disp


def _w1_upper(xa, wa, xb, wb, max_lp=250_000, coarse=24):
    d = xa.shape[1]
    if d == 1:
        return _w1_1d(xa, wa, xb, wb)
    if len(wa) * len(wb) <= max_lp:
        return _w1_lp(xa, wa, xb, wb)
    lo = np.minimum(xa.min(0), xb.min(0))
    hi = np.maximum(xa.max(0), xb.max(0))
    h = (hi - lo) / coarse + 1e-12
    ca, ma, da = _coarsen(xa, wa, lo, h, coarse)
    cb, mb, db = _coarsen(xb, wb, lo, h, coarse)
    return _w1_lp(ca, ma, cb, mb) + da + db


def _lip1_candidates(xa, wa, xb, wb, n_ridges=64, seed=0):
    """Values of bounded 1-Lipschitz functions on both supports.

    Yields ``(fa, fb)`` arrays; each function satisfies ``|f| <= 1`` and
    ``Lip(f) <= 1`` globally.
    """
    d = xa.shape[1]
    allx = np.vstack([xa, xb])
    lo, hi = allx.min(0), allx.max(0)
    span = float(np.max(hi - lo)) + 1e-12
    # a lattice of hat centres plus the heaviest support points
    per_axis = 9 if d == 1 else 5
    axes = [np.linspace(lo[a], hi[a], per_axis) for a in range(d)]
    centers = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    heavy = np.vstack([xa[np.argsort(-wa, kind="stable")[:16]], xb[np.argsort(-wb, kind="stable")[:16]]])
    centers = np.vstack([centers, heavy])
    for r in (0.25, 0.5, 1.0, 2.0):
        for c in centers:
            yield (np.clip(r - np.sqrt(((xa - c) ** 2).sum(-1)), -1, 1),
                   np.clip(r - np.sqrt(((xb - c) ** 2).sum(-1)), -1, 1))
    gen = np.random.default_rng(seed)
    for _ in range(n_ridges):
        theta = gen.standard_normal(d)
        theta /= np.linalg.norm(theta)
        pa, pb = xa @ theta, xb @ theta
        b = gen.uniform(min(pa.min(), pb.min()) - 1, max(pa.max(), pb.max()) + 1)
        yield np.clip(pa - b, -1, 1), np.clip(pb - b, -1, 1)
    if d == 1:
        # Kantorovich potential of W1 on the line, g' = sign(F_a - F_b),
        # recentred and clipped into [-1, 1].
        pts = np.unique(np.concatenate([xa[:, 0], xb[:, 0]]))
        Fa = np.cumsum(np.bincount(np.searchsorted(pts, xa[:, 0]), weights=wa, minlength=pts.size))
        Fb = np.cumsum(np.bincount(np.searchsorted(pts, xb[:, 0]), weights=wb, minlength=pts.size))
        slope = np.sign(Fb - Fa)[:-1]
        g = np.concatenate([[0.0], np.cumsum(slope * np.diff(pts))])
        ga = g[np.searchsorted(pts, xa[:, 0])]
        gb = g[np.searchsorted(pts, xb[:, 0])]
        for shift in np.linspace(g.min(), g.max(), 41):
            yield np.clip(ga - shift, -1, 1), np.clip(gb - shift, -1, 1)


def bl_distance(mu, nu, n_ridges=64, seed=0, mass_tol=1e-6):
    """Certified interval ``(lower, upper)`` for the bounded-Lipschitz distance.

    ``lower`` is the best pairing gap over a finite family of functions with
    ``|f| <= 1`` and ``Lip(f) <= 1`` (hats, random ridges and, in 1D, the
    clipped Kantorovich potential).  ``upper`` is ``min(W1(mu, nu), 2)``
    with W1 exact in 1D and an LP (optionally on a coarsened support plus
    the exact displacement cost of the coarsening) in 2D.

    Raises
    ------
    MassMismatchError
        When either measure is off unit mass by more than ``mass_tol``.
    """
    xa, wa = _as_weighted(mu)
    xb, wb = _as_weighted(nu)
    if xa.shape[1] != xb.shape[1]:
        raise ValueError("measures live in different dimensions")
    ma, mb = wa.sum(), wb.sum()
    if abs(ma - 1) > mass_tol or abs(mb - 1) > mass_tol or abs(ma - mb) > mass_tol:
        raise MassMismatchError(f"masses {ma:.12g} and {mb:.12g} differ from 1 by more than {mass_tol}")
    wa, wb = wa / ma, wb / mb
    upper = min(_w1_upper(xa, wa, xb, wb), 2.0)
    lower = 0.0
    for fa, fb in _lip1_candidates(xa, wa, xb, wb, n_ridges, seed):
        lower = max(lower, abs(float(fa @ wa - fb @ wb)))
    # round-off may push the two bounds past one another for identical inputs
    lower = min(lower, upper) if lower - upper < 1e-9 else lower
    return lower, upper


# ---------------------------------------------------------------------------
# Mollifier defect


def mollifier_defect(f, kernel, n=4096, half_width=None):
    """``(||f - f*K||_2^2, ||grad f||_2^2)`` for a 1D test function via FFT.

    The convolution is evaluated in Fourier space with the kernel's closed
    form transform, which removes kernel-sampling error.
    """
    if kernel.d != 1:
        raise ValueError("mollifier_defect is implemented for d = 1")
    if half_width is None:
        half_width = 12.0 * max(getattr(f, "width", 1.0), 1.0) + 2 * kernel.cutoff
    dx = 2 * half_width / n
    x = -half_width + dx * np.arange(n)
    fx = f.value(x[:, None])
    lam = 2 * math.pi * np.fft.fftfreq(n, dx)
    fh = np.fft.fft(fx)
    kh = math.sqrt(2 * math.pi) * kernel.fourier(lam[:, None])
    conv = np.real(np.fft.ifft(fh * kh))
    defect = float(np.sum((fx - conv) ** 2) * dx)
    grad = f.gradient(x[:, None])[:, 0]
    return defect, float(np.sum(grad**2) * dx)


def mollifier_ratio(f, kernel_spec_or_w1, N, beta):
    """``chi_N^2 ||f - f*W_N||^2 / ||grad f||^2``."""
    from .kernels import mollifier, rescale, KernelSpec

    w1 = mollifier(kernel_spec_or_w1) if isinstance(kernel_spec_or_w1, KernelSpec) else kernel_spec_or_w1
    wn = rescale(w1, N, beta)
    defect, grad = mollifier_defect(f, wn)
    return wn.chi**2 * defect / grad


def gaussian_ratio_closed_form(width, scale, chi):
    """Closed form of :func:`mollifier_ratio` for a Gaussian bump and kernel (1D)."""
    u = scale / (chi * width)
    return scale**2 * 2 * (1 - 2 / math.sqrt(1 + u * u / 2) + 1 / math.sqrt(1 + u * u)) / u**2
