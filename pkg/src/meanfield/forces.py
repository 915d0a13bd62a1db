"""Empirical convolution fields ``(1/N) sum_i grad K(X^k - X^i)``.

Three evaluation paths:

``brute``
    Exact O(N^2) pair sum, processed in row chunks.
``cell_list``
    Exact for compactly supported kernels (and up to the documented tail
    truncation for Gaussians): particles are binned into cells of the kernel
    cutoff radius and only neighbouring cells interact.  Pair lists are built
    with vectorised numpy and accumulated with ``bincount`` in a fixed order.
``mesh``
    Particle-mesh approximation: linear (cloud-in-cell) deposit onto a grid,
    discrete convolution with the sampled gradient stencil, and linear
    interpolation back to the particles.  The same weights are used for
    deposit and interpolation, so the self-force is exactly zero and
    Newton's third law holds for the total.  Error is O(h^2) in the mesh
    spacing ``h`` relative to the kernel scale.
"""

import itertools
import math

import numpy as np
from scipy import signal

from .kernels import ZeroKernel

FORCE_MODES = ("brute", "cell_list", "mesh")
_PAIR_CHUNK = 2_000_000


def _empty(x):
    return np.zeros_like(x)


def brute_field(x, kernel, weights=None):
    """Exact ``sum_i w_i grad K(x_k - x_i)`` with ``w_i = 1/N`` by default."""
    n, d = x.shape
    if isinstance(kernel, ZeroKernel) or n == 0:
        return _empty(x)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    out = np.empty_like(x)
    rows = max(1, _PAIR_CHUNK // max(n * d, 1))
    for s in range(0, n, rows):
        diff = x[s:s + rows, None, :] - x[None, :, :]
        g = kernel.gradient(diff)
        out[s:s + rows] = np.einsum("kid,i->kd", g, w)
    return out


def brute_scalar(x, kernel, weights=None, order="value", pairs_of=None):
    """Exact ``sum_i w_i K(x_k - x_i)`` (or the Laplacian) at every ``x_k``."""
    n, d = x.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    out = np.empty(n)
    rows = max(1, _PAIR_CHUNK // max(n * d, 1))
    for s in range(0, n, rows):
        diff = x[s:s + rows, None, :] - x[None, :, :]
        out[s:s + rows] = kernel(diff, order) @ w
    return out


def _cell_pairs(x, radius):
    """Yield chunks ``(k, j)`` of index pairs in neighbouring cells of size ``radius``.

    Every pair with ``max_a |x_k - x_j|_a < radius`` appears exactly once as
    an ordered pair (both orders appear, and ``k == j`` is included).
    """
    n, d = x.shape
    lo = x.min(axis=0)
    cell = np.floor((x - lo) / radius).astype(np.int64)
    dims = cell.max(axis=0) + 3
    # pad by one so that neighbour offsets stay non-negative
    cell += 1
    strides = np.cumprod(np.concatenate(([1], dims[:-1])))
    key = cell @ strides
    order = np.argsort(key, kind="stable")
    skey = key[order]
    uniq, start, count = np.unique(skey, return_index=True, return_counts=True)
    for off in itertools.product((-1, 0, 1), repeat=d):
        nkey = key + np.asarray(off, dtype=np.int64) @ strides
        pos = np.searchsorted(uniq, nkey)
        pos = np.minimum(pos, len(uniq) - 1)
        hit = uniq[pos] == nkey
        ks = np.nonzero(hit)[0]
        if ks.size == 0:
            continue
        st = start[pos[ks]]
        ct = count[pos[ks]]
        # split the particle list so each chunk produces at most _PAIR_CHUNK pairs
        csum = np.cumsum(ct)
        bounds = [0]
        while bounds[-1] < ks.size:
            base = csum[bounds[-1] - 1] if bounds[-1] > 0 else 0
            nxt = int(np.searchsorted(csum, base + _PAIR_CHUNK, side="right"))
            bounds.append(max(nxt, bounds[-1] + 1))
        for b0, b1 in zip(bounds[:-1], bounds[1:]):
            kk, ss, cc = ks[b0:b1], st[b0:b1], ct[b0:b1]
            total = int(cc.sum())
            rep_k = np.repeat(kk, cc)
            first = np.repeat(np.cumsum(cc) - cc, cc)
            within = np.arange(total) - first
            j = order[np.repeat(ss, cc) + within]
            yield rep_k, j


def cell_list_field(x, kernel, weights=None):
    """Neighbour-cell pair sum; identical to :func:`brute_field` up to round-off
    for compact kernels and to the tail truncation for Gaussians."""
    n, d = x.shape
    if isinstance(kernel, ZeroKernel) or n == 0:
        return _empty(x)
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    radius = kernel.cutoff
    out = np.zeros_like(x)
    for k, j in _cell_pairs(x, radius):
        diff = x[k] - x[j]
        g = kernel.gradient(diff)
        if not kernel.compact:
            mask = np.einsum("pi,pi->p", diff, diff) < radius * radius
            g = g * mask[:, None]
        wg = g * w[j][:, None]
        for a in range(d):
            out[:, a] += np.bincount(k, weights=wg[:, a], minlength=n)
    return out


def cell_list_scalar(x, kernel, weights=None, order="value"):
    n, d = x.shape
    w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
    radius = kernel.cutoff
    out = np.zeros(n)
    for k, j in _cell_pairs(x, radius):
        diff = x[k] - x[j]
        v = kernel(diff, order)
        if not kernel.compact:
            v = v * (np.einsum("pi,pi->p", diff, diff) < radius * radius)
        out += np.bincount(k, weights=v * w[j], minlength=n)
    return out


# ---------------------------------------------------------------------------
# Particle-mesh


def kernel_length(kernel):
    """Characteristic length (per-axis standard deviation) of a kernel."""
    return math.sqrt(kernel.second_moment())


def _cic(x, lo, h):
    """Lower node indices and fractional offsets for nodes at ``lo + i h``."""
    u = (x - lo) / h
    i0 = np.floor(u).astype(np.int64)
    return i0, u - i0


class MeshField:
    """Reusable particle-mesh evaluator for one kernel.

    Parameters
    ----------
    kernel : Evaluator
        Gradient is sampled on the mesh stencil out to ``kernel.cutoff``.
    spacing : float, optional
        Mesh spacing; defaults to ``kernel_length / points_per_length``.
    """

    def __init__(self, kernel, spacing=None, points_per_length=16):
        self.kernel = kernel
        self.d = kernel.d
        if spacing is None:
            spacing = kernel_length(kernel) / points_per_length
        self.h = float(spacing)
        m = int(math.ceil(kernel.cutoff / self.h))
        self.m = m
        offs = self.h * np.arange(-m, m + 1)
        if self.d == 1:
            pts = offs[:, None]
        else:
            pts = np.stack(np.meshgrid(*([offs] * self.d), indexing="ij"), axis=-1)
        self.stencil = kernel.gradient(pts)
        if not kernel.compact:
            r2 = np.einsum("...i,...i->...", pts, pts)
            self.stencil = self.stencil * (r2 < kernel.cutoff**2)[..., None]

    def __call__(self, x, weights=None):
        n, d = x.shape
        if n == 0:
            return _empty(x)
        w = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        h = self.h
        lo = np.floor(x.min(axis=0) / h) * h - h
        shape = np.floor((x.max(axis=0) - lo) / h).astype(np.int64) + 3
        i0, f = _cic(x, lo, h)
        shape = tuple(int(v) for v in shape)
        size = int(np.prod(shape))
        corners = list(itertools.product((0, 1), repeat=d))
        flat_idx, pure = [], []
        rho = np.zeros(size)
        for c in corners:
            pw = np.ones(n)
            for a in range(d):
                pw = pw * (f[:, a] if c[a] else 1.0 - f[:, a])
            fi = np.ravel_multi_index(tuple(i0[:, a] + c[a] for a in range(d)), shape)
            flat_idx.append(fi)
            pure.append(pw)
            rho += np.bincount(fi, weights=w * pw, minlength=size)
        rho = rho.reshape(shape)
        out = np.zeros_like(x)
        sl = tuple(slice(self.m, self.m + s) for s in shape)
        # fixed rule rather than scipy's timing heuristic, so the method only depends on sizes
        method = "fft" if size * self.stencil[..., 0].size > 4e6 else "direct"
        for a in range(d):
            # full convolution; node i of the mesh sits at index i + m
            field = signal.convolve(rho, self.stencil[..., a], mode="full", method=method)[sl].ravel()
            acc = np.zeros(n)
            for fi, pw in zip(flat_idx, pure):
                acc += field[fi] * pw
            out[:, a] = acc
        return out


def interaction_field(x, kernel, mode="brute", weights=None, mesh=None):
    """Dispatch ``(1/N) sum_i grad K(x_k - x_i)`` to the requested path."""
    if isinstance(kernel, ZeroKernel):
        return _empty(x)
    if mode == "brute":
        return brute_field(x, kernel, weights)
    if mode == "cell_list":
        return cell_list_field(x, kernel, weights)
    if mode == "mesh":
        mesh = mesh or MeshField(kernel)
        return mesh(x, weights)
    raise ValueError(f"unknown force mode {mode!r}; expected one of {FORCE_MODES}")


def pairwise_force(ensemble_or_positions, kernel, mode="brute"):
    """Repulsion field ``-(grad V_N * X_N)`` at every particle.

    Takes a :class:`~meanfield.particles.ParticleEnsemble` or an ``(N, d)``
    array and returns an ``(N, d)`` array.
    """
    x = getattr(ensemble_or_positions, "positions", ensemble_or_positions)
    x = np.asarray(x, dtype=float)
    return -interaction_field(x, kernel, mode)
