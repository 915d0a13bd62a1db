"""Smooth test functions with closed-form gradients and Laplacians."""

from dataclasses import dataclass
import math

import numpy as np

from .kernels import as_points


class TestFunction:
    """Interface: ``value``, ``gradient``, ``laplacian`` and ``grad_sup``."""

    __test__ = False  # not a pytest class
    name = "f"
    d = 1

    def __call__(self, x):
        return self.value(x)

    def value(self, x):
        raise NotImplementedError

    def gradient(self, x):
        raise NotImplementedError

    def laplacian(self, x):
        raise NotImplementedError

    @property
    def grad_sup(self):
        raise NotImplementedError


class Constant(TestFunction):
    name = "one"

    def __init__(self, d=1, c=1.0):
        self.d, self.c = d, float(c)

    def value(self, x):
        x = as_points(x, self.d)
        return np.full(x.shape[:-1], self.c)

    def gradient(self, x):
        return np.zeros_like(as_points(x, self.d))

    def laplacian(self, x):
        return np.zeros(as_points(x, self.d).shape[:-1])

    @property
    def grad_sup(self):
        return 0.0


@dataclass(frozen=True)
class Bump(TestFunction):
    """``exp(-|x - center|^2 / (2 width^2))``."""

    d: int = 1
    width: float = 1.0
    center: float = 0.0
    name = "bump"

    def value(self, x):
        x = as_points(x, self.d) - self.center
        return np.exp(-0.5 * np.einsum("...i,...i->...", x, x) / self.width**2)

    def gradient(self, x):
        y = as_points(x, self.d) - self.center
        return -(y / self.width**2) * self.value(x)[..., None]

    def laplacian(self, x):
        y = as_points(x, self.d) - self.center
        r2 = np.einsum("...i,...i->...", y, y)
        w2 = self.width**2
        return (r2 / w2**2 - self.d / w2) * self.value(x)

    @property
    def grad_sup(self):
        return math.exp(-0.5) / self.width


@dataclass(frozen=True)
class Sine(TestFunction):
    """``sin(k x_1 + phase)``."""

    d: int = 1
    k: float = 1.0
    phase: float = 0.0
    name = "sine"

    def value(self, x):
        x = as_points(x, self.d)
        return np.sin(self.k * x[..., 0] + self.phase)

    def gradient(self, x):
        x = as_points(x, self.d)
        g = np.zeros_like(x)
        g[..., 0] = self.k * np.cos(self.k * x[..., 0] + self.phase)
        return g

    def laplacian(self, x):
        return -self.k**2 * self.value(x)

    @property
    def grad_sup(self):
        return abs(self.k)


@dataclass(frozen=True)
class Tanh(TestFunction):
    """``tanh(x_1 / width)``."""

    d: int = 1
    width: float = 1.0
    name = "tanh"

    def value(self, x):
        x = as_points(x, self.d)
        return np.tanh(x[..., 0] / self.width)

    def gradient(self, x):
        x = as_points(x, self.d)
        g = np.zeros_like(x)
        g[..., 0] = 1.0 / (self.width * np.cosh(x[..., 0] / self.width) ** 2)
        return g

    def laplacian(self, x):
        x = as_points(x, self.d)
        t = np.tanh(x[..., 0] / self.width)
        return -2.0 * t * (1 - t * t) / self.width**2

    @property
    def grad_sup(self):
        return 1.0 / self.width


def _smoothstep5(u):
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10 - 15 * u + 6 * u * u)


def _smoothstep5_prime(u):
    inside = (u > 0) & (u < 1)
    return np.where(inside, 30 * u * u * (1 - u) ** 2, 0.0)


def _smoothstep5_integral(u):
    u = np.clip(u, 0.0, 1.0)
    return u**4 * (2.5 - 3 * u + u * u)


@dataclass(frozen=True)
class ClipIdentity(TestFunction):
    """``x_1`` on ``|x_1| <= a``, saturating C^2-smoothly over ``[a, a + b]``.

    The slope drops from 1 to 0 through a quintic smoothstep, so the
    function is odd, bounded by ``a + b/2`` and has ``||grad f||_inf = 1``.
    """

    d: int = 1
    a: float = 10.0
    b: float = 2.0
    name = "clip_identity"

    def value(self, x):
        x = as_points(x, self.d)
        y = x[..., 0]
        r = np.abs(y)
        u = (r - self.a) / self.b
        far = np.where(r > self.a, self.a + (r - self.a) - self.b * _smoothstep5_integral(u), r)
        return np.sign(y) * far

    def gradient(self, x):
        x = as_points(x, self.d)
        g = np.zeros_like(x)
        u = (np.abs(x[..., 0]) - self.a) / self.b
        g[..., 0] = 1.0 - _smoothstep5(u)
        return g

    def laplacian(self, x):
        x = as_points(x, self.d)
        y = x[..., 0]
        u = (np.abs(y) - self.a) / self.b
        return -np.sign(y) * _smoothstep5_prime(u) / self.b

    @property
    def grad_sup(self):
        return 1.0


REGISTRY = {
    "one": Constant,
    "bump": Bump,
    "sine": Sine,
    "tanh": Tanh,
    "clip_identity": ClipIdentity,
}


def make(name, d=1, **params):
    """Build a registered test function by name."""
    try:
        cls = REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown test function {name!r}; known: {sorted(REGISTRY)}") from None
    return cls(d=d, **params)
