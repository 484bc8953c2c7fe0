"""Scalar kernel functions of the graph representation of fractional curvature.

For a graph ``u: R^d -> R`` in ``R^N`` (``N = d + 1``) and order ``alpha``:

* ``cal_g(p) = -int_{-p}^{p} (1 + t^2)^(-(N+alpha)/2) dt``
* ``p_u(x, y) = (u(y) - u(x)) / |x - y|``
* ``K_u(x, z) = int_0^1 (1 + (tau p_u(x, x-z) - (1-tau) p_u(x, x+z))^2)^(-(N+alpha)/2) dtau``
* ``A_u(x, r, theta) = K_u(x, r theta)``, extended to ``r = 0`` by
  ``(1 + (grad u(x) . theta)^2)^(-(N+alpha)/2)``.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy.special import gamma as _gamma

from . import _backend
from ._pykernels import GL_NODES, GL_WEIGHTS


@dataclass(frozen=True)
class FractionalOrder:
    """Order ``alpha`` in (0, 1) and ambient dimension ``N = d + 1`` with d in {1, 2}."""

    alpha: float
    ambient_dim: int = 2

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.ambient_dim not in (2, 3):
            raise ValueError(f"ambient dimension must be 2 or 3, got {self.ambient_dim}")

    @property
    def d(self):
        return self.ambient_dim - 1

    @property
    def s(self):
        """Kernel exponent (N + alpha) / 2."""
        return 0.5 * (self.ambient_dim + self.alpha)

    @classmethod
    def for_dim(cls, alpha, d):
        return cls(alpha, d + 1)


@dataclass(frozen=True)
class KernelPoint:
    x: tuple
    r: float
    theta: tuple

    def __post_init__(self):
        if self.r < 0:
            raise ValueError("r must be non-negative")
        th = np.asarray(self.theta, dtype=float)
        if abs(np.linalg.norm(th) - 1.0) > 1e-12:
            raise ValueError("theta must be a unit vector")


def sphere_measure(d):
    """Surface measure of S^{d-1}: 2 for d = 1, 2 pi for d = 2."""
    return 2.0 * math.pi ** (d / 2) / _gamma(d / 2)


def _cal_g_abs(a, s):
    # int_0^a (1+t^2)^(-s) dt for a >= 0: [0,1] then dyadic panels
    a = float(a)
    total = 0.0
    lo = 0.0
    hi = min(a, 1.0)
    while lo < a:
        t = lo + (hi - lo) * GL_NODES
        total += (hi - lo) * float(np.dot(GL_WEIGHTS, (1.0 + t * t) ** (-s)))
        lo, hi = hi, min(a, 2.0 * hi)
    return total


def cal_g(p, order):
    """The bounded odd function ``G(p) = -int_{-p}^{p} (1+t^2)^(-s) dt``; accepts arrays."""
    s = order.s
    if np.ndim(p) == 0:
        v = float(p)
        return -2.0 * math.copysign(_cal_g_abs(abs(v), s), v) if v != 0 else 0.0
    arr = np.asarray(p, dtype=float)
    flat = [cal_g(v, order) for v in arr.ravel()]
    return np.array(flat).reshape(arr.shape)


def cal_g_prime(p, order):
    """``G'(p) = -2 (1 + p^2)^(-s)``."""
    return -2.0 * (1.0 + np.square(p)) ** (-order.s)


def cal_g_second(p, order):
    """``G''(p) = 4 s p (1 + p^2)^(-s-1)`` with ``2 s = N + alpha``."""
    s = order.s
    return 4.0 * s * np.asarray(p) * (1.0 + np.square(p)) ** (-s - 1.0)


def g_full_line(order):
    """``int_R (1+t^2)^(-s) dt``; ``|G| <= g_full_line``."""
    s = order.s
    return math.sqrt(math.pi) * _gamma(s - 0.5) / _gamma(s)


def p_quotient(u, x, y):
    """Difference quotient ``(u(y) - u(x)) / |x - y|`` using ``u``'s off-grid evaluation."""
    from .grid import value_at

    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    dist = float(np.linalg.norm(y - x))
    if dist == 0.0:
        raise ValueError("p_quotient needs x != y")
    return (float(np.ravel(value_at(u, y))[0]) - float(np.ravel(value_at(u, x))[0])) / dist


def kernel_K_values(pm, pp, order, backend=None):
    """Vectorised ``K`` from the two difference quotients ``p(x, x-z)`` and ``p(x, x+z)``."""
    pm = np.asarray(pm, dtype=float)
    out = _backend.kernel_K(pm, pp, order.s, backend=backend)
    return out.reshape(pm.shape)


def kernel_K(u, x, z, order):
    """``K_u(x, z)`` for a grid function ``u``; rejects ``z = 0``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if not np.any(z):
        raise ValueError("kernel_K needs z != 0")
    pm = p_quotient(u, x, x - z)
    pp = p_quotient(u, x, x + z)
    return float(kernel_K_values(np.array([pm]), np.array([pp]), order)[0])


def extension_A(u, kp, order):
    """``A_u(x, r, theta)``: ``K_u(x, r theta)`` for ``r > 0``, gradient formula at ``r = 0``."""
    x = np.atleast_1d(np.asarray(kp.x, dtype=float))
    theta = np.atleast_1d(np.asarray(kp.theta, dtype=float))
    if kp.r > 0:
        return kernel_K(u, x, kp.r * theta, order)
    from .grid import gradient_at

    slope = float(np.dot(gradient_at(u, x), theta))
    return (1.0 + slope * slope) ** (-order.s)


def tail_bound(order, R, sup_u_or_grad, mode="grad-bound"):
    """Bound on ``|int_{|z|>R} delta_e u K |z|^{-N-alpha} dz|``.

    ``sup-bound`` uses ``|delta_e u| <= 4 ||u||_inf``, ``grad-bound`` uses
    ``|delta_e u| <= 2 ||grad u||_inf r``; ``K <= 1`` in both.
    """
    if R <= 0:
        raise ValueError("R must be positive")
    a = order.alpha
    sigma = sphere_measure(order.d)
    if mode == "sup-bound":
        return 4.0 * sup_u_or_grad * sigma * R ** (-1.0 - a) / (1.0 + a)
    if mode == "grad-bound":
        return 2.0 * sup_u_or_grad * sigma * R ** (-a) / a
    if mode == "none":
        return 0.0
    raise ValueError(f"unknown tail mode {mode!r}")
