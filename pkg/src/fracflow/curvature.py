"""Fractional mean curvature ``H(u)`` and ``Q(u) H(u)`` of a sampled graph.

``H(u)(x) = int_{S^{d-1}} int_0^inf delta_e u(x,r,theta) A_u(x,r,theta) r^{-2-alpha} dr dtheta``
with the unhalved second difference ``delta_e u = 2u(x) - u(x - r theta) - u(x + r theta)``.

Discretisation (per node, identical for every node):

* ``r < r_inner h``: Taylor form ``-r^2 theta^T D^2u theta A_u(x,0,theta)``, integrated exactly;
* ``r_inner h <= r <= r_model``: log-spaced Gauss-Legendre panels (node spacing capped
  at ``max_spacing h``), off-grid values by shifted interpolation;
* ``r_model < r <= r_outer``: same panels, ``u`` replaced by its far-field model;
* ``r > r_outer``: closed-form tail of the far-field model (unless ``tail_mode == "none"``).
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
import math
import os

import numpy as np

from . import _backend
from .grid import ShiftSampler, gradient, hessian, lip_norm, sup_norm
from .kernels import kernel_K_values, tail_bound

BLOCK = 32


class NearFieldError(ValueError):
    """Second differences blow up under refinement: ``u`` is below ``C^{1+alpha}``."""


@dataclass(frozen=True)
class QuadratureSpec:
    r_inner: float = 2.0
    r_outer: float = None
    n_radial: int = 16
    n_angular: int = 32
    tail_mode: str = "grad-bound"
    interp: int = 3
    max_spacing: float = 8.0
    periodic_far: float = 16.0
    check_regularity: bool = True

    def __post_init__(self):
        if self.r_inner <= 0:
            raise ValueError("r_inner must be positive")
        if self.r_outer is not None and self.r_outer <= 0:
            raise ValueError("r_outer must be positive")
        if self.n_radial < 4:
            raise ValueError("n_radial must be >= 4")
        if self.n_angular < 8 or self.n_angular % 2:
            raise ValueError("n_angular must be an even number >= 8")
        if self.tail_mode not in ("sup-bound", "grad-bound", "none"):
            raise ValueError(f"unknown tail mode {self.tail_mode!r}")
        if self.interp not in (1, 3):
            raise ValueError("interp must be 1 or 3")
        if self.max_spacing < 0:
            raise ValueError("max_spacing must be >= 0")

    def replace(self, **kw):
        vals = {k: getattr(self, k) for k in self.__dataclass_fields__}
        vals.update(kw)
        return QuadratureSpec(**vals)


@dataclass
class CurvatureField:
    values: np.ndarray
    grid: object
    tail_estimate: float
    spec: QuadratureSpec
    weighted: bool = False
    meta: dict = field(default_factory=dict)

    def sup(self):
        return float(np.max(np.abs(self.values)))


@dataclass(frozen=True)
class PolarRule:
    """Radial and angular nodes shared by every grid node."""

    r: np.ndarray
    weight: np.ndarray  # Gauss-Legendre weight times r^(-2-alpha)
    data: np.ndarray  # True where grid data are sampled, False in the far-field model
    theta: np.ndarray  # half-sphere directions, shape (K, d)
    omega: np.ndarray  # angular weights; full sphere = sum_k omega_k [f(theta_k) + f(-theta_k)]
    rho: float
    r_model: float
    r_out: float
    near_factor: float  # int_0^rho r^(-alpha) dr
    tail_factor: float  # int_{r_out}^inf r^(-2-alpha) dr


def _gl(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _panels(a, b, cap):
    """Geometric (decade) breakpoints from a to b, each split so its length is <= cap."""
    out = []
    lo = a
    while lo < b * (1 - 1e-14):
        hi = min(10.0 * lo, b)
        m = 1 if cap <= 0 else max(1, int(math.ceil((hi - lo) / cap - 1e-9)))
        edges = np.linspace(lo, hi, m + 1)
        out.extend(zip(edges[:-1], edges[1:]))
        lo = hi
    return out


def model_radius(g, spec):
    if g.periodic:
        return spec.periodic_far * float(np.max(g.extent()))
    return g.diameter() + 3.0 * g.h * math.sqrt(g.d)


def build_rule(g, order, spec):
    alpha = order.alpha
    rho = spec.r_inner * g.h
    r_out = spec.r_outer if spec.r_outer is not None else 64.0 * g.diameter()
    if r_out <= rho:
        raise ValueError("r_outer must exceed the near-field cutoff r_inner * h")
    r_model = min(model_radius(g, spec), r_out)
    x, w = _gl(spec.n_radial)
    cap = spec.n_radial * spec.max_spacing * g.h
    rs, ws, data = [], [], []
    for lo, hi, is_data in [(p[0], p[1], True) for p in _panels(rho, r_model, cap)] + [
        (p[0], p[1], False) for p in _panels(r_model, r_out, 0.0)
    ]:
        rs.append(lo + (hi - lo) * x)
        ws.append((hi - lo) * w)
        data.append(np.full(len(x), is_data))
    r = np.concatenate(rs)
    wt = np.concatenate(ws) * r ** (-2.0 - alpha)
    if g.d == 1:
        theta = np.array([[1.0]])
        omega = np.array([1.0])
    else:
        m = spec.n_angular // 2
        phi = math.pi * np.arange(m) / m
        theta = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        omega = np.full(m, math.pi / m)
    return PolarRule(
        r=r,
        weight=wt,
        data=np.concatenate(data),
        theta=theta,
        omega=omega,
        rho=rho,
        r_model=r_model,
        r_out=r_out,
        near_factor=rho ** (1.0 - alpha) / (1.0 - alpha),
        tail_factor=r_out ** (-1.0 - alpha) / (1.0 + alpha),
    )


def resolve_workers(workers=None):
    if workers is None:
        env = os.environ.get("FRACFLOW_THREADS")
        workers = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(workers))


def blocked_sum(n_items, fn, workers=None, size=BLOCK):
    """Sum ``fn(block)`` over fixed index blocks, reduced in block order.

    The partition does not depend on ``workers``, so the result is bitwise
    identical for any thread count.
    """
    blocks = [range(i, min(i + size, n_items)) for i in range(0, n_items, size)]
    workers = resolve_workers(workers)
    if workers == 1 or len(blocks) == 1:
        parts = [fn(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(fn, blocks))
    total = None
    for p in parts:
        if p is None:
            continue
        total = p.copy() if total is None else total + p
    return total


class FarModel:
    """Far-field values of ``u`` at ``X + offset`` for all nodes ``X``."""

    def __init__(self, g, values=None, perturbation=False):
        self.g = g
        vals = g.values if values is None else np.asarray(values, dtype=float).reshape(g.shape)
        n = g.n_nodes
        if g.periodic:
            self.kind = "mean"
            self.base = np.full(n, float(np.mean(vals)))
            self.slope = np.zeros(g.d)
        elif g.extension == "affine-far-field" and not perturbation:
            self.kind = "affine"
            self.slope = np.asarray(g.slope, dtype=float)
            self.base = g.points() @ self.slope + g.offset
        else:
            self.kind = "zero"
            self.base = np.zeros(n)
            self.slope = np.zeros(g.d)

    def at(self, offset):
        if self.kind == "affine":
            return self.base + float(np.dot(self.slope, offset))
        return self.base


class Sampled:
    """Values of one grid function at ``X +/- r theta`` on the polar rule."""

    def __init__(self, g, rule, spec, values=None, perturbation=False):
        self.g = g
        self.rule = rule
        self.values = (g.values if values is None else np.asarray(values, dtype=float)).ravel()
        self.sampler = ShiftSampler(g, self.values, spec.interp, rule.r_model, perturbation)
        self.far = FarModel(g, self.values, perturbation)

    def at(self, q, offset):
        if self.rule.data[q]:
            return self.sampler.sample(offset).ravel()
        return self.far.at(offset)

    def rows(self, qs, direction):
        """Values at ``X + r_q direction`` for the radial indices ``qs``, shape ``(len(qs), n)``."""
        qs = np.asarray(qs)
        offs = self.rule.r[qs][:, None] * np.asarray(direction, dtype=float)[None, :]
        out = np.empty((len(qs), self.values.size))
        data = self.rule.data[qs]
        if np.any(data):
            out[data] = self.sampler.sample_many(offs[data])
        for i in np.flatnonzero(~data):
            out[i] = self.far.at(offs[i])
        return out


def row_blocks(rule, size=64):
    """Fixed ``(k, radial index block)`` work units shared by every evaluator."""
    nq = len(rule.r)
    return [(k, np.arange(i, min(i + size, nq))) for k in range(len(rule.omega)) for i in range(0, nq, size)]


def regularity_exponent(u):
    """Growth exponent of max |second differences| between spacings 2h and h."""
    vals = u.values
    m1 = m2 = 0.0
    for step, store in ((1, 0), (2, 1)):
        ext = u.padded(2)
        for ax in range(u.d):
            c = [slice(2, -2)] * u.d
            p = list(c)
            m = list(c)
            p[ax] = slice(2 + step, ext.shape[ax] - 2 + step)
            m[ax] = slice(2 - step, ext.shape[ax] - 2 - step)
            sec = np.max(np.abs(ext[tuple(p)] - 2 * vals + ext[tuple(m)])) / (step * u.h) ** 2
            if store == 0:
                m1 = max(m1, sec)
            else:
                m2 = max(m2, sec)
    scale = (1.0 + float(np.max(np.abs(vals)))) * 1e-9
    if m2 <= scale or m1 <= scale:
        return 0.0
    return math.log2(m1 / m2)


def check_near_field(u, order):
    e = regularity_exponent(u)
    if e >= 1.0 - order.alpha:
        raise NearFieldError(
            f"second differences grow like h^-{e:.3f} under refinement; "
            f"the near-field integral needs growth below h^-{1 - order.alpha:.3f}"
        )
    return e


def _tail_estimate(u, order, rule, spec):
    mode = spec.tail_mode
    if mode == "none":
        return 0.0
    affine_slope = u.extension == "affine-far-field" and any(u.slope)
    if mode == "sup-bound" and not affine_slope:
        return tail_bound(order, rule.r_out, sup_norm(u), "sup-bound")
    grad = lip_norm(u)
    if u.slope is not None:
        grad = max(grad, float(np.linalg.norm(u.slope)))
    return tail_bound(order, rule.r_out, grad, "grad-bound")


def evaluate_H(u, order, spec=None, workers=None, backend=None, rule=None):
    """Fractional mean curvature of the graph of ``u`` at every node."""
    spec = spec or QuadratureSpec()
    if order.d != u.d:
        raise ValueError("order dimension does not match the grid")
    if spec.check_regularity:
        check_near_field(u, order)
    rule = rule or build_rule(u, order, spec)
    s = order.s
    src = Sampled(u, rule, spec)
    uf = np.ascontiguousarray(src.values)
    nq = len(rule.r)
    nthreads = resolve_workers(workers)
    total = np.zeros(u.n_nodes)
    # per node the rows are summed in a fixed order, independent of the thread count
    for k, qs in row_blocks(rule):
        th = rule.theta[k]
        up = np.ascontiguousarray(src.rows(qs, th))
        um = np.ascontiguousarray(src.rows(qs, -th))
        c = np.ascontiguousarray(2.0 * rule.omega[k] * rule.weight[qs])
        _backend.even_accumulate_rows(total, uf, um, up, np.ascontiguousarray(rule.r[qs]), c, s, backend, nthreads)
    grad = gradient(u).reshape(u.d, -1)
    hess = hessian(u).reshape(u.d, u.d, -1)
    near = np.zeros(u.n_nodes)
    tail = np.zeros(u.n_nodes)
    far_slope = np.zeros(u.d) if u.slope is None else np.asarray(u.slope)
    far_here = src.far.at(np.zeros(u.d))
    for k, th in enumerate(rule.theta):
        a = th @ grad
        b = np.einsum("i,j,ijn->n", th, th, hess)
        near += rule.omega[k] * 2.0 * (-b) * (1.0 + a * a) ** (-s)
        a_inf = float(far_slope @ th)
        tail += rule.omega[k] * 4.0 * (1.0 + a_inf * a_inf) ** (-s)
    total = total + rule.near_factor * near
    if spec.tail_mode != "none":
        total = total + rule.tail_factor * tail * (uf - far_here)
    return CurvatureField(
        values=total.reshape(u.shape),
        grid=u,
        tail_estimate=_tail_estimate(u, order, rule, spec),
        spec=spec,
        meta={"backend": backend or _backend.NAME, "n_radial_nodes": nq, "r_model": rule.r_model, "r_outer": rule.r_out},
    )


def weight_Q(u, values=None):
    """``sqrt(1 + |grad u|^2)`` with the grid's central differences."""
    grad = gradient(u, values)
    return np.sqrt(1.0 + np.sum(grad * grad, axis=0))


def evaluate_weighted_H(u, order, spec=None, workers=None, backend=None, rule=None):
    """``Q(u) H(u)``, the normal-velocity operator of the graph flow."""
    field_ = evaluate_H(u, order, spec, workers, backend, rule)
    field_.values = weight_Q(u) * field_.values
    field_.weighted = True
    return field_


def _coeff_values(coeff, pts, r, theta):
    vals = np.asarray(coeff(pts, r, theta), dtype=float)
    if vals.shape != (pts.shape[0],):
        vals = np.broadcast_to(vals, (pts.shape[0],)).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("coefficient samples are not finite")
    return vals


def integrate_even(v, coeff, order, spec=None, workers=None):
    """``int_S int_0^inf (1/2)(2v(x) - v(x+r theta) - v(x-r theta)) coeff(x,r,theta) r^{-2-alpha}``.

    ``coeff(X, r, theta)`` receives the node coordinate array ``X`` of shape
    ``(n_nodes, d)`` and returns one value per node.
    """
    spec = spec or QuadratureSpec()
    rule = build_rule(v, order, spec)
    src = Sampled(v, rule, spec)
    pts = v.points()
    vf = src.values
    pairs = [(k, q) for k in range(len(rule.omega)) for q in range(len(rule.r))]

    def block(idx):
        acc = np.zeros(v.n_nodes)
        for i in idx:
            k, q = pairs[i]
            r = rule.r[q]
            th = rule.theta[k]
            de = 0.5 * (2.0 * vf - src.at(q, r * th) - src.at(q, -r * th))
            cc = _coeff_values(coeff, pts, r, th) + _coeff_values(coeff, pts, r, -th)
            acc += rule.omega[k] * rule.weight[q] * de * cc
        return acc

    total = blocked_sum(len(pairs), block, workers)
    hess = hessian(v).reshape(v.d, v.d, -1)
    far_here = src.far.at(np.zeros(v.d))
    for k, th in enumerate(rule.theta):
        b = np.einsum("i,j,ijn->n", th, th, hess)
        c0 = _coeff_values(coeff, pts, 0.0, th) + _coeff_values(coeff, pts, 0.0, -th)
        total += rule.near_factor * rule.omega[k] * (-0.5 * b) * c0
        if spec.tail_mode != "none":
            # beyond r_outer the half difference is v(x) - far(x); coeff frozen at r_outer
            c_out = _coeff_values(coeff, pts, rule.r_out, th) + _coeff_values(coeff, pts, rule.r_out, -th)
            total += rule.tail_factor * rule.omega[k] * (vf - far_here) * c_out
    return total.reshape(v.shape)


def integrate_odd(v, coeff, order, spec=None, workers=None, assert_vanishing=True):
    """``int_S int_0^inf (v(x) - v(x - r theta)) coeff(x,r,theta) r^{-2-alpha}``.

    The coefficient must vanish at ``r = 0`` for the integral to converge; with
    ``assert_vanishing`` this is checked on the nodes.
    """
    spec = spec or QuadratureSpec()
    rule = build_rule(v, order, spec)
    src = Sampled(v, rule, spec)
    pts = v.points()
    vf = src.values
    if assert_vanishing:
        for th in rule.theta:
            for sgn in (1.0, -1.0):
                if np.max(np.abs(_coeff_values(coeff, pts, 0.0, sgn * th))) > 1e-12:
                    raise ValueError("odd-part coefficient does not vanish at r = 0")
    pairs = [(k, q) for k in range(len(rule.omega)) for q in range(len(rule.r))]

    def block(idx):
        acc = np.zeros(v.n_nodes)
        for i in idx:
            k, q = pairs[i]
            r = rule.r[q]
            th = rule.theta[k]
            plus = (vf - src.at(q, -r * th)) * _coeff_values(coeff, pts, r, th)
            minus = (vf - src.at(q, r * th)) * _coeff_values(coeff, pts, r, -th)
            acc += rule.omega[k] * rule.weight[q] * (plus + minus)
        return acc

    total = blocked_sum(len(pairs), block, workers)
    grad = gradient(v).reshape(v.d, -1)
    for k, th in enumerate(rule.theta):
        a = th @ grad
        slope_p = _coeff_values(coeff, pts, rule.rho, th) / rule.rho
        slope_m = _coeff_values(coeff, pts, rule.rho, -th) / rule.rho
        total += rule.near_factor * rule.omega[k] * a * (slope_p - slope_m)
    return total.reshape(v.shape)


def extension_A_field(u, order, spec=None):
    """Closure ``(X, r, theta) -> A_u(X, r, theta)`` on the nodes of ``u``."""
    spec = spec or QuadratureSpec()
    rule = build_rule(u, order, spec)
    src = Sampled(u, rule, spec)
    grad = gradient(u).reshape(u.d, -1)
    uf = src.values
    data_lookup = {float(r): q for q, r in enumerate(rule.r)}

    def coeff(pts, r, theta):
        theta = np.asarray(theta, dtype=float)
        if r == 0.0:
            a = theta @ grad
            return (1.0 + a * a) ** (-order.s)
        q = data_lookup.get(float(r))
        if (q is not None and not rule.data[q]) or (q is None and r > rule.r_model):
            um, up = src.far.at(-r * theta), src.far.at(r * theta)
        else:
            um = src.sampler.sample(-r * theta).ravel()
            up = src.sampler.sample(r * theta).ravel()
        return kernel_K_values((um - uf) / r, (up - uf) / r, order)

    return coeff
