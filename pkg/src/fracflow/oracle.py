"""Slow reference evaluators, independent of the grid quadrature.

* :func:`direct_H_set` integrates ``(1_{E^c} - 1_E)(Y) |X - Y|^{-N-alpha}`` for the
  subgraph ``E = {y < u(x)}`` minus the same integrand for the tangent half-space
  at ``X`` (whose principal value is zero).  Along every ray from ``X`` the
  difference is piecewise constant, so the radial integral is exact once the
  crossings of the ray with the graph are located; only the direction integral
  is numerical.
* :func:`direct_H_graph` integrates ``G(p_u(x, y)) |x - y|^{-(N-1)-alpha}`` with
  ``x +/- r theta`` paired, using the closed form ``G(p) = -2 p 2F1(1/2, s; 3/2; -p^2)``.
* :func:`lambda_alpha` is ``int_R (2 - 2 cos z) |z|^{-2-alpha} dz`` by Fourier-weighted
  quadrature.

Both curvature oracles evaluate the analytic profile ``u.source`` when available
(inside the box, and everywhere for periodic data), so they do not share the grid
interpolation of the main path.
"""
from dataclasses import dataclass
import math

import numpy as np
from scipy import integrate, optimize
from scipy.special import hyp2f1

from .grid import value_at


@dataclass(frozen=True)
class SubgraphSet:
    u: object
    x: tuple
    R_set: float = 1.0e3

    def __post_init__(self):
        if not self.R_set > 0:
            raise ValueError("R_set must be positive")


@dataclass(frozen=True)
class OracleResult:
    value: float
    error_estimate: float
    method: str

    def __post_init__(self):
        if not self.error_estimate >= 0:
            raise ValueError("error estimate must be non-negative")


@dataclass
class FDResult:
    slope: float
    eps: list
    errors: list
    monotone: bool


def cal_g_closed(p, order):
    """``G(p) = -2 p 2F1(1/2, s; 3/2; -p^2)``."""
    p = np.asarray(p, dtype=float)
    return -2.0 * p * hyp2f1(0.5, order.s, 1.5, -p * p)


# profile access --------------------------------------------------------------


class _Profile:
    """Pointwise ``u`` on all of ``R^d``: analytic source where defined, extension outside."""

    def __init__(self, u):
        self.u = u
        self.d = u.d
        lo = np.asarray(u.origin)
        self.lo = lo
        self.hi = lo + u.extent()
        self.slope = np.zeros(u.d) if u.slope is None else np.asarray(u.slope, dtype=float)
        self.exact = u.source is not None

    def __call__(self, pts):
        pts = np.asarray(pts, dtype=float).reshape(-1, self.d)
        u = self.u
        if not self.exact:
            return np.asarray(value_at(u, pts if self.d > 1 else pts[:, 0]), dtype=float).ravel()
        if u.periodic:
            wrapped = self.lo + np.mod(pts - self.lo, self.hi - self.lo)
            return np.asarray(u.source(wrapped), dtype=float).ravel()
        inside = np.all((pts >= self.lo) & (pts <= self.hi), axis=1)
        out = u.far_field(pts)
        if np.any(inside):
            out = np.array(out, dtype=float)
            out[inside] = np.asarray(u.source(pts[inside]), dtype=float).ravel()
        return out

    def far(self, pts):
        return self.u.far_field(np.asarray(pts, dtype=float).reshape(-1, self.d))

    def gradient(self, x, step=1e-4):
        """Fourth-order central differences of the pointwise profile."""
        x = np.asarray(x, dtype=float)
        grad = np.zeros(self.d)
        for k in range(self.d):
            e = np.zeros(self.d)
            e[k] = step
            f = self(np.stack([x + 2 * e, x + e, x - e, x - 2 * e]))
            grad[k] = (-f[0] + 8 * f[1] - 8 * f[2] + f[3]) / (12 * step)
        return grad

    def second(self, x, theta, step=1e-3):
        """Fourth-order central second difference along ``theta``."""
        x = np.asarray(x, dtype=float)
        e = step * np.asarray(theta, dtype=float)
        f = self(np.stack([x + 2 * e, x + e, x, x - e, x - 2 * e]))
        return float(-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * step * step)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros((self.d, self.d))
        for i in range(self.d):
            for j in range(i, self.d):
                if i == j:
                    e = np.zeros(self.d)
                    e[i] = 1.0
                    out[i, i] = self.second(x, e)
                else:
                    # polarisation: D_ee with e = (e_i + e_j)/sqrt2
                    e = np.zeros(self.d)
                    e[i] = e[j] = 1.0 / math.sqrt(2.0)
                    f = np.zeros(self.d)
                    f[i], f[j] = 1.0 / math.sqrt(2.0), -1.0 / math.sqrt(2.0)
                    out[i, j] = out[j, i] = 0.5 * (self.second(x, e) - self.second(x, f))
        return out

    def oscillation(self):
        """Upper bound for ``sup (u - l) - inf (u - l)`` with ``l`` the far field."""
        vals = self.u.values - self.u.far_field(self.u.points()).reshape(self.u.shape)
        if self.u.periodic:
            vals = self.u.values
        lo, hi = min(float(vals.min()), 0.0), max(float(vals.max()), 0.0)
        return 1.05 * (hi - lo) + 1e-12

    def box_exit(self, x, direction):
        """Ray parameter where ``x + r direction`` leaves the box (inf if never)."""
        t = math.inf
        for k in range(self.d):
            v = direction[k]
            if v > 0:
                t = min(t, (self.hi[k] - x[k]) / v)
            elif v < 0:
                t = min(t, (self.lo[k] - x[k]) / v)
        return max(t, 0.0)


def _point(u, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (u.d,):
        raise ValueError("evaluation point has the wrong dimension")
    return x


# set-based PV ---------------------------------------------------------------


def _split_quad(f, lo, hi, tol, n_mid=16, depth=9):
    """Adaptive quadrature on a partition graded geometrically toward both endpoints.

    Near-tangent rays produce integrable endpoint singularities whose support can
    be far narrower than the first Gauss-Kronrod rule; the grading makes sure
    every scale is sampled.
    """
    span = hi - lo
    offs = [span * 10.0 ** (-k) for k in range(depth, 1, -1)]
    inner = list(np.linspace(lo + span / 100.0, hi - span / 100.0, n_mid + 1))
    pts = [lo] + [lo + o for o in offs] + inner + [hi - o for o in reversed(offs)] + [hi]
    total = 0.0
    err = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        v, e = integrate.quad(f, a, b, epsabs=tol * (b - a) / span, epsrel=tol, limit=200)
        total += v
        err += e
    return total, err


def _ray_integral(prof, x, ux, phi_x, phi_y, sigma_t, alpha, R_set, spacing, osc, slope_t, hess):
    """``int_0^inf (sigma(rho) - sigma_t) rho^(-1-alpha) d rho`` along one ray; returns (value, truncated).

    On ``(0, rho_s]`` the sign comes from the quadratic model
    ``rho (phi_y - grad u . phi_x) - rho^2 phi_x^T D^2u phi_x / 2`` (sampled values there are
    dominated by rounding); beyond ``rho_s`` crossings are bracketed on a uniform grid
    and refined by Brent's method.
    """
    c1 = phi_y - float(prof.slope @ phi_x)
    rho_max = osc / abs(c1) if c1 != 0 else math.inf
    if prof.u.periodic:
        rho_hi = min(rho_max, R_set)
        truncated = rho_max > R_set
    else:
        rho_hi = min(rho_max, prof.box_exit(x, phi_x) if np.any(phi_x) else rho_max)
        truncated = False
    rho_s = 1e-3 * spacing
    rho_hi = max(rho_hi, 2 * rho_s)

    def g(rho):
        rho = np.atleast_1d(rho)
        return ux + rho * phi_y - prof(x[None, :] + rho[:, None] * phi_x[None, :])

    breaks, seg_signs = [], [sigma_t]
    ct = phi_y - float(slope_t @ phi_x)
    kappa = float(phi_x @ hess @ phi_x)
    if kappa != 0.0 and 0.0 < 2.0 * ct / kappa < rho_s:
        breaks.append(2.0 * ct / kappa)
        seg_signs.append(-sigma_t)
    # a crossing pair of width w at distance rho weighs about w rho^(-1-alpha): coarser sampling far out
    rho_fine = min(200.0 * spacing, rho_hi)
    rhos = np.unique(np.concatenate([[rho_s], np.arange(2 * rho_s, spacing, 2 * rho_s) if spacing < rho_hi else [],
                                     np.arange(spacing, rho_fine, spacing),
                                     np.arange(rho_fine, rho_hi, 10.0 * spacing), [rho_hi]]))
    gv = g(rhos)
    signs = np.sign(gv)
    # samples below the rounding floor of u(x) + rho phi_y - u(y) take the local model sign
    floor = 64.0 * np.finfo(float).eps * (abs(ux) + rhos * abs(phi_y) + np.abs(gv - ux - rhos * phi_y))
    noisy = np.abs(gv) <= floor
    model = np.sign(rhos * ct - 0.5 * kappa * rhos * rhos)
    signs[noisy] = np.where(model[noisy] != 0, model[noisy], sigma_t)
    if signs[0] != 0 and signs[0] != seg_signs[-1]:
        # model and samples disagree at rho_s: place the switch there
        breaks.append(rho_s)
        seg_signs.append(signs[0])
    for i in np.nonzero(signs[:-1] * signs[1:] < 0)[0]:
        if noisy[i] or noisy[i + 1]:
            breaks.append(math.sqrt(rhos[i] * rhos[i + 1]))
        else:
            breaks.append(optimize.brentq(lambda r: float(g(r)[0]), rhos[i], rhos[i + 1], xtol=1e-14 * rhos[i + 1], rtol=1e-15))
        seg_signs.append(signs[i + 1])
    # beyond rho_hi the ray sees only the far-field model
    if prof.u.periodic or rho_hi >= rho_max:
        tail_sign = np.sign(c1) if c1 != 0 else seg_signs[-1]
        if tail_sign != seg_signs[-1]:
            breaks.append(rho_hi)
            seg_signs.append(tail_sign)
    else:
        # outside the box g(rho) = (u - l)(x) + rho c1 exactly
        c0 = ux - float(prof.far(x[None, :])[0])
        at_hi = np.sign(c0 + rho_hi * c1)
        if at_hi != 0 and at_hi != seg_signs[-1]:
            breaks.append(rho_hi)
            seg_signs.append(at_hi)
        if c1 != 0 and -c0 / c1 > rho_hi:
            breaks.append(-c0 / c1)
            seg_signs.append(np.sign(c1))
    edges = [0.0] + breaks + [math.inf]
    total = 0.0
    for (a, b), sg in zip(zip(edges[:-1], edges[1:]), seg_signs):
        if sg == sigma_t or b <= a:
            continue
        fb = 0.0 if b == math.inf else b ** (-alpha)
        total += (sg - sigma_t) * (a ** (-alpha) - fb) / alpha
    return total, truncated


def direct_H_set(sset, order, tol=1e-7, n_psi=48, spacing=None):
    """Fractional curvature of the subgraph at ``X = (x, u(x))`` from the set definition."""
    u = sset.u
    x = _point(u, sset.x)
    prof = _Profile(u)
    alpha = order.alpha
    ux = float(prof(x[None, :])[0])
    grad = prof.gradient(x)
    hess = prof.hessian(x)
    # crossing pairs closer than the sample spacing go unseen; 0.05 h resolves them at little cost
    spacing = spacing or 0.05 * u.h
    osc = prof.oscillation()
    normal = np.append(-grad, 1.0)
    normal /= np.linalg.norm(normal)
    trunc_measure = 0.0
    err = 0.0

    def ray(phi, sigma_t):
        nonlocal trunc_measure
        val, cut = _ray_integral(prof, x, ux, phi[:-1], phi[-1], sigma_t, alpha, sset.R_set, spacing, osc, grad, hess)
        return val, cut

    if u.d == 1:
        tangent = np.array([normal[1], -normal[0]])

        def f(beta):
            phi = math.cos(beta) * tangent + math.sin(beta) * normal
            return ray(phi, 1.0 if beta > 0 else -1.0)[0]

        total = 0.0
        for lo, hi in ((0.0, math.pi), (-math.pi, 0.0)):
            v, e = _split_quad(f, lo, hi, tol)
            total += v
            err += e
        if u.periodic:
            trunc_measure = 4.0 * osc / sset.R_set
    else:
        t1 = np.cross(normal, [0.0, 0.0, 1.0]) if abs(normal[2]) < 0.9 else np.cross(normal, [1.0, 0.0, 0.0])
        t1 /= np.linalg.norm(t1)
        t2 = np.cross(normal, t1)
        total = 0.0
        for j in range(n_psi):
            psi = 2.0 * math.pi * j / n_psi
            tdir = math.cos(psi) * t1 + math.sin(psi) * t2

            def f(beta, tdir=tdir):
                phi = math.cos(beta) * tdir + math.sin(beta) * normal
                return ray(phi, 1.0 if beta > 0 else -1.0)[0] * math.cos(beta)

            for lo, hi in ((0.0, 0.5 * math.pi), (-0.5 * math.pi, 0.0)):
                v, e = _split_quad(f, lo, hi, tol, n_mid=8)
                total += v * 2.0 * math.pi / n_psi
                err += e * 2.0 * math.pi / n_psi
        if u.periodic:
            trunc_measure = 4.0 * math.pi * osc / sset.R_set
    err += trunc_measure * 2.0 * sset.R_set ** (-alpha) / alpha
    return OracleResult(float(total), float(err), "set-ray")


# graph form ------------------------------------------------------------------


def _graph_radial(prof, x, ux, theta, order, R, panel):
    """``int_0^inf [G(p(x, x + r theta)) + G(p(x, x - r theta))] r^(-1-alpha) dr`` and its error."""
    alpha = order.alpha
    u = prof.u

    def f(r):
        r = float(r)
        pts = np.stack([x + r * theta, x - r * theta])
        vals = prof(pts)
        p = (vals - ux) / r
        return float(np.sum(cal_g_closed(p, order))) * r ** (-1.0 - alpha)

    if u.periodic:
        r_data = R
    else:
        r_data = max(prof.box_exit(x, theta), prof.box_exit(x, -theta))
    # below r_min the paired quotients cancel to rounding; use G(a + rb/2) + G(-a + rb/2) ~ G'(a) b r
    r_min = 1e-4 * panel
    a = float(prof.gradient(x) @ theta)
    b = prof.second(x, theta)
    total = -2.0 * (1.0 + a * a) ** (-order.s) * b * r_min ** (1.0 - alpha) / (1.0 - alpha)
    # rounding in the quotients, eps |u| / r, amplified by r^(-1-alpha) and |G'| <= 2
    scale = abs(ux) + float(np.max(np.abs(u.values)))
    err = abs(total) * r_min + 8.0 * np.finfo(float).eps * scale * r_min ** (-1.0 - alpha) / (1.0 + alpha)
    first = min(panel, r_data)
    v, e = integrate.quad(f, r_min, first, epsabs=1e-13, epsrel=1e-11, limit=200)
    total += v
    err += e
    edges = np.unique(np.concatenate([[first], np.arange(panel, r_data, panel), [r_data]]))
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += v
        err += e
    if u.periodic:
        mean = float(np.mean(u.values))
        total += 4.0 * (ux - mean) * R ** (-1.0 - alpha) / (1.0 + alpha)
        err += 4.0 * float(np.max(np.abs(u.values - mean))) * R ** (-1.0 - alpha) * (1.0 + float(np.max(u.extent()))) / R
    else:
        v, e = integrate.quad(f, r_data, math.inf, epsabs=1e-13, epsrel=1e-11, limit=200)
        total += v
        err += e
    return total, err


def direct_H_graph(u, x, order, R=None, n_theta=64):
    """Graph-form fractional curvature at node or point ``x`` (``R``: periodic truncation radius)."""
    x = _point(u, x)
    prof = _Profile(u)
    ux = float(prof(x[None, :])[0])
    if R is None:
        R = 400.0 * float(np.max(u.extent())) if u.periodic else math.inf
    panel = float(np.max(u.extent())) / 8.0 if not u.periodic else float(np.max(u.extent())) / 4.0
    if u.d == 1:
        v, e = _graph_radial(prof, x, ux, np.array([1.0]), order, R, panel)
        return OracleResult(float(v), float(e), "graph-hyp2f1")
    total = 0.0
    err = 0.0
    for k in range(n_theta):
        phi = math.pi * k / n_theta
        v, e = _graph_radial(prof, x, ux, np.array([math.cos(phi), math.sin(phi)]), order, R, panel)
        total += v * math.pi / n_theta
        err += e * math.pi / n_theta
    return OracleResult(float(total), float(err), "graph-hyp2f1")


# linear symbol ---------------------------------------------------------------


def lambda_alpha(order, split=1.0):
    """``int_R (2 - 2 cos z) |z|^(-2-alpha) dz``; ``split`` moves the near/far boundary."""
    if order.d != 1:
        raise ValueError("lambda_alpha is defined for d = 1")
    a = order.alpha

    def near(z):
        if z < 1e-4:
            z2 = z * z
            return 1.0 - z2 / 12.0 + z2 * z2 / 360.0
        return (2.0 - 2.0 * math.cos(z)) / (z * z)

    # int_0^split z^(-alpha) (2 - 2 cos z) / z^2 dz with an algebraic endpoint weight
    v_near, _ = integrate.quad(near, 0.0, split, weight="alg", wvar=(-a, 0.0), epsabs=1e-13, epsrel=1e-12)
    v_const = 2.0 * split ** (-1.0 - a) / (1.0 + a)
    v_cos, _ = integrate.quad(lambda z: (split + z) ** (-2.0 - a), 0.0, math.inf, weight="cos", wvar=1.0, epsabs=1e-13)
    v_sin, _ = integrate.quad(lambda z: (split + z) ** (-2.0 - a), 0.0, math.inf, weight="sin", wvar=1.0, epsabs=1e-13)
    # cos(split + z) = cos(split) cos z - sin(split) sin z
    v_osc = 2.0 * (math.cos(split) * v_cos - math.sin(split) * v_sin)
    return 2.0 * (v_near + v_const - v_osc)


# finite-difference linearisation -------------------------------------------------


def fd_linearization(u0, w, order, spec=None, eps_list=(1e-2, 1e-3, 1e-4), weighted=False, workers=None):
    """Errors ``||(H(u0 + eps w) - H(u0)) / eps - DH(u0)[w]||_inf`` and their log-log slope."""
    from .curvature import evaluate_H, evaluate_weighted_H
    from .linearized import apply_DH, apply_weighted_DH

    eps_list = [float(e) for e in eps_list]
    if len(eps_list) < 3 or any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing with at least 3 entries")
    f = evaluate_weighted_H if weighted else evaluate_H
    lin = (apply_weighted_DH if weighted else apply_DH)(u0, w, order, spec, workers)
    base = f(u0, order, spec, workers).values
    wv = np.asarray(w.values)
    errors = []
    for eps in eps_list:
        shifted = u0.with_values(u0.values + eps * wv)
        quot = (f(shifted, order, spec, workers).values - base) / eps
        errors.append(float(np.max(np.abs(quot - lin))))
    if max(errors) == 0.0:
        return FDResult(math.inf, eps_list, errors, True)
    pos = [(e, r) for e, r in zip(eps_list, errors) if r > 0]
    slope = float(np.polyfit(np.log([p[0] for p in pos]), np.log([p[1] for p in pos]), 1)[0]) if len(pos) >= 2 else math.inf
    monotone = all(b <= a for a, b in zip(errors, errors[1:]))
    return FDResult(slope, eps_list, errors, monotone)


# operator-bound calibration ---------------------------------------------------

CALIBRATION_SEED = 20231


def calibration_corpus(template, n_fields=8, seed=CALIBRATION_SEED, amplitudes=(1e-3, 0.3)):
    """Random band-limited fields on the periodic grid of ``template`` (log-uniform amplitudes)."""
    from .grid import sample
    from .profiles import random_expression

    if not template.periodic:
        raise ValueError("calibration uses periodic grids")
    rng = np.random.default_rng(seed)
    L = float(template.extent()[0])
    out = []
    for i in range(n_fields):
        amp = float(np.exp(rng.uniform(*np.log(amplitudes))))
        modes = int(rng.integers(1, 6))
        f = random_expression(template.d, L, amp, modes, int(rng.integers(2**31)))
        out.append(sample(f, template.shape, template.h, template.origin, "periodic"))
    return out


def calibrate_operator_constant(order, template, spec=None, n_fields=8, seed=CALIBRATION_SEED, safety=2.0, gamma=None, workers=None):
    """``safety`` times the largest operator ratio over a calibration corpus."""
    from .verify import operator_ratios

    worst = 0.0
    for u in calibration_corpus(template, n_fields, seed):
        worst = max(worst, *operator_ratios(u, order, spec, gamma, workers=workers))
    return safety * worst
