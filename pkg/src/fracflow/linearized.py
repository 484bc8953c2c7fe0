"""Linearisations of the curvature operator and their dense matrices.

``DH(u0)[w](x) = int (w(x) - w(y)) c(x, y) |x - y|^{-N-alpha} dy`` with
``c = -G'(p_{u0}(x, y)) = 2 (1 + p^2)^(-s) > 0``, and the weighted version
``DQH(u0)[w] = Q(u0) DH(u0)[w] + H(u0) grad u0 . grad w / Q(u0)``.

All operators here are finite sums ``sum_i g_i D(Q H)(z_i)`` (one term for the
linearisation at ``u0``, Gauss-Legendre nodes in ``rho`` for the averaged
operator ``B[w, v]``).  The discrete action is the exact derivative of the
discrete ``H``/``QH`` of :mod:`fracflow.curvature`, because the kernel form
``delta_e u K = (r/2)(G(p_-) + G(p_+))`` is differentiated node by node with
the same interpolation, near-field and tail rules.
"""
from dataclasses import dataclass, field
import json
import math
from pathlib import Path

import numpy as np

from .curvature import QuadratureSpec, Sampled, blocked_sum, build_rule, evaluate_H, row_blocks, weight_Q
from .grid import gradient, gradient_at, hessian, value_at
from .kernels import cal_g_prime, cal_g_second

MATRIX_CAP = 16384


def _same_grid(a, b, extension=True):
    if a.shape != b.shape or a.h != b.h or a.origin != b.origin:
        raise ValueError("grid mismatch")
    if extension and a.extension != b.extension:
        raise ValueError("extension policy mismatch")


@dataclass
class Term:
    """One ``g * D(Q H)(z)`` summand with its precomputed node fields."""

    weight: float
    z: object
    Q: np.ndarray
    grad: np.ndarray  # (d, n)
    hess: np.ndarray  # (d, d, n)
    H: np.ndarray = None
    src: Sampled = None


@dataclass
class DriftField:
    V: np.ndarray  # (d,) + grid shape

    def sup(self):
        return float(np.max(np.sqrt(np.sum(self.V * self.V, axis=0))))


class KernelOperator:
    """``w -> sum_i g_i [Q_i DH(z_i)[w] + H(z_i) grad z_i . grad w / Q_i]`` on one grid."""

    def __init__(self, terms, order, spec=None, weighted=True, label="", workers=None):
        if not terms:
            raise ValueError("operator needs at least one term")
        self.grid = terms[0].z
        for t in terms[1:]:
            _same_grid(self.grid, t.z)
        self.order = order
        self.spec = spec or QuadratureSpec()
        self.weighted = weighted
        self.label = label
        self.workers = workers
        self.rule = build_rule(self.grid, order, self.spec)
        for t in terms:
            t.src = Sampled(t.z, self.rule, self.spec)
            if not weighted:
                t.Q = np.ones_like(t.Q)
        self.terms = terms
        self._local()

    # kernel coefficient --------------------------------------------------

    def coeff(self, qs, k, sign):
        """``c(x, r_q, sign theta_k)`` for radial indices ``qs``, shape ``(len(qs), n)``."""
        qs = np.atleast_1d(qs)
        r = self.rule.r[qs][:, None]
        th = sign * self.rule.theta[k]
        out = np.zeros((len(qs), self.grid.n_nodes))
        for t in self.terms:
            p = (t.src.rows(qs, th) - t.src.values[None, :]) / r
            out += t.weight * t.Q[None, :] * (-cal_g_prime(p, self.order))
        return out

    def _local(self):
        """Near-field, tail and drift parts: ``E : D^2 w + F . grad w + G (w - w_far)``."""
        g, rule, order = self.grid, self.rule, self.order
        n, d = g.n_nodes, g.d
        E = np.zeros((d, d, n))
        F = np.zeros((d, n))
        G = np.zeros(n)
        for t in self.terms:
            slope = np.zeros(d) if t.z.slope is None or g.periodic else np.asarray(t.z.slope)
            for k, th in enumerate(rule.theta):
                a = th @ t.grad
                b = np.einsum("i,j,ijn->n", th, th, t.hess)
                c0 = -cal_g_prime(a, order)
                wk = rule.omega[k] * rule.near_factor * t.weight * t.Q
                E -= wk * c0 * np.outer(th, th)[:, :, None]
                F += (wk * cal_g_second(a, order) * b) * th[:, None]
                if self.spec.tail_mode != "none":
                    c_inf = -cal_g_prime(float(slope @ th), order)
                    G += 2.0 * rule.omega[k] * rule.tail_factor * t.weight * t.Q * c_inf
            if self.weighted:
                if t.H is None:
                    t.H = evaluate_H(t.z, order, self.spec.replace(check_regularity=False), self.workers, rule=rule).values.ravel()
                F += t.weight * (t.H / t.Q) * t.grad
        self.E, self.F, self.G = E, F, G

    def drift(self):
        V = np.zeros((self.grid.d, self.grid.n_nodes))
        if self.weighted:
            for t in self.terms:
                V += t.weight * (t.H / t.Q) * t.grad
        return DriftField(V.reshape((self.grid.d,) + self.grid.shape))

    # action --------------------------------------------------------------

    def apply(self, w):
        """Operator applied to a perturbation ``w`` (array or GridFunction on the same grid)."""
        g, rule = self.grid, self.rule
        wv = np.asarray(getattr(w, "values", w), dtype=float).reshape(g.shape)
        src = Sampled(g, rule, self.spec, wv, perturbation=True)
        wf = src.values
        units = row_blocks(rule)

        def block(idx):
            acc = np.zeros(g.n_nodes)
            for i in idx:
                k, qs = units[i]
                wq = (rule.omega[k] * rule.weight[qs])[:, None]
                for sign in (1.0, -1.0):
                    diff = wf[None, :] - src.rows(qs, sign * rule.theta[k])
                    acc += np.sum(wq * self.coeff(qs, k, sign) * diff, axis=0)
            return acc

        out = blocked_sum(len(units), block, self.workers, size=1)
        grad = gradient(g, wv, perturbation=True).reshape(g.d, -1)
        hess = hessian(g, wv, perturbation=True).reshape(g.d, g.d, -1)
        out = out + np.einsum("ijn,ijn->n", self.E, hess) + np.einsum("in,in->n", self.F, grad)
        out = out + self.G * (wf - src.far.at(np.zeros(g.d)))
        return out.reshape(g.shape)

    # matrix --------------------------------------------------------------

    def matrix(self, cap=MATRIX_CAP):
        g, rule = self.grid, self.rule
        n = g.n_nodes
        if n > cap:
            raise ValueError(f"{n} nodes exceed the dense matrix cap {cap}")
        src = Sampled(g, rule, self.spec, np.zeros(g.shape), perturbation=True)
        rows = np.arange(n)
        units = row_blocks(rule)

        def block(idx):
            flat = np.zeros(n * n)
            diag = np.zeros(n)
            mean_row = np.zeros(n)
            for i in idx:
                k, qs = units[i]
                for sign in (1.0, -1.0):
                    cs = (rule.omega[k] * rule.weight[qs])[:, None] * self.coeff(qs, k, sign)
                    for j, q in enumerate(qs):
                        c = cs[j]
                        diag += c
                        if rule.data[q]:
                            off = sign * rule.r[q] * rule.theta[k]
                            for wt, cols, valid in src.sampler.columns(off):
                                flat += np.bincount(rows[valid] * n + cols[valid], weights=-wt * c[valid], minlength=n * n)
                        elif g.periodic:
                            mean_row += c
            flat[rows * n + rows] += diag
            if g.periodic:
                flat -= np.repeat(mean_row / n, n)
            return flat

        M = blocked_sum(len(units), block, self.workers, size=1).reshape(n, n)
        M += local_matrix(g, self.E, self.F)
        M[rows, rows] += self.G
        if g.periodic:
            M -= self.G[:, None] / n
        if not np.all(np.isfinite(M)):
            raise ValueError("non-finite matrix entries")
        return LinearOperatorMatrix(M, self.order, self.spec, {"operator": self.label, "n": n, "terms": len(self.terms)})


def _neighbour(g, offs):
    """Column index of node ``i + offs`` and a validity mask (ghosts of perturbations are zero)."""
    idx = np.indices(g.shape).reshape(g.d, -1) + np.asarray(offs)[:, None]
    n = np.asarray(g.shape)[:, None]
    if g.periodic:
        return np.ravel_multi_index(tuple(np.mod(idx, n)), g.shape), np.ones(idx.shape[1], dtype=bool)
    valid = np.all((idx >= 0) & (idx < n), axis=0)
    return np.ravel_multi_index(tuple(np.clip(idx, 0, n - 1)), g.shape), valid


def local_matrix(g, E, F):
    """Matrix of ``E : D^2 w + F . grad w`` with the central stencils of the grid module."""
    d, n, h = g.d, g.n_nodes, g.h
    rows = np.arange(n)
    terms = []
    for a in range(d):
        e = [0] * d
        e[a] = 1
        m = [-v for v in e]
        terms += [(F[a] / (2 * h), e), (-F[a] / (2 * h), m)]
        terms += [(E[a, a] / h**2, e), (-2 * E[a, a] / h**2, [0] * d), (E[a, a] / h**2, m)]
        for b in range(a + 1, d):
            cab = (E[a, b] + E[b, a]) / (4 * h * h)
            pp = [0] * d
            pp[a], pp[b] = 1, 1
            pm = [0] * d
            pm[a], pm[b] = 1, -1
            terms += [(cab, pp), (-cab, pm), (-cab, [-v for v in pm]), (cab, [-v for v in pp])]
    flat = np.zeros(n * n)
    for coef, offs in terms:
        cols, valid = _neighbour(g, offs)
        flat += np.bincount(rows[valid] * n + cols[valid], weights=coef[valid], minlength=n * n)
    return flat.reshape(n, n)


@dataclass
class LinearOperatorMatrix:
    M: np.ndarray
    order: object
    spec: QuadratureSpec
    meta: dict = field(default_factory=dict)
    _lu: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.M.shape[0]

    def __matmul__(self, w):
        return self.M @ np.asarray(w, dtype=float).ravel()

    def pinned(self, mask):
        """Copy with the rows and columns of ``mask`` nodes zeroed (held fixed)."""
        M = self.M.copy()
        idx = np.flatnonzero(np.asarray(mask).ravel())
        M[idx, :] = 0.0
        M[:, idx] = 0.0
        return LinearOperatorMatrix(M, self.order, self.spec, dict(self.meta, pinned=int(len(idx))))

    def factor(self, dt):
        """Cached LU of ``I + dt M``; raises on (near) singular factors."""
        import scipy.linalg as sla

        key = float(dt)
        if key not in self._lu:
            A = np.eye(self.n) + dt * self.M
            lu, piv = sla.lu_factor(A, check_finite=True)
            anorm = np.linalg.norm(A, 1)
            rcond, info = sla.lapack.dgecon(lu, anorm, norm="1")
            if info != 0 or not rcond > 1e-14:
                raise np.linalg.LinAlgError(f"ill-conditioned implicit system (1-norm condition ~ {1.0 / max(rcond, 1e-300):.3g})")
            self._lu[key] = (lu, piv, A, rcond)
        return self._lu[key]

    def solve(self, dt, rhs):
        import scipy.linalg as sla

        lu, piv, A, _ = self.factor(dt)
        rhs = np.asarray(rhs, dtype=float).ravel()
        x = sla.lu_solve((lu, piv), rhs)
        scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
        res = np.linalg.norm(A @ x - rhs) / scale
        if res > 1e-10 and np.linalg.norm(rhs) > 0:
            x = x + sla.lu_solve((lu, piv), rhs - A @ x)
            res = np.linalg.norm(A @ x - rhs) / scale
            if res > 1e-10:
                raise np.linalg.LinAlgError(f"implicit solve residual {res:.3g} exceeds 1e-10")
        return x

    def dump(self, path, base=None):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        np.ascontiguousarray(self.M, dtype="<f8").tofile(str(path.with_suffix(".bin")))
        meta = {"n": self.n, "base": base or self.meta}
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


# public constructors -------------------------------------------------------


def _term(z, weight=1.0):
    return Term(
        weight=weight,
        z=z,
        Q=weight_Q(z).ravel(),
        grad=gradient(z).reshape(z.d, -1),
        hess=hessian(z).reshape(z.d, z.d, -1),
    )


def linearization(u0, order, spec=None, weighted=True, workers=None):
    return KernelOperator([_term(u0)], order, spec, weighted, "DQH(u0)" if weighted else "DH(u0)", workers)


def apply_DH(u0, w, order, spec=None, workers=None):
    """``DH(u0)[w]`` as a node array."""
    _same_grid(u0, w, extension=False)
    return linearization(u0, order, spec, weighted=False, workers=workers).apply(w)


def apply_weighted_DH(u0, w, order, spec=None, workers=None):
    """``D(QH)(u0)[w] = Q(u0) DH(u0)[w] + H(u0) grad u0 . grad w / Q(u0)``."""
    _same_grid(u0, w, extension=False)
    return linearization(u0, order, spec, weighted=True, workers=workers).apply(w)


class BOperator(KernelOperator):
    """``B[w, v] = int_I D(QH)(rho w + (1 - rho) v) d rho`` with 8-node Gauss-Legendre in ``rho``."""

    def __init__(self, w, v, order, spec=None, interval=(0.0, 1.0), nodes=8, workers=None):
        _same_grid(w, v)
        x, gw = np.polynomial.legendre.leggauss(nodes)
        lo, hi = interval
        rhos = lo + 0.5 * (hi - lo) * (x + 1.0)
        gws = 0.5 * (hi - lo) * gw
        self.w, self.v, self.rhos = w, v, rhos
        terms = []
        for rho, g in zip(rhos, gws):
            vals = rho * w.values + (1.0 - rho) * v.values
            slope = None
            if w.slope is not None:
                slope = tuple(rho * np.asarray(w.slope) + (1.0 - rho) * np.asarray(v.slope))
            z = w.with_values(vals) if slope is None else type(w)(vals, w.h, w.origin, w.extension, slope, rho * w.offset + (1 - rho) * v.offset)
            terms.append(_term(z, g))
        super().__init__(terms, order, spec, True, f"B[w,v] on [{lo}, {hi}]", workers)

    def mu(self, x, r, theta):
        """Kernel coefficient ``mu(x, r, theta)`` at arbitrary points (off-grid by interpolation)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.grid.d == 1 and x.shape[0] == 1 and x.shape[1] != 1:
            x = x.T
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        out = np.zeros(x.shape[0])
        for t in self.terms:
            if r == 0:
                grads = np.array([gradient_at(t.z, xi) for xi in x])
                p = grads @ theta
            else:
                p = (value_at(t.z, x + r * theta) - value_at(t.z, x)) / r
            q = np.sqrt(1.0 + np.sum(np.array([gradient_at(t.z, xi) for xi in x]) ** 2, axis=1))
            out += t.weight * q * (-cal_g_prime(p, self.order))
        return out


def build_B(w, v, order, spec=None, interval=(0.0, 1.0), workers=None):
    """Averaged operator ``B[w, v]``: returns ``(mu closure, DriftField V, operator)``."""
    op = BOperator(w, v, order, spec, interval, workers=workers)
    return op.mu, op.drift(), op


def assemble_matrix(base, order=None, spec=None, workers=None, cap=MATRIX_CAP):
    """Dense matrix of an operator: ``base`` is a :class:`KernelOperator` or a grid function ``u0``."""
    if isinstance(base, KernelOperator):
        op = base
    else:
        if base.n_nodes > cap:
            raise ValueError(f"{base.n_nodes} nodes exceed the dense matrix cap {cap}")
        op = linearization(base, order, spec, weighted=True, workers=workers)
    return op.matrix(cap)
