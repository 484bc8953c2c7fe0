"""Sampled graph functions on uniform grids.

A :class:`GridFunction` stores node values of ``u`` on a uniform grid together
with a far-field extension policy that defines ``u`` on all of ``R^d``:

``periodic``
    the box ``[origin, origin + n h)`` tiles space.
``compact-support``
    ``u = 0`` outside the box ``[origin, origin + (n-1) h]``; the outermost
    node layer must already be zero.
``affine-far-field``
    ``u = a . x + b`` outside the box; the outermost layer must match it.
"""
from dataclasses import dataclass, field
import json
import math
from pathlib import Path
from typing import Callable, Optional

import numpy as np

EXTENSIONS = ("periodic", "compact-support", "affine-far-field")


@dataclass(frozen=True, eq=False)
class GridFunction:
    values: np.ndarray
    h: float
    origin: tuple
    extension: str = "compact-support"
    slope: Optional[tuple] = None
    offset: float = 0.0
    source: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float, copy=True)
        if vals.ndim not in (1, 2):
            raise ValueError("only d = 1 or d = 2 grids are supported")
        if self.h <= 0:
            raise ValueError("spacing must be positive")
        if self.extension not in EXTENSIONS:
            raise ValueError(f"unknown extension {self.extension!r}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("grid values must be finite")
        if min(vals.shape) < 3:
            raise ValueError("need at least 3 nodes per axis")
        origin = tuple(float(o) for o in np.atleast_1d(self.origin))
        if len(origin) != vals.ndim:
            raise ValueError("origin dimension does not match values")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "h", float(self.h))
        if self.extension == "affine-far-field":
            a = tuple(float(v) for v in np.atleast_1d(self.slope if self.slope is not None else 0.0))
            if len(a) != vals.ndim:
                raise ValueError("affine slope dimension does not match values")
            object.__setattr__(self, "slope", a)
            object.__setattr__(self, "offset", float(self.offset))
        else:
            object.__setattr__(self, "slope", None)
            object.__setattr__(self, "offset", 0.0)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "_cache", {})
        self._check_boundary_layer()

    def _check_boundary_layer(self):
        if self.extension == "periodic":
            return
        mask = self.boundary_mask()
        if self.extension == "compact-support":
            bad = np.max(np.abs(self.values[mask]))
            if bad > 1e-12:
                raise ValueError(f"compact-support boundary layer not zero (max {bad:.3g})")
        else:
            far = self.far_field(self.points())[mask.ravel()]
            bad = np.max(np.abs(self.values[mask] - far))
            if bad > 1e-8:
                raise ValueError(f"affine boundary layer mismatch (max {bad:.3g})")

    # geometry -------------------------------------------------------------

    @property
    def d(self):
        return self.values.ndim

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_nodes(self):
        return self.values.size

    @property
    def periodic(self):
        return self.extension == "periodic"

    def axes(self):
        return [self.origin[k] + self.h * np.arange(n) for k, n in enumerate(self.shape)]

    def points(self):
        """Node coordinates as an ``(n_nodes, d)`` array in row-major order."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def extent(self):
        """Per-axis box length: period for periodic grids, ``(n-1) h`` otherwise."""
        if self.periodic:
            return np.array(self.shape, dtype=float) * self.h
        return (np.array(self.shape, dtype=float) - 1.0) * self.h

    def diameter(self):
        return float(np.linalg.norm(self.extent()))

    def boundary_mask(self):
        mask = np.zeros(self.shape, dtype=bool)
        if self.periodic:
            return mask
        for ax in range(self.d):
            idx = [slice(None)] * self.d
            idx[ax] = 0
            mask[tuple(idx)] = True
            idx[ax] = -1
            mask[tuple(idx)] = True
        return mask

    def far_field(self, pts, values=None):
        """Far-field model at points: affine map, zero, or the periodic mean."""
        pts = np.asarray(pts, dtype=float)
        npts = pts.shape[0] if pts.ndim > 1 else 1
        if self.extension == "affine-far-field":
            return pts.reshape(npts, self.d) @ np.asarray(self.slope) + self.offset
        if self.extension == "compact-support":
            return np.zeros(npts)
        vals = self.values if values is None else values
        return np.full(npts, float(np.mean(vals)))

    def with_values(self, values, source=None):
        return GridFunction(values, self.h, self.origin, self.extension, self.slope, self.offset, source)

    def padded(self, pad, values=None, perturbation=False):
        """Values padded by ``pad`` ghost nodes per side, ghosts filled by the extension.

        With ``perturbation=True`` the ghosts of non-periodic grids are zero (the
        extension of a perturbation that keeps the far field fixed).
        """
        vals = self.values if values is None else np.asarray(values, dtype=float).reshape(self.shape)
        pads = [(pad, pad)] * self.d
        if self.periodic:
            return np.pad(vals, pads, mode="wrap")
        out = np.pad(vals, pads, mode="constant")
        if self.extension == "affine-far-field" and not perturbation:
            axes = [self.origin[k] + self.h * np.arange(-pad, n + pad) for k, n in enumerate(self.shape)]
            grids = np.meshgrid(*axes, indexing="ij")
            lin = sum(a * g for a, g in zip(self.slope, grids)) + self.offset
            inner = tuple(slice(pad, pad + n) for n in self.shape)
            lin[inner] = vals
            out = lin
        return out


def sample(expr, shape, h, origin, extension="compact-support", slope=None, offset=0.0):
    """Sample ``expr`` (callable on an ``(m, d)`` point array) at the grid nodes."""
    shape = tuple(int(n) for n in np.atleast_1d(shape))
    origin = tuple(float(o) for o in np.atleast_1d(origin))
    g0 = GridFunction(np.zeros(shape), h, origin, "periodic")
    pts = g0.points()
    vals = np.asarray(expr(pts), dtype=float).reshape(shape)
    if not np.all(np.isfinite(vals)):
        raise ValueError("expression produced non-finite samples")
    return GridFunction(vals, h, origin, extension, slope, offset, source=expr)


def _as_points(g, x):
    x = np.asarray(x, dtype=float)
    if g.d == 1 and x.ndim <= 1:
        return x.reshape(-1, 1), x.shape
    return x.reshape(-1, g.d), x.shape[:-1]


def _multilinear(vals, origin, h, pts, periodic):
    s = (pts - np.asarray(origin)) / h
    n = np.asarray(vals.shape)
    if periodic:
        base = np.floor(s)
        t = s - base
        base = base.astype(np.int64)
    else:
        base = np.clip(np.floor(s), 0, n - 2).astype(np.int64)
        t = s - base
    out = np.zeros(len(pts))
    for corner in np.ndindex(*([2] * vals.ndim)):
        w = np.ones(len(pts))
        idx = []
        for ax, c in enumerate(corner):
            w = w * (t[:, ax] if c else 1.0 - t[:, ax])
            i = base[:, ax] + c
            idx.append(np.mod(i, n[ax]) if periodic else np.minimum(i, n[ax] - 1))
        out += w * vals[tuple(idx)]
    return out


def _inside_box(g, pts):
    s = (pts - np.asarray(g.origin)) / g.h
    return np.all((s >= 0) & (s <= np.asarray(g.shape) - 1), axis=1)


def value_at(g, x):
    """Evaluate ``g`` anywhere: multilinear inside the box, extension outside."""
    pts, out_shape = _as_points(g, x)
    out = _multilinear(g.values, g.origin, g.h, pts, g.periodic)
    if not g.periodic:
        out = np.where(_inside_box(g, pts), out, g.far_field(pts))
    if out_shape == ():
        return float(out[0])
    return out.reshape(out_shape)


def gradient(g, values=None, perturbation=False):
    """Central-difference gradient, shape ``(d,) + g.shape``; ghosts from the extension."""
    ext = g.padded(1, values, perturbation)
    out = np.empty((g.d,) + g.shape)
    for ax in range(g.d):
        hi = [slice(1, -1)] * g.d
        lo = [slice(1, -1)] * g.d
        hi[ax] = slice(2, None)
        lo[ax] = slice(0, -2)
        out[ax] = (ext[tuple(hi)] - ext[tuple(lo)]) / (2.0 * g.h)
    return out


def hessian(g, values=None, perturbation=False):
    """Central second differences, shape ``(d, d) + g.shape``."""
    ext = g.padded(1, values, perturbation)
    d = g.d
    h2 = g.h * g.h
    out = np.empty((d, d) + g.shape)

    def shifted(offs):
        return ext[tuple(slice(1 + o, ext.shape[k] - 1 + o) for k, o in enumerate(offs))]

    center = shifted([0] * d)
    for a in range(d):
        e = [0] * d
        e[a] = 1
        m = [-v for v in e]
        out[a, a] = (shifted(e) - 2.0 * center + shifted(m)) / h2
        for b in range(a + 1, d):
            pp = [0] * d
            pp[a], pp[b] = 1, 1
            pm = [0] * d
            pm[a], pm[b] = 1, -1
            mp = [-v for v in pm]
            mm = [-v for v in pp]
            mixed = (shifted(pp) - shifted(pm) - shifted(mp) + shifted(mm)) / (4.0 * h2)
            out[a, b] = mixed
            out[b, a] = mixed
    return out


def gradient_at(g, x):
    """Discrete gradient at a point: interpolated inside the box, far-field slope outside."""
    pts = np.atleast_1d(np.asarray(x, dtype=float)).reshape(1, g.d)
    if not g.periodic and not _inside_box(g, pts)[0]:
        return np.asarray(g.slope if g.slope is not None else np.zeros(g.d), dtype=float)
    return np.array([_multilinear(c, g.origin, g.h, pts, g.periodic)[0] for c in gradient(g)])


def sup_norm(g):
    return float(np.max(np.abs(g.values)))


def lip_norm(g, values=None):
    """Max over axes of ``|u(x + h e) - u(x)| / h`` over neighbouring node pairs."""
    vals = g.values if values is None else np.asarray(values).reshape(g.shape)
    best = 0.0
    for ax in range(g.d):
        if g.periodic:
            diff = np.roll(vals, -1, axis=ax) - vals
        else:
            diff = np.diff(vals, axis=ax)
        best = max(best, float(np.max(np.abs(diff))) / g.h)
    return best


def _lag_offsets(d, max_lag):
    offs = []
    for m in (np.array(v) for v in np.ndindex(*([2 * max_lag + 1] * d))):
        m = m - max_lag
        nz = np.nonzero(m)[0]
        if len(nz) == 0 or m[nz[0]] < 0:
            continue
        if np.dot(m, m) > max_lag * max_lag:
            continue
        offs.append(tuple(int(v) for v in m))
    return offs


def holder_array(values, h, gamma, max_lag, periodic):
    """Lagged Hölder quotient max of a node array (exponent in (0, 1))."""
    values = np.asarray(values, dtype=float)
    d = values.ndim
    best = 0.0
    for m in _lag_offsets(d, max_lag):
        dist = h * math.sqrt(sum(v * v for v in m))
        if periodic:
            shifted = values
            for ax, v in enumerate(m):
                shifted = np.roll(shifted, -v, axis=ax)
            diff = shifted - values
        else:
            a = tuple(slice(max(v, 0), values.shape[k] + min(v, 0)) for k, v in enumerate(m))
            b = tuple(slice(max(-v, 0), values.shape[k] + min(-v, 0)) for k, v in enumerate(m))
            if any(s.stop - s.start <= 0 for s in a):
                continue
            diff = values[a] - values[b]
        best = max(best, float(np.max(np.abs(diff))) / dist ** gamma)
    return best


def holder_seminorm(g, gamma, max_lag=8):
    """Discrete ``C^gamma`` seminorm as a lagged max over node pairs.

    For ``1 < gamma < 2`` the ``C^{gamma-1}`` seminorm of the gradient components
    is returned (largest over components).
    """
    if not (0.0 < gamma < 2.0) or gamma == 1.0:
        raise ValueError("gamma must lie in (0, 1) or (1, 2)")
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if gamma < 1.0:
        return holder_array(g.values, g.h, gamma, max_lag, g.periodic)
    comps = gradient(g)
    return max(holder_array(c, g.h, gamma - 1.0, max_lag, g.periodic) for c in comps)


# shifted sampling ---------------------------------------------------------


def _interp_weights(t, order):
    """1-D interpolation taps (integer offset, weight) for fractional position t in [0, 1)."""
    if order == 1:
        taps = [(0, 1.0 - t), (1, t)]
    elif order == 3:
        taps = [
            (-1, -t * (t - 1.0) * (t - 2.0) / 6.0),
            (0, (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0),
            (1, -(t + 1.0) * t * (t - 2.0) / 2.0),
            (2, (t + 1.0) * t * (t - 1.0) / 6.0),
        ]
    else:
        raise ValueError("interpolation order must be 1 or 3")
    return [(o, w) for o, w in taps if w != 0.0]


class ShiftSampler:
    """Evaluate a grid function at every node shifted by a common offset vector.

    Because the grid is uniform, all nodes share the same fractional position
    relative to the lattice, so interpolation is a weighted sum of shifted copies
    of the (extension-padded) value array.  ``reach`` is the largest offset
    length that will be requested on non-periodic grids.
    """

    def __init__(self, g, values=None, order=3, reach=None, perturbation=False):
        self.g = g
        self.order = order
        self.perturbation = perturbation
        self.n = np.asarray(g.shape)
        if g.periodic:
            self.pad = int(np.max(self.n)) + 4
        else:
            reach = g.diameter() if reach is None else reach
            self.pad = int(math.ceil(reach / g.h)) + 4
        self.values = g.values if values is None else np.asarray(values, dtype=float).reshape(g.shape)
        self.ext = g.padded(self.pad, self.values, perturbation)

    def taps(self, offset):
        s = np.asarray(offset, dtype=float) / self.g.h
        base = np.floor(s)
        t = s - base
        per_axis = [_interp_weights(float(t[k]), self.order) for k in range(self.g.d)]
        out = []
        for combo in np.ndindex(*[len(p) for p in per_axis]):
            w = 1.0
            shift = []
            for ax, j in enumerate(combo):
                o, wt = per_axis[ax][j]
                w *= wt
                shift.append(int(base[ax]) + o)
            out.append((w, tuple(shift)))
        return out

    def _start(self, ax, shift):
        if self.g.periodic:
            return self.pad + shift % int(self.n[ax])
        start = self.pad + shift
        if start < 0 or start + self.n[ax] > self.ext.shape[ax]:
            raise ValueError("offset exceeds the sampler reach")
        return start

    def sample(self, offset):
        out = None
        for w, shift in self.taps(offset):
            sl = tuple(slice(self._start(ax, m), self._start(ax, m) + int(self.n[ax])) for ax, m in enumerate(shift))
            term = w * self.ext[sl]
            out = term if out is None else out + term
        return out

    def sample_many(self, offsets):
        """``sample`` for a stack of offsets, shape ``(m, d) -> (m, n_nodes)``."""
        offsets = np.asarray(offsets, dtype=float).reshape(-1, self.g.d)
        m = offsets.shape[0]
        s = offsets / self.g.h
        base = np.floor(s)
        t = s - base
        base = base.astype(np.int64)
        if self.order == 1:
            shifts = (0, 1)
            wts = [np.stack([1.0 - t[:, ax], t[:, ax]], axis=1) for ax in range(self.g.d)]
        else:
            shifts = (-1, 0, 1, 2)
            wts = []
            for ax in range(self.g.d):
                x = t[:, ax]
                wts.append(np.stack([
                    -x * (x - 1.0) * (x - 2.0) / 6.0,
                    (x + 1.0) * (x - 1.0) * (x - 2.0) / 2.0,
                    -(x + 1.0) * x * (x - 2.0) / 2.0,
                    (x + 1.0) * x * (x - 1.0) / 6.0,
                ], axis=1))
        starts = []
        for ax in range(self.g.d):
            n = int(self.n[ax])
            st = base[:, ax][:, None] + np.asarray(shifts)[None, :]
            if self.g.periodic:
                st = self.pad + np.mod(st, n)
            else:
                st = self.pad + st
                if np.any(st < 0) or np.any(st + n > self.ext.shape[ax]):
                    raise ValueError("offset exceeds the sampler reach")
            starts.append(st)
        out = np.zeros((m, self.g.n_nodes))
        ar = [np.arange(int(n)) for n in self.n]
        for combo in np.ndindex(*([len(shifts)] * self.g.d)):
            w = np.ones(m)
            for ax, j in enumerate(combo):
                w = w * wts[ax][:, j]
            if self.g.d == 1:
                vals = self.ext[starts[0][:, combo[0]][:, None] + ar[0][None, :]]
            else:
                i0 = starts[0][:, combo[0]][:, None] + ar[0][None, :]
                i1 = starts[1][:, combo[1]][:, None] + ar[1][None, :]
                vals = self.ext[i0[:, :, None], i1[:, None, :]].reshape(m, -1)
            out += w[:, None] * vals
        return out

    def columns(self, offset):
        """Per-tap ``(weight, column index array, valid mask)`` for matrix assembly."""
        idx = np.indices(self.g.shape).reshape(self.g.d, -1)
        out = []
        for w, shift in self.taps(offset):
            tgt = idx + np.asarray(shift)[:, None]
            if self.g.periodic:
                tgt = np.mod(tgt, self.n[:, None])
                valid = np.ones(tgt.shape[1], dtype=bool)
            else:
                valid = np.all((tgt >= 0) & (tgt < self.n[:, None]), axis=0)
                tgt = np.clip(tgt, 0, self.n[:, None] - 1)
            cols = np.ravel_multi_index(tuple(tgt), self.g.shape)
            out.append((w, cols, valid))
        return out


# snapshots ----------------------------------------------------------------


def snapshot_meta(g):
    meta = {
        "d": g.d,
        "h": g.h,
        "origin": list(g.origin),
        "shape": list(g.shape),
        "extension": g.extension,
    }
    if g.extension == "affine-far-field":
        meta["affine"] = {"a": list(g.slope), "b": g.offset}
    return meta


def write_snapshot(g, path, extra=None):
    """Write ``<path>.bin`` (little-endian float64, row-major) and ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(g.values, dtype="<f8").tofile(str(path.with_suffix(".bin")))
    meta = snapshot_meta(g)
    if extra:
        meta.update(extra)
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path.with_suffix(".bin"), path.with_suffix(".json")


def read_snapshot(path):
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    shape = tuple(meta["shape"])
    vals = np.fromfile(str(path.with_suffix(".bin")), dtype="<f8")
    if vals.size != int(np.prod(shape)):
        raise ValueError("snapshot size does not match its sidecar")
    aff = meta.get("affine", {})
    return GridFunction(
        vals.reshape(shape),
        meta["h"],
        tuple(meta["origin"]),
        meta["extension"],
        aff.get("a"),
        aff.get("b", 0.0),
    )


def write_csv(g, path, values=None, header="value"):
    """One node per row: coordinates then value(s)."""
    vals = g.values if values is None else np.asarray(values)
    cols = [g.points()]
    vals = vals.reshape(g.n_nodes, -1)
    cols.append(vals)
    data = np.hstack(cols)
    names = ["x", "y"][: g.d] + (header.split(",") if isinstance(header, str) else list(header))
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for row in data:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
