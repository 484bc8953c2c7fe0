"""Time integration of ``d_t u = -Q(u) H(u)``.

Two schemes:

``explicit``  ``u+ = u - dt QH(u)``
``imex``      ``(I + dt L0) u+ = u + dt (L0 u - QH(u))`` with ``L0 = D(QH)(u0)`` frozen at
              the initial state (optionally re-frozen every ``relinearize_every`` steps).
              Solved in increment form ``(I + dt L0)(u+ - u) = -dt QH(u)`` so that
              stationary states are reproduced to rounding.

On non-periodic grids the outermost node layer is held fixed: it carries the
far-field condition of the extension policy.
"""
import csv
from dataclasses import dataclass, field, asdict
import io
import json
import math

import numpy as np

from .curvature import QuadratureSpec, build_rule, evaluate_weighted_H
from .grid import gradient, holder_array, lip_norm, sup_norm
from .linearized import assemble_matrix


class FlowAbort(RuntimeError):
    """Blow-up guard or solver failure; ``trace`` holds the samples recorded so far."""

    def __init__(self, message, trace=None, state=None):
        super().__init__(message)
        self.trace = trace
        self.state = state


@dataclass
class FlowConfig:
    order: object
    scheme: str = "imex"
    dt: float = None
    cfl_factor: float = None
    T: float = 1.0
    spec: QuadratureSpec = field(default_factory=QuadratureSpec)
    monitor_every: int = 1
    relinearize_every: int = 0
    holder: tuple = ()  # pairs (k, beta'): C^{k + beta'} seminorm of grad u
    max_lag: int = 8
    snapshot_times: tuple = ()
    workers: int = None

    def __post_init__(self):
        if self.scheme not in ("explicit", "imex"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.cfl_factor is not None and not (0.0 < self.cfl_factor <= 1.0):
            raise ValueError("cfl_factor must lie in (0, 1]")
        if self.monitor_every < 1:
            raise ValueError("monitor_every must be >= 1")
        if self.relinearize_every < 0:
            raise ValueError("relinearize_every must be >= 0")
        self.holder = tuple((int(k), float(b)) for k, b in self.holder)
        for k, b in self.holder:
            if k < 0 or not (0.0 < b < 1.0):
                raise ValueError("holder monitors need k >= 0 and beta' in (0, 1)")

    def resolve(self, h):
        """``(dt, n_steps)`` with ``n_steps dt = T`` exactly."""
        if self.dt is not None:
            dt = self.dt
        else:
            cfl = self.cfl_factor if self.cfl_factor is not None else (1.0 if self.scheme == "imex" else 0.02)
            dt = cfl * h ** (1.0 + self.order.alpha)
        steps = max(1, int(math.ceil(self.T / dt - 1e-9)))
        return self.T / steps, steps

    def echo(self):
        out = {k: v for k, v in asdict(self).items() if k not in ("order", "spec", "workers")}
        out["alpha"] = self.order.alpha
        out["ambient_dim"] = self.order.ambient_dim
        out["spec"] = asdict(self.spec)
        out["holder"] = [list(p) for p in self.holder]
        out["snapshot_times"] = list(self.snapshot_times)
        return out


@dataclass
class FlowTrace:
    times: list = field(default_factory=list)
    sup_norm: list = field(default_factory=list)
    lip_norm: list = field(default_factory=list)
    sup_dtu: list = field(default_factory=list)
    max_dtu: list = field(default_factory=list)
    min_dtu: list = field(default_factory=list)
    holder: dict = field(default_factory=dict)
    tail: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def record(self, t, u, QH, tail, holders):
        if self.times and not t > self.times[-1]:
            raise ValueError("trace times must increase")
        vals = [sup_norm(u), lip_norm(u), float(np.max(np.abs(QH))), float(np.max(-QH)), float(np.min(-QH)), tail]
        vals += list(holders.values())
        if not all(np.isfinite(vals)):
            raise FloatingPointError("non-finite monitor value")
        self.times.append(float(t))
        self.sup_norm.append(vals[0])
        self.lip_norm.append(vals[1])
        self.sup_dtu.append(vals[2])
        self.max_dtu.append(vals[3])
        self.min_dtu.append(vals[4])
        self.tail.append(vals[5])
        for key, v in holders.items():
            self.holder.setdefault(key, []).append(float(v))

    def __len__(self):
        return len(self.times)

    def columns(self):
        cols = {
            "t": self.times,
            "sup_norm": self.sup_norm,
            "lip_norm": self.lip_norm,
            "sup_dtu": self.sup_dtu,
            "max_dtu": self.max_dtu,
            "min_dtu": self.min_dtu,
        }
        for key in sorted(self.holder):
            cols[key] = self.holder[key]
        cols["tail"] = self.tail
        return cols

    def to_csv(self, path=None):
        """CSV text (floats in shortest round-trip form); also written to ``path`` if given."""
        cols = self.columns()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(list(cols))
        for row in zip(*cols.values()):
            w.writerow([repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], [[float(v) for v in r] for r in rows[1:]]
        data = {k: [r[i] for r in body] for i, k in enumerate(head)}
        tr = cls(
            times=data["t"],
            sup_norm=data["sup_norm"],
            lip_norm=data["lip_norm"],
            sup_dtu=data["sup_dtu"],
            max_dtu=data["max_dtu"],
            min_dtu=data["min_dtu"],
            tail=data["tail"],
        )
        tr.holder = {k: v for k, v in data.items() if k.startswith("holder_")}
        return tr


def holder_key(k, beta):
    return f"holder_k{k}_b{beta:g}"


def derivative_holder(u, k, beta, max_lag=8):
    """Discrete ``C^{k + beta}`` seminorm of ``grad u``: max over order-``k+1`` partials of their ``C^beta`` quotient.

    Partials beyond the gradient are nested central differences; on non-periodic
    grids ``k + 1`` node layers are trimmed from each side before taking quotients.
    """
    comps = [c for c in gradient(u)]
    for _ in range(k):
        nxt = []
        for c in comps:
            for ax in range(u.d):
                if u.periodic:
                    nxt.append((np.roll(c, -1, axis=ax) - np.roll(c, 1, axis=ax)) / (2 * u.h))
                else:
                    nxt.append(np.gradient(c, u.h, axis=ax))
        comps = nxt
    if not u.periodic:
        trim = tuple(slice(k + 1, n - k - 1) for n in u.shape)
        comps = [c[trim] for c in comps]
    return max(holder_array(c, u.h, beta, max_lag, u.periodic) for c in comps)


def _guard(u_new, sup0):
    if not np.all(np.isfinite(u_new)):
        return "non-finite state"
    if float(np.max(np.abs(u_new))) > 10.0 * (sup0 + 1.0):
        return "blow-up guard: sup |u| exceeded 10 (sup |u0| + 1)"
    return None


def _pin(g, update):
    if not g.periodic:
        update = update.copy()
        update[g.boundary_mask()] = 0.0
    return update


def step_explicit(u, cfg, QH=None, rule=None):
    """``u - dt QH(u)`` (boundary layer fixed on non-periodic grids)."""
    dt, _ = cfg.resolve(u.h)
    if QH is None:
        QH = evaluate_weighted_H(u, cfg.order, cfg.spec, cfg.workers, rule=rule).values
    new = u.values + _pin(u, -dt * QH)
    msg = _guard(new, sup_norm(u))
    if msg:
        raise FlowAbort(msg)
    return u.with_values(new)


def imex_operator(u0, cfg):
    L0 = assemble_matrix(u0, cfg.order, cfg.spec, cfg.workers)
    if not u0.periodic:
        L0 = L0.pinned(u0.boundary_mask())
    return L0


def step_imex(u, u0, L0, cfg, QH=None, rule=None):
    """Solve ``(I + dt L0)(u+ - u) = -dt QH(u)``; ``u0`` is the state ``L0`` was built at."""
    if L0.n != u.n_nodes or u0.n_nodes != u.n_nodes:
        raise ValueError("L0 was assembled for a different grid")
    dt, _ = cfg.resolve(u.h)
    if QH is None:
        QH = evaluate_weighted_H(u, cfg.order, cfg.spec, cfg.workers, rule=rule).values
    rhs = _pin(u, -dt * QH).ravel()
    delta = L0.solve(dt, rhs).reshape(u.shape)
    new = u.values + _pin(u, delta)
    msg = _guard(new, sup_norm(u))
    if msg:
        raise FlowAbort(msg)
    return u.with_values(new)


def run_flow(u0, cfg, on_snapshot=None, on_monitor=None):
    """Integrate to ``T``; returns ``(final, trace, snapshots)`` with snapshots a list of ``(t, state)``.

    ``on_monitor(t, state, QH)`` is called at every monitored time.
    """
    dt, steps = cfg.resolve(u0.h)
    spec = cfg.spec
    rule = build_rule(u0, cfg.order, spec)
    trace = FlowTrace()
    trace.meta = {
        "scheme": cfg.scheme,
        "dt": dt,
        "steps": steps,
        "relinearized": cfg.relinearize_every > 0,
        "n_nodes": u0.n_nodes,
        "h": u0.h,
    }
    sup0 = sup_norm(u0)
    snaps = []
    pending = sorted(float(t) for t in cfg.snapshot_times)
    # the near-field check only at t = 0: the flow itself cannot lower regularity
    eval_spec = spec.replace(check_regularity=False)
    if spec.check_regularity:
        from .curvature import check_near_field

        check_near_field(u0, cfg.order)

    def qh(state):
        return evaluate_weighted_H(state, cfg.order, eval_spec, cfg.workers, rule=rule)

    def monitor(t, state, field_):
        holders = {holder_key(k, b): derivative_holder(state, k, b, cfg.max_lag) for k, b in cfg.holder}
        # d_t u as the scheme moves it: zero on the pinned boundary layer
        trace.record(t, state, _pin(state, field_.values), field_.tail_estimate, holders)
        if on_monitor:
            on_monitor(t, state, field_.values)

    def snapshot(t, state):
        while pending and t >= pending[0] - 0.5 * dt:
            pending.pop(0)
            snaps.append((t, state))
            if on_snapshot:
                on_snapshot(t, state)

    L0 = None
    base = u0
    if cfg.scheme == "imex":
        L0 = imex_operator(u0, cfg)
    u = u0
    field_ = qh(u)
    monitor(0.0, u, field_)
    snapshot(0.0, u)
    for n in range(1, steps + 1):
        try:
            if cfg.scheme == "explicit":
                new = step_explicit(u, cfg, field_.values)
            else:
                if cfg.relinearize_every and (n - 1) % cfg.relinearize_every == 0 and n > 1:
                    base = u
                    L0 = imex_operator(u, cfg)
                new = step_imex(u, base, L0, cfg, field_.values)
            if float(np.max(np.abs(new.values))) > 10.0 * (sup0 + 1.0):
                raise FlowAbort("blow-up guard: sup |u| exceeded 10 (sup |u0| + 1)")
        except (FlowAbort, np.linalg.LinAlgError) as exc:
            raise FlowAbort(f"step {n}: {exc}", trace, u) from exc
        u = new
        t = n * dt
        field_ = qh(u)
        if n % cfg.monitor_every == 0 or n == steps:
            try:
                monitor(t, u, field_)
            except FloatingPointError as exc:
                raise FlowAbort(f"step {n}: {exc}", trace, u) from exc
        snapshot(t, u)
    return u, trace, snaps


def summary(trace, cfg, extra=None):
    """Run summary: config echo and monitor growth relative to ``t = 0``."""
    out = {"config": cfg.echo(), "meta": trace.meta, "samples": len(trace)}
    growth = {}
    for name in ("sup_norm", "lip_norm", "sup_dtu"):
        series = getattr(trace, name)
        growth[name] = {"initial": series[0], "max": max(series), "worst_excess": max(series) - series[0]}
    out["monitors"] = growth
    if extra:
        out.update(extra)
    return out


def write_summary(path, data):
    with open(path, "w") as fh:
        fh.write(json.dumps(data, indent=2, sort_keys=True) + "\n")
