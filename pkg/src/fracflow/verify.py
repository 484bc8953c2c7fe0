"""Executable checks of the qualitative flow theorems.

Each check returns a :class:`VerificationReport` whose ``passed`` flag is
``margin <= tolerance``. Flow-based checks own their runs; the trace-level
helpers (``universal_margins``, ``sign_margins``, ``smoothing_ratios``) are
exposed so that corrupted traces can be fed in as negative controls.
"""
from dataclasses import dataclass, field, replace
import json
import math

import numpy as np

from .curvature import QuadratureSpec, evaluate_H, integrate_odd
from .flow import holder_key, run_flow
from .grid import gradient, holder_array, lip_norm

FLOOR = 5e-3
TREND_LIMIT = 1.2
SIGN_FLOOR = 1e-10


@dataclass
class VerificationReport:
    name: str
    margin: float
    tolerance: float
    meta: dict = field(default_factory=dict)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.margin = float(self.margin)
        self.tolerance = float(self.tolerance)
        if not math.isfinite(self.margin):
            raise ValueError(f"{self.name}: non-finite margin")
        self.passed = self.margin <= self.tolerance

    def to_json(self):
        return json.dumps(
            {"test": self.name, "passed": self.passed, "margin": self.margin, "tolerance": self.tolerance, "meta": self.meta},
            sort_keys=True,
            default=_jsonable,
        )


def _jsonable(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    raise TypeError(f"cannot serialise {type(v).__name__}")


def write_jsonl(reports, path):
    with open(path, "w") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")


def default_tolerance(h):
    return FLOOR + 2.0 * h


# comparison -------------------------------------------------------------


def check_comparison(u0, v0, cfg, tol=None):
    """Evolve ``u0`` and ``v0`` with the same config; ``u <= v + tol`` at all monitored times.

    Data that are not ordered initially show up as a violation at ``t = 0``.
    """
    if u0.shape != v0.shape or u0.h != v0.h or u0.origin != v0.origin or u0.extension != v0.extension:
        raise ValueError("comparison needs both data on the same grid")
    tol = default_tolerance(u0.h) if tol is None else tol
    states = {}

    def keep(tag):
        def cb(t, state, QH):
            states.setdefault(tag, []).append((t, state.values.copy()))

        return cb

    run_flow(u0, cfg, on_monitor=keep("u"))
    run_flow(v0, cfg, on_monitor=keep("v"))
    pts = u0.points()
    worst = -math.inf
    first = None
    min_gap = math.inf
    for (t, a), (_, b) in zip(states["u"], states["v"]):
        diff = a - b
        m = float(np.max(diff))
        if m > worst:
            worst = m
        min_gap = min(min_gap, float(np.min(b - a)))
        if first is None and m > tol:
            i = int(np.argmax(diff))
            first = {"t": t, "x": pts[i].tolist(), "margin": m}
    meta = {"samples": len(states["u"]), "min_gap": min_gap, "first_violation": first}
    return VerificationReport("comparison", worst, tol, meta)


# universal estimates ----------------------------------------------------


def universal_margins(trace):
    """Excess of each monitor over its ``t = 0`` value."""
    if not len(trace):
        raise ValueError("empty trace")
    return {name: max(getattr(trace, name)) - getattr(trace, name)[0] for name in ("sup_norm", "lip_norm", "sup_dtu")}


def check_universal(trace, h, tol=None):
    """``sup|u|``, ``Lip u`` and ``sup|d_t u|`` never exceed their initial values by more than ``tol``."""
    tol = default_tolerance(h) if tol is None else tol
    margins = universal_margins(trace)
    failed = {k: v for k, v in margins.items() if v > tol}
    return VerificationReport("universal", max(margins.values()), tol, {"margins": margins, "failed": failed})


# sign preservation ------------------------------------------------------


def sign_margins(trace):
    """Identity defects ``sup_t sup d_t u - (-inf H(u0))`` and ``inf_t inf d_t u - (-sup H(u0))``.

    ``max_dtu[0] = -inf H(u0)`` and ``min_dtu[0] = -sup H(u0)`` since ``d_t u = -H``.
    """
    upper = max(trace.max_dtu) - trace.max_dtu[0]
    lower = trace.min_dtu[0] - min(trace.min_dtu)
    return {"sup_identity": upper, "inf_identity": lower}


def check_sign_preservation(u0, cfg, tol=None, trace=None):
    """Run-wide extremes of ``d_t u`` against the negated extremes of ``H(u0)`` (weighted form)."""
    if trace is None:
        _, trace, _ = run_flow(u0, cfg)
    sup_H0 = trace.sup_dtu[0]
    tol = 1e-2 * (1.0 + sup_H0) if tol is None else tol
    margins = sign_margins(trace)
    # quadrature rounding leaves |H| ~ 1e-12 on data with H = 0
    floor = SIGN_FLOOR * (1.0 + sup_H0)
    one_signed = trace.max_dtu[0] <= floor or trace.min_dtu[0] >= -floor
    meta = {
        "margins": margins,
        "neg_inf_H0": trace.max_dtu[0],
        "neg_sup_H0": trace.min_dtu[0],
        "run_sup_dtu": max(trace.max_dtu),
        "run_inf_dtu": min(trace.min_dtu),
        "one_signed_H0": one_signed,
    }
    return VerificationReport("sign_preservation", max(abs(v) for v in margins.values()), tol, meta)


# smoothing --------------------------------------------------------------


def smoothing_ratios(trace, T, k_list, beta_prime):
    """Trend ratio per ``k``: max of ``t^k S_k`` over ``(0.75 T, T]`` over its max on ``(0.1 T, 0.75 T]``."""
    t = np.asarray(trace.times)
    out = {}
    for k in k_list:
        q = t**k * np.asarray(trace.holder[holder_key(k, beta_prime)])
        early = q[(t > 0.1 * T) & (t <= 0.75 * T)]
        late = q[t > 0.75 * T]
        if not len(early) or not len(late):
            raise ValueError("trace too short for a trend test")
        est = float(np.max(early))
        out[k] = float(np.max(late)) / est if est > 0 else (0.0 if np.max(late) == 0 else math.inf)
    return out


def check_smoothing(u0, cfg, k_list=(1,), beta_prime=0.25, trace=None):
    """No upward trend of ``t^k [D^k grad u]_{C^beta'}`` (last-quarter max <= 1.2 x established max)."""
    need = tuple((int(k), float(beta_prime)) for k in k_list)
    if trace is None:
        run_cfg = replace(cfg, holder=tuple(sorted(set(cfg.holder) | set(need))))
        _, trace, _ = run_flow(u0, run_cfg)
    ratios = smoothing_ratios(trace, cfg.T, k_list, beta_prime)
    worst_k = max(ratios, key=ratios.get)
    worst = ratios[worst_k]
    if not math.isfinite(worst):
        worst = 1e300
    meta = {"ratios": {str(k): v for k, v in ratios.items()}, "worst_k": worst_k, "beta_prime": beta_prime}
    return VerificationReport("smoothing", worst - 1.0, TREND_LIMIT - 1.0, meta)


# operator bounds --------------------------------------------------------


def _nu(pts, r, theta):
    return np.full(len(pts), r / (1.0 + r))


def _grad_sup(g):
    return float(np.max(np.abs(gradient(g))))


def operator_ratios(u, order, spec=None, gamma=None, max_lag=8, workers=None):
    """``(||I_o u||_{C^{g-a}} / ||grad u||_inf, ||H(u)||_{C^{g-a}} / ||grad u||_{C^g})``.

    ``I_o`` uses the odd-part coefficient ``nu = r / (1 + r)``; ``gamma`` defaults
    to ``(1 + alpha) / 2``. Zero denominators give ratio 0 when the numerator
    vanishes and ``inf`` otherwise.
    """
    spec = spec or QuadratureSpec()
    a = order.alpha
    gamma = (1.0 + a) / 2 if gamma is None else gamma
    if not a < gamma < 1:
        raise ValueError("gamma must lie in (alpha, 1)")
    periodic = u.periodic

    def c_norm(vals, expo):
        return float(np.max(np.abs(vals))) + holder_array(vals, u.h, expo, max_lag, periodic)

    Io = integrate_odd(u, _nu, order, spec, workers)
    H = evaluate_H(u, order, spec.replace(check_regularity=False), workers).values
    g_inf = _grad_sup(u)
    g_hold = g_inf + max(holder_array(c, u.h, gamma, max_lag, periodic) for c in gradient(u))

    def ratio(num, den):
        if den > 0:
            return num / den
        return 0.0 if num <= 1e-14 else math.inf

    return ratio(c_norm(Io, gamma - a), g_inf), ratio(c_norm(H, gamma - a), g_hold)


def check_operator_bounds(corpus, order, spec=None, constant=None, gamma=None, workers=None):
    """Both operator ratios stay below one calibrated constant across ``corpus``."""
    if not corpus:
        raise ValueError("empty corpus")
    if constant is None:
        from .oracle import calibrate_operator_constant

        constant = calibrate_operator_constant(order, corpus[0], spec, gamma=gamma, workers=workers)
    worst, witness, rows = -math.inf, None, []
    for i, u in enumerate(corpus):
        ro, rh = operator_ratios(u, order, spec, gamma, workers=workers)
        rows.append([ro, rh])
        m = max(ro, rh)
        if m > worst:
            worst, witness = m, i
    if not math.isfinite(worst):
        worst = 1e300
    meta = {"constant": constant, "witness": witness, "ratios": rows}
    return VerificationReport("operator_bounds", worst, constant, meta)
