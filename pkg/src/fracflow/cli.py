"""``fracflow`` batch command line.

Configuration is a key-value manifest with dotted keys (``flow.dt = 1e-3``);
``[section]`` headers prefix the keys below them. Precedence: built-in defaults,
then the ``--config`` file, then ``--profile`` (a different profile drops the
inherited ``profile.*`` keys), then ``--set key=value`` overrides, then ``--seed``.

Exit codes: 0 ok, 1 check failure, 2 config error, 3 numerical abort.
"""
import argparse
import configparser
import csv
import hashlib
import json
import math
import os
from pathlib import Path
import sys

import numpy as np

from . import __version__
from .curvature import NearFieldError, QuadratureSpec, evaluate_H, evaluate_weighted_H
from .flow import FlowAbort, FlowConfig, run_flow, summary, write_summary
from .grid import write_snapshot
from .kernels import FractionalOrder
from .profiles import DEFAULTS, from_snapshot, make_profile

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2, 3

DEFAULT_MANIFEST = {
    "profile": "cosine",
    "grid.d": "1",
    "grid.n": "256",
    "grid.h": "0.015625",
    "order.alpha": "0.5",
    "flow.scheme": "imex",
    "flow.T": "0.25",
    "flow.monitor_every": "1",
    "flow.relinearize_every": "0",
    "flow.max_lag": "8",
    "eval.weighted": "false",
    "verify.suite": "universal,sign",
    "verify.k_list": "1",
    "verify.beta_prime": "0.25",
    "verify.corpus_size": "20",
    "oracle.alphas": "0.25,0.5,0.75",
    "oracle.cross": "true",
    "oracle.points": "0.0,0.3",
    "seed": "0",
}
QUAD_KEYS = {f.name: f.type for f in QuadratureSpec.__dataclass_fields__.values()}
SUITES = ("universal", "comparison", "sign", "smoothing", "operator-bounds", "negative-control")
INT_PARAMS = {"modes", "seed"}


class ConfigError(ValueError):
    pass


# manifest ---------------------------------------------------------------


def read_manifest(path):
    parser = configparser.ConfigParser(interpolation=None, default_section="\0")
    parser.optionxform = str
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    try:
        parser.read_string("[\1]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    out = {}
    for sec in parser.sections():
        prefix = "" if sec == "\1" else sec + "."
        for k, v in parser.items(sec):
            out[prefix + k] = v.strip()
    return out


def build_manifest(args):
    m = dict(DEFAULT_MANIFEST)
    if args.config:
        m.update(read_manifest(args.config))
    # --profile drops parameters of a replaced profile; --set applies last
    if args.profile:
        if m.get("profile") != args.profile:
            m = {k: v for k, v in m.items() if not k.startswith("profile.")}
        m["profile"] = args.profile
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        m[k.strip()] = v.strip()
    if args.seed is not None:
        m["seed"] = str(args.seed)
    return m


def manifest_hash(m):
    return hashlib.sha256(json.dumps(m, sort_keys=True).encode()).hexdigest()


def _get(m, key, conv, default=None):
    raw = m.get(key)
    if raw is None or raw == "":
        return default
    try:
        return conv(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r}") from None


def _bool(s):
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(s)


def _floats(s):
    return [float(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.replace(";", ",").split(",") if v.strip()]


def _number(s):
    if "," in s:
        return _floats(s)
    return float(s)


def _profile_params(m, prefix="profile."):
    out = {}
    for k, v in m.items():
        if k.startswith(prefix) and "." not in k[len(prefix) :]:
            name = k[len(prefix) :]
            out[name] = _get(m, k, int if name in INT_PARAMS else _number)
    return out


def build_profile(m, prefix="profile"):
    name = m.get(prefix, "")
    if name.startswith("snapshot:"):
        path = name.split(":", 1)[1]
        if not Path(path).with_suffix(".json").exists():
            raise ConfigError(f"snapshot {path} not found")
        return from_snapshot(path)
    if name not in DEFAULTS:
        raise ConfigError(f"unknown profile {name!r}")
    d = _get(m, "grid.d", int)
    n = _get(m, "grid.n", int)
    h = _get(m, "grid.h", float)
    ext = m.get("grid.extension") or None
    params = _profile_params(m, prefix + ".")
    if name == "random":
        params.setdefault("seed", _get(m, "seed", int))
    return make_profile(name, d, n, h, ext, **params)


def build_order(m, d):
    return FractionalOrder.for_dim(_get(m, "order.alpha", float), d)


def build_spec(m):
    kw = {}
    for k in m:
        if k.startswith("quad."):
            name = k[5:]
            if name not in QUAD_KEYS:
                raise ConfigError(f"unknown quadrature key {k}")
            raw = m[k]
            if name == "tail_mode":
                kw[name] = raw
            elif name == "check_regularity":
                kw[name] = _get(m, k, _bool)
            elif name in ("n_radial", "n_angular", "interp"):
                kw[name] = _get(m, k, int)
            elif raw.lower() == "none":
                kw[name] = None
            else:
                kw[name] = _get(m, k, float)
    return QuadratureSpec(**kw)


def _holder_pairs(raw):
    pairs = []
    for item in raw.replace(";", ",").split(","):
        if item.strip():
            k, b = item.split(":")
            pairs.append((int(k), float(b)))
    return tuple(pairs)


def build_flow_config(m, order, spec, workers):
    known = {"scheme", "T", "dt", "cfl_factor", "monitor_every", "relinearize_every", "max_lag", "holder", "snapshot_times"}
    for k in m:
        if k.startswith("flow.") and k[5:] not in known:
            raise ConfigError(f"unknown flow key {k}")
    return FlowConfig(
        order,
        scheme=m.get("flow.scheme", "imex"),
        dt=_get(m, "flow.dt", float),
        cfl_factor=_get(m, "flow.cfl_factor", float),
        T=_get(m, "flow.T", float),
        spec=spec,
        monitor_every=_get(m, "flow.monitor_every", int),
        relinearize_every=_get(m, "flow.relinearize_every", int),
        holder=_get(m, "flow.holder", _holder_pairs, ()),
        max_lag=_get(m, "flow.max_lag", int),
        snapshot_times=tuple(_get(m, "flow.snapshot_times", _floats, [])),
        workers=workers,
    )


# output -----------------------------------------------------------------


class Output:
    """Writes artefacts into ``root``; every file gets a JSON sidecar with the manifest hash."""

    def __init__(self, root, m):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.hash = manifest_hash(m)
        self.write_json("manifest.json", {"manifest": m})

    def _sidecar(self, name, extra=None):
        data = {"file": name, "manifest_hash": self.hash}
        if extra:
            data.update(extra)
        text = json.dumps(data, indent=2, sort_keys=True, default=_plain) + "\n"
        (self.root / (Path(name).stem + ".meta.json")).write_text(text)

    def write_json(self, name, data):
        data = dict(data, manifest_hash=self.hash)
        (self.root / name).write_text(json.dumps(data, indent=2, sort_keys=True, default=_plain) + "\n")

    def write_csv(self, name, header, rows, extra=None):
        with open(self.root / name, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
        self._sidecar(name, extra)

    def write_text(self, name, text, extra=None):
        (self.root / name).write_text(text)
        self._sidecar(name, extra)


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _plain(v):
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    return str(v)


# commands ---------------------------------------------------------------


def cmd_eval(m, out, workers):
    u = build_profile(m)
    order = build_order(m, u.d)
    spec = build_spec(m)
    weighted = _get(m, "eval.weighted", _bool)
    H = evaluate_H(u, order, spec, workers)
    QH = evaluate_weighted_H(u, order, spec, workers) if weighted else None
    pts = u.points()
    header = ["x", "y"][: u.d] + ["u", "H"] + (["QH"] if weighted else [])
    cols = [pts[:, k] for k in range(u.d)] + [u.values.ravel(), H.values.ravel()]
    if weighted:
        cols.append(QH.values.ravel())
    out.write_csv("curvature.csv", header, zip(*cols))
    data = {
        "profile": m["profile"],
        "alpha": order.alpha,
        "n_nodes": u.n_nodes,
        "sup_H": H.sup(),
        "tail_estimate": H.tail_estimate,
        "meta": H.meta,
    }
    if weighted:
        data["sup_QH"] = QH.sup()
    out.write_json("summary.json", data)
    return EXIT_OK


def cmd_flow(m, out, workers):
    u = build_profile(m)
    order = build_order(m, u.d)
    cfg = build_flow_config(m, order, build_spec(m), workers)
    snapdir = out.root / "snapshots"

    def on_snapshot(t, state):
        write_snapshot(state, snapdir / ("snap_t" + f"{t:.6f}".replace(".", "p")), {"t": t, "manifest_hash": out.hash})

    try:
        final, trace, _ = run_flow(u, cfg, on_snapshot=on_snapshot)
    except FlowAbort as exc:
        if exc.trace is not None and len(exc.trace):
            out.write_text("trace.csv", exc.trace.to_csv(), {"aborted": True})
            out.write_json("summary.json", dict(summary(exc.trace, cfg), aborted=str(exc)))
        if exc.state is not None:
            write_snapshot(exc.state, snapdir / "abort_state", {"manifest_hash": out.hash})
        raise
    out.write_text("trace.csv", trace.to_csv(), {"columns": list(trace.columns())})
    write_snapshot(final, snapdir / "final", {"t": cfg.T, "manifest_hash": out.hash})
    out.write_json("summary.json", summary(trace, cfg, {"profile": m["profile"]}))
    return EXIT_OK


def cmd_compare(m, out, workers):
    """IMEX against explicit on a shared step size: ``max |u_imex - u_explicit|`` per monitored time."""
    u = build_profile(m)
    order = build_order(m, u.d)
    base = build_flow_config(m, order, build_spec(m), workers)
    from dataclasses import replace

    exp_cfg = replace(base, scheme="explicit", snapshot_times=())
    dt, _ = exp_cfg.resolve(u.h)
    imex_cfg = replace(base, scheme="imex", dt=dt, cfl_factor=None, snapshot_times=())
    exp_cfg = replace(exp_cfg, dt=dt, cfl_factor=None)
    states = {"explicit": [], "imex": []}
    for tag, cfg in (("explicit", exp_cfg), ("imex", imex_cfg)):
        run_flow(u, cfg, on_monitor=lambda t, s, QH, tag=tag: states[tag].append((t, s.values.copy())))
    rows = []
    for (t, a), (_, b) in zip(states["explicit"], states["imex"]):
        rows.append((t, float(np.max(np.abs(a - b))), float(np.max(np.abs(a))), float(np.max(np.abs(b)))))
    out.write_csv("compare.csv", ["t", "max_diff", "sup_explicit", "sup_imex"], rows)
    out.write_json("summary.json", {"dt": dt, "max_diff": max(r[1] for r in rows), "samples": len(rows)})
    return EXIT_OK


def cmd_verify(m, out, workers):
    from dataclasses import replace

    from . import verify as V

    suite = [s.strip() for s in m.get("verify.suite", "").split(",") if s.strip()]
    if not suite:
        raise ConfigError("verify.suite is empty")
    if suite == ["full"]:
        suite = [s for s in SUITES if s != "negative-control"]
    bad = [s for s in suite if s not in SUITES]
    if bad:
        raise ConfigError(f"unknown checks {bad}; choose from {', '.join(SUITES)} or full")
    u = build_profile(m)
    order = build_order(m, u.d)
    spec = build_spec(m)
    cfg = build_flow_config(m, order, spec, workers)
    k_list = _get(m, "verify.k_list", _ints)
    beta = _get(m, "verify.beta_prime", float)
    reports = []
    trace = None

    def base_trace():
        nonlocal trace
        if trace is None:
            _, trace, _ = run_flow(u, cfg)
        return trace

    for name in suite:
        if name == "universal":
            reports.append(V.check_universal(base_trace(), u.h))
        elif name == "sign":
            reports.append(V.check_sign_preservation(u, cfg, trace=base_trace()))
        elif name == "comparison":
            upper = {k[len("verify.upper.") :]: v for k, v in m.items() if k.startswith("verify.upper.")}
            v0 = u
            if upper:
                mm = dict(m)
                mm.update({f"profile.{k}": v for k, v in upper.items()})
                v0 = build_profile(mm)
            reports.append(V.check_comparison(u, v0, cfg))
        elif name == "smoothing":
            reports.append(V.check_smoothing(u, cfg, k_list, beta))
        elif name == "operator-bounds":
            from .oracle import calibration_corpus, calibrate_operator_constant

            tmpl = make_profile("zero", u.d, _get(m, "grid.n", int), _get(m, "grid.h", float), "periodic")
            C = calibrate_operator_constant(order, tmpl, spec, workers=workers)
            corpus = calibration_corpus(tmpl, _get(m, "verify.corpus_size", int), seed=_get(m, "seed", int))
            reports.append(V.check_operator_bounds(corpus, order, spec, C, workers=workers))
        else:
            # harness self-test: a trace with lip_norm bumped by 1% must be rejected
            tr = base_trace()
            bad_tr = replace(tr, lip_norm=list(tr.lip_norm), holder=dict(tr.holder))
            bad_tr.lip_norm[-1] = bad_tr.lip_norm[0] * 1.01 + V.default_tolerance(u.h)
            rep = V.check_universal(bad_tr, u.h)
            rep.name = "negative_control_universal"
            reports.append(rep)
    lines = "".join(r.to_json() + "\n" for r in reports)
    out.write_text("report.jsonl", lines, {"checks": [r.name for r in reports]})
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.name} margin={r.margin:.3e} tol={r.tolerance:.3e}")
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_oracle(m, out, workers):
    from scipy.special import gamma as Gamma

    from .oracle import SubgraphSet, direct_H_graph, direct_H_set, lambda_alpha

    alphas = _get(m, "oracle.alphas", _floats, [])
    if not alphas:
        raise ConfigError("oracle.alphas is empty")
    for a in alphas:
        if not 0 < a < 1:
            raise ConfigError(f"alpha {a} outside (0, 1)")
    rows = []
    for a in alphas:
        o = FractionalOrder(a, 2)
        closed = -4.0 * Gamma(-1.0 - a) * math.cos(math.pi * (1.0 + a) / 2)
        rows.append((a, lambda_alpha(o), lambda_alpha(o, split=2.0), float(closed)))
    out.write_csv("lambda.csv", ["alpha", "lambda", "lambda_split2", "lambda_closed_form"], rows)
    result = {"lambda_rows": len(rows)}
    if _get(m, "oracle.cross", _bool):
        u = build_profile(m)
        spec = build_spec(m)
        xs = _get(m, "oracle.points", _floats)
        cross = []
        for a in alphas:
            o = build_order({"order.alpha": str(a)}, u.d)
            H = evaluate_H(u, o, spec, workers)
            for x in xs:
                node = np.full(u.d, float(x))
                idx = tuple(int(round((c - o0) / u.h)) for c, o0 in zip(node, u.origin))
                xn = np.array([u.origin[k] + u.h * i for k, i in enumerate(idx)])
                hg = float(H.values[idx])
                g = direct_H_graph(u, xn, o).value
                s = direct_H_set(SubgraphSet(u, xn), o).value
                scale = max(abs(g), 1e-12)
                cross.append((a, *xn, hg, g, s, abs(hg - g) / scale, abs(s - g) / scale))
        head = ["alpha"] + ["x", "y"][: u.d] + ["H_grid", "H_graph", "H_set", "rel_grid_graph", "rel_set_graph"]
        out.write_csv("cross.csv", head, cross)
        result["cross_max_rel"] = max((max(r[-2], r[-1]) for r in cross), default=0.0)
    out.write_json("summary.json", result)
    return EXIT_OK


COMMANDS = {"eval": cmd_eval, "flow": cmd_flow, "compare": cmd_compare, "verify": cmd_verify, "oracle": cmd_oracle}


def make_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH")
    common.add_argument("--profile", metavar="NAME", help="zero, affine, cosine, gaussian-bump, sum-of-bumps, rough-cusp, random, or snapshot:PATH")
    common.add_argument("--out", metavar="DIR", default="fracflow_out")
    common.add_argument("--threads", metavar="K", type=int)
    common.add_argument("--seed", metavar="S", type=int)
    common.add_argument("--set", metavar="KEY=VALUE", action="append")
    p = argparse.ArgumentParser(prog="fracflow", description="Fractional mean curvature flow of graphs.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=fn.__doc__.splitlines()[0] if fn.__doc__ else None)
    return p


def resolve_threads(args):
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        return args.threads
    env = os.environ.get("FRACFLOW_THREADS")
    if env:
        try:
            k = int(env)
        except ValueError:
            raise ConfigError("FRACFLOW_THREADS must be an integer") from None
        if k < 1:
            raise ConfigError("FRACFLOW_THREADS must be >= 1")
        return k
    return os.cpu_count() or 1


def main(argv=None):
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        workers = resolve_threads(args)
        m = build_manifest(args)
        out = Output(args.out, m)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](m, out, workers)
    except (FlowAbort, NearFieldError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
