"""Built-in named initial profiles.

Every profile is sampled through :func:`fracflow.grid.sample`, so the analytic
expression stays attached as ``source`` (the oracles evaluate it off-grid).

Grids are centred at the origin: periodic boxes are ``[-L/2, L/2)`` with
``L = n h``; other boxes are ``[-(n-1)h/2, (n-1)h/2]``.

=================  ===========================================  ==========================
name               expression                                   parameters (ranges)
=================  ===========================================  ==========================
zero               0                                            none
affine             a . x + b (+ optional gaussian bump)         slope, offset, bump, width
cosine             A prod_k cos(2 pi m x_k / L)                 amplitude (|A| <= 10), modes (1..n/4)
gaussian-bump      A exp(-|x - c|^2 / (2 w^2))                  amplitude, width (> 0), center
sum-of-bumps       A1 bump(x + c) + A2 bump(x - c)              amplitude, amplitude2, width, width2, center
rough-cusp         A ((|x|^2+delta^2)^((1+beta)/2) - delta^(1+beta)) exp(-|x|^2/(2 w^2))
                                                                amplitude, beta (0..1), width, mollify (delta/h)
random             sum of random Fourier modes (periodic only)  amplitude, modes, seed
=================  ===========================================  ==========================
"""
import numpy as np

from .grid import GridFunction, sample

DEFAULTS = {
    "zero": {},
    "affine": {"slope": 0.5, "offset": 0.0, "bump": 0.0, "width": 0.25},
    "cosine": {"amplitude": 1e-3, "modes": 1},
    "gaussian-bump": {"amplitude": 0.25, "width": 0.25, "center": 0.0},
    "sum-of-bumps": {"amplitude": 0.2, "amplitude2": -0.1, "width": 0.2, "width2": 0.3, "center": 0.5},
    "rough-cusp": {"amplitude": 0.25, "beta": 0.6, "width": 0.25, "mollify": 1.0},
    "random": {"amplitude": 0.1, "modes": 4, "seed": 0},
}
PROFILES = tuple(DEFAULTS)
MAX_AMPLITUDE = 10.0


def grid_layout(d, n, h, extension):
    """``(shape, origin)`` of the centred box."""
    if d not in (1, 2):
        raise ValueError("d must be 1 or 2")
    if n < 8:
        raise ValueError("need at least 8 nodes per axis")
    if not h > 0:
        raise ValueError("spacing must be positive")
    half = n * h / 2 if extension == "periodic" else (n - 1) * h / 2
    return (n,) * d, (-half,) * d


def _radius2(x, center=0.0):
    c = np.broadcast_to(np.atleast_1d(np.asarray(center, dtype=float)), (x.shape[1],))
    return np.sum((x - c) ** 2, axis=1)


def _gauss(amp, width, center=0.0):
    if not width > 0:
        raise ValueError("width must be positive")
    return lambda x: amp * np.exp(-_radius2(x, center) / (2 * width**2))


def _check_amp(*amps):
    for a in amps:
        if not abs(a) <= MAX_AMPLITUDE:
            raise ValueError(f"amplitude {a} outside [-{MAX_AMPLITUDE}, {MAX_AMPLITUDE}]")


def expression(name, d, L, h, **params):
    """Analytic callable for profile ``name`` plus its affine far field ``(slope, offset)``."""
    if name not in DEFAULTS:
        raise ValueError(f"unknown profile {name!r}; choose from {', '.join(PROFILES)}")
    unknown = set(params) - set(DEFAULTS[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    p = {**DEFAULTS[name], **params}
    slope = None
    offset = 0.0
    if name == "zero":
        f = lambda x: np.zeros(len(x))
    elif name == "affine":
        a = np.broadcast_to(np.atleast_1d(np.asarray(p["slope"], dtype=float)), (d,)).copy()
        offset = float(p["offset"])
        _check_amp(p["bump"], *a)
        bump = _gauss(float(p["bump"]), float(p["width"]))
        slope = tuple(a)
        f = lambda x: x @ a + offset + bump(x)
    elif name == "cosine":
        A, m = float(p["amplitude"]), int(p["modes"])
        _check_amp(A)
        if m < 1 or 2 * np.pi * m / L > np.pi / (2 * h):
            raise ValueError("cosine modes must lie in 1..n/4")
        k = 2 * np.pi * m / L
        f = lambda x: A * np.prod(np.cos(k * x), axis=1)
    elif name == "gaussian-bump":
        _check_amp(p["amplitude"])
        f = _gauss(float(p["amplitude"]), float(p["width"]), p["center"])
    elif name == "sum-of-bumps":
        _check_amp(p["amplitude"], p["amplitude2"])
        c = float(p["center"])
        b1 = _gauss(float(p["amplitude"]), float(p["width"]), -c)
        b2 = _gauss(float(p["amplitude2"]), float(p["width2"]), c)
        f = lambda x: b1(x) + b2(x)
    elif name == "rough-cusp":
        A, beta, w = float(p["amplitude"]), float(p["beta"]), float(p["width"])
        _check_amp(A)
        if not 0 < beta < 1:
            raise ValueError("rough-cusp beta must lie in (0, 1)")
        if not (w > 0 and p["mollify"] > 0):
            raise ValueError("rough-cusp width and mollify must be positive")
        delta = float(p["mollify"]) * h
        e = (1 + beta) / 2
        f = lambda x: A * ((_radius2(x) + delta**2) ** e - delta ** (1 + beta)) * np.exp(-_radius2(x) / (2 * w**2))
    else:
        f = random_expression(d, L, float(p["amplitude"]), int(p["modes"]), int(p["seed"]))
    return f, slope, offset


def random_expression(d, L, amplitude, modes, seed):
    """Band-limited random field: ``modes`` Fourier modes with wavenumbers ``<= modes``."""
    _check_amp(amplitude)
    if modes < 1:
        raise ValueError("random profile needs modes >= 1")
    rng = np.random.default_rng(seed)
    ks = rng.integers(-modes, modes + 1, size=(modes, d))
    ks[np.all(ks == 0, axis=1), 0] = 1
    coef = rng.normal(size=modes) / np.sqrt(modes)
    phase = rng.uniform(0, 2 * np.pi, size=modes)
    kk = 2 * np.pi * ks / L

    def f(x):
        return amplitude * np.sum(coef * np.cos(x @ kk.T + phase), axis=1)

    return f


def make_profile(name, d=1, n=128, h=2.0**-5, extension=None, **params):
    """Sample profile ``name`` on the centred ``n^d`` grid.

    The default extension is ``affine-far-field`` for ``affine``, ``periodic`` for
    ``cosine`` and ``random``, and ``compact-support`` otherwise.
    """
    if extension is None:
        extension = {"affine": "affine-far-field", "cosine": "periodic", "random": "periodic"}.get(name, "compact-support")
    if name in ("cosine", "random") and extension != "periodic":
        raise ValueError(f"profile {name} needs a periodic grid")
    if name == "affine" and extension != "affine-far-field":
        raise ValueError("profile affine needs the affine-far-field extension")
    shape, origin = grid_layout(d, int(n), float(h), extension)
    L = n * h
    f, slope, offset = expression(name, d, L, h, **params)
    return sample(f, shape, h, origin, extension, slope, offset)


def from_snapshot(path):
    from .grid import read_snapshot

    g = read_snapshot(path)
    if not isinstance(g, GridFunction):
        raise ValueError("snapshot did not decode to a grid function")
    return g
