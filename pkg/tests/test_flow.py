import math

import numpy as np
import pytest
from dataclasses import replace

from conftest import TWO_PI, cos_grid
from fracflow.curvature import evaluate_weighted_H
from fracflow.flow import (
    FlowAbort,
    FlowConfig,
    FlowTrace,
    derivative_holder,
    imex_operator,
    run_flow,
    step_explicit,
    step_imex,
    summary,
)
from fracflow.kernels import FractionalOrder
from fracflow.oracle import lambda_alpha
from fracflow.profiles import make_profile

O1 = FractionalOrder(0.5, 2)


def rand(seed=1, amp=0.3, n=32):
    return make_profile("random", 1, n, TWO_PI / n, amplitude=amp, modes=3, seed=seed)


# stationary and trivial flows --------------------------------------------------------


@pytest.mark.parametrize("scheme", ["explicit", "imex"])
@pytest.mark.parametrize("slope", [0.0, 0.8])
def test_affine_is_fixed_point(scheme, slope):
    u = make_profile("affine", 1, 65, 2.0**-4, slope=slope, offset=0.2)
    dt, _ = FlowConfig(O1, scheme=scheme).resolve(u.h)
    cfg = FlowConfig(O1, scheme=scheme, T=20 * dt)
    final, trace, _ = run_flow(u, cfg)
    assert np.max(np.abs(final.values - u.values)) <= 20 * 1e-12
    # per step
    one = step_explicit(u, cfg) if scheme == "explicit" else step_imex(u, u, imex_operator(u, cfg), cfg)
    assert np.max(np.abs(one.values - u.values)) <= 1e-12


def test_zero_stays_zero():
    z = make_profile("zero", 1, 32, 0.2, extension="periodic")
    final, trace, _ = run_flow(z, FlowConfig(O1, T=0.1))
    assert not np.any(final.values) and max(trace.sup_dtu) == 0.0


@pytest.mark.parametrize("scheme", ["explicit", "imex"])
def test_vertical_shift_commutes(scheme):
    u = rand(2)
    cfg = FlowConfig(O1, scheme=scheme, T=0.05, dt=0.01)
    a, _, _ = run_flow(u, cfg)
    b, _, _ = run_flow(u.with_values(u.values + 3.0), cfg)
    assert np.max(np.abs(b.values - 3.0 - a.values)) <= 1e-10


def test_single_step_difference_is_second_order():
    u = rand(4, 0.3, 64)
    QH = evaluate_weighted_H(u, O1).values
    L0 = imex_operator(u, FlowConfig(O1))
    dts = [4e-3, 2e-3, 1e-3, 5e-4]
    diffs = []
    for dt in dts:
        cfg = FlowConfig(O1, dt=dt)
        e = step_explicit(u, cfg, QH).values
        i = step_imex(u, u, L0, cfg, QH).values
        diffs.append(np.max(np.abs(e - i)))
    order = np.polyfit(np.log(dts), np.log(diffs), 1)[0]
    assert order >= 1.8


# linear regime ---------------------------------------------------------------------------


def test_small_cosine_decays_at_symbol_rate():
    eps, T = 1e-3, 0.3
    u = cos_grid(eps, 64)
    final, trace, _ = run_flow(u, FlowConfig(O1, T=T, dt=1e-3, monitor_every=50))
    expect = eps * math.exp(-lambda_alpha(O1) * T)
    amp = np.max(np.abs(final.values))
    assert abs(amp - expect) <= 0.1 * expect
    # shape preserved: still a multiple of cos x
    assert np.max(np.abs(final.values - amp * u.values / eps)) <= 1e-3 * amp


def test_sup_norm_decreases_for_bump():
    u = make_profile("gaussian-bump", 1, 129, 2.0**-4)
    _, trace, _ = run_flow(u, FlowConfig(O1, T=0.2))
    assert all(b <= a + 1e-12 for a, b in zip(trace.sup_norm, trace.sup_norm[1:]))


def test_boundary_layer_pinned():
    u = make_profile("gaussian-bump", 1, 129, 2.0**-4)
    final, _, _ = run_flow(u, FlowConfig(O1, T=0.1))
    mask = u.boundary_mask()
    assert np.array_equal(final.values[mask], u.values[mask])


def test_relinearization_close_to_frozen():
    u = rand(3, 0.2)
    cfg = FlowConfig(O1, T=0.2, dt=0.01)
    a, _, _ = run_flow(u, cfg)
    b, tr, _ = run_flow(u, replace(cfg, relinearize_every=5))
    assert tr.meta["relinearized"]
    assert np.max(np.abs(a.values - b.values)) < 1e-3


# guards, monitors, I/O -----------------------------------------------------------------------


def test_blow_up_guard_raises_with_partial_trace():
    u = make_profile("random", 1, 32, TWO_PI / 32, amplitude=1.0, modes=3, seed=0)
    with pytest.raises(FlowAbort) as info:
        run_flow(u, FlowConfig(O1, scheme="explicit", dt=5.0, T=100.0))
    assert info.value.trace is not None and len(info.value.trace) >= 1
    assert info.value.state is not None


def test_config_validation():
    for bad in (dict(scheme="rk4"), dict(T=0), dict(dt=-1), dict(cfl_factor=2.0), dict(monitor_every=0), dict(holder=((1, 1.5),))):
        with pytest.raises(ValueError):
            FlowConfig(O1, **bad)


def test_resolve_hits_T_exactly():
    dt, n = FlowConfig(O1, T=1.0).resolve(2.0**-7)
    assert n * dt == pytest.approx(1.0, abs=1e-15) and dt <= 2.0 ** (-7 * 1.5)
    dte, _ = FlowConfig(O1, scheme="explicit", T=1.0).resolve(2.0**-7)
    assert dte < dt


def test_monitor_cadence_and_snapshots():
    u = rand(5)
    seen = []
    cfg = FlowConfig(O1, T=0.1, dt=0.01, monitor_every=3, snapshot_times=(0.0, 0.05, 0.1), holder=((1, 0.25),))
    final, trace, snaps = run_flow(u, cfg, on_monitor=lambda t, s, q: seen.append(t))
    assert trace.times == pytest.approx([0.0, 0.03, 0.06, 0.09, 0.1])
    assert seen == trace.times
    assert [round(t, 10) for t, _ in snaps] == [0.0, 0.05, 0.1]
    assert np.array_equal(snaps[-1][1].values, final.values)
    assert "holder_k1_b0.25" in trace.holder


def test_trace_csv_roundtrip(tmp_path):
    _, trace, _ = run_flow(rand(6), FlowConfig(O1, T=0.05, dt=0.01, holder=((0, 0.5),)))
    path = tmp_path / "trace.csv"
    text = trace.to_csv(path)
    back = FlowTrace.from_csv(path)
    assert back.to_csv() == text
    assert back.sup_norm == trace.sup_norm and back.holder == trace.holder


def test_trace_times_must_increase():
    tr = FlowTrace()
    tr.record(0.0, rand(), np.zeros(32), 0.0, {})
    with pytest.raises(ValueError):
        tr.record(0.0, rand(), np.zeros(32), 0.0, {})


def test_threads_do_not_change_trace():
    u = make_profile("sum-of-bumps", 1, 129, 2.0**-4)
    cfg = FlowConfig(O1, T=0.05)
    a = run_flow(u, replace(cfg, workers=1))[1].to_csv()
    b = run_flow(u, replace(cfg, workers=4))[1].to_csv()
    assert a == b


def test_summary_reports_growth():
    _, trace, _ = run_flow(rand(7), FlowConfig(O1, T=0.05, dt=0.01))
    s = summary(trace, FlowConfig(O1, T=0.05, dt=0.01))
    assert set(s["monitors"]) == {"sup_norm", "lip_norm", "sup_dtu"}
    assert s["monitors"]["sup_norm"]["worst_excess"] <= 1e-12


def test_derivative_holder_of_cosine():
    u = cos_grid(1.0, 256)
    # grad u = -sin; [cos]_{C^0.5} over short lags is about sqrt(lag h)
    v = derivative_holder(u, 1, 0.5, max_lag=1)
    assert v == pytest.approx(math.sqrt(u.h), rel=0.05)


def test_monitors_see_zero_velocity_on_pinned_layer():
    # the far field of compact data rises, so the raw operator is large at the pinned nodes
    u = make_profile("gaussian-bump", 1, 129, 2.0**-5)
    _, trace, _ = run_flow(u, FlowConfig(O1, T=0.2, monitor_every=5))
    assert max(trace.max_dtu) <= trace.max_dtu[0] + 1e-12
    assert max(trace.sup_dtu) <= trace.sup_dtu[0] + 1e-12
