import copy
import json
import math

import numpy as np
import pytest

from conftest import TWO_PI
from fracflow.flow import FlowConfig, FlowTrace, holder_key, run_flow
from fracflow.kernels import FractionalOrder
from fracflow.profiles import make_profile
from fracflow.verify import (
    VerificationReport,
    check_comparison,
    check_operator_bounds,
    check_sign_preservation,
    check_smoothing,
    check_universal,
    default_tolerance,
    operator_ratios,
    sign_margins,
    smoothing_ratios,
    universal_margins,
    write_jsonl,
)

O1 = FractionalOrder(0.5, 2)
H = 2.0**-5


def bump(amp=0.25):
    return make_profile("gaussian-bump", 1, 129, H, amplitude=amp)


@pytest.fixture(scope="module")
def bump_trace():
    return run_flow(bump(), FlowConfig(O1, T=0.25, holder=((1, 0.25),)))[1]


# report mechanics ----------------------------------------------------------------------------


def test_report_pass_fail_and_json(tmp_path):
    ok = VerificationReport("x", 0.1, 0.2, {"a": np.float64(1.5)})
    bad = VerificationReport("y", 0.3, 0.2)
    assert ok.passed and not bad.passed
    rec = json.loads(ok.to_json())
    assert rec == {"test": "x", "passed": True, "margin": 0.1, "tolerance": 0.2, "meta": {"a": 1.5}}
    write_jsonl([ok, bad], tmp_path / "r.jsonl")
    lines = (tmp_path / "r.jsonl").read_text().splitlines()
    assert [json.loads(l)["passed"] for l in lines] == [True, False]
    with pytest.raises(ValueError):
        VerificationReport("z", math.nan, 1.0)


def test_default_tolerance():
    assert default_tolerance(2.0**-7) == 5e-3 + 2 * 2.0**-7


# universal estimates --------------------------------------------------------------------------------


def test_universal_passes_on_real_run(bump_trace):
    rep = check_universal(bump_trace, H)
    assert rep.passed and rep.margin <= 1e-12


def test_universal_detects_corrupted_trace(bump_trace):
    bad = copy.deepcopy(bump_trace)
    bad.lip_norm[len(bad) // 2] = bad.lip_norm[0] + 0.1
    rep = check_universal(bad, H)
    assert not rep.passed and "lip_norm" in rep.meta["failed"]
    with pytest.raises(ValueError):
        universal_margins(FlowTrace())


# comparison -------------------------------------------------------------------------------------------------


def test_ordered_pair_stays_ordered():
    cfg = FlowConfig(O1, T=0.2)
    rep = check_comparison(bump(0.2), bump(0.25), cfg)
    assert rep.passed and rep.margin <= 0.0 and rep.meta["first_violation"] is None


def test_swapped_pair_is_detected():
    rep = check_comparison(bump(0.25), bump(0.1), FlowConfig(O1, T=0.05))
    assert not rep.passed
    assert rep.meta["first_violation"]["t"] == 0.0
    assert rep.meta["first_violation"]["x"] == pytest.approx([0.0])


def test_comparison_needs_same_grid():
    with pytest.raises(ValueError):
        check_comparison(bump(), make_profile("gaussian-bump", 1, 65, H), FlowConfig(O1, T=0.05))


# sign preservation ------------------------------------------------------------------------------


def test_sign_identity_on_real_run(bump_trace):
    rep = check_sign_preservation(bump(), FlowConfig(O1, T=0.25), trace=bump_trace)
    assert rep.passed
    assert rep.meta["neg_inf_H0"] == bump_trace.max_dtu[0]
    assert not rep.meta["one_signed_H0"]


def test_sign_identity_detects_late_overshoot(bump_trace):
    bad = copy.deepcopy(bump_trace)
    bad.max_dtu[-1] = bad.max_dtu[0] + 1.0
    rep = check_sign_preservation(bump(), FlowConfig(O1, T=0.25), trace=bad)
    assert not rep.passed and sign_margins(bad)["sup_identity"] == pytest.approx(1.0)


def test_affine_data_is_one_signed():
    u = make_profile("affine", 1, 65, H, slope=0.6)
    rep = check_sign_preservation(u, FlowConfig(O1, T=0.05))
    assert rep.passed and rep.margin <= 1e-12 and rep.meta["one_signed_H0"]


# smoothing ---------------------------------------------------------------------------------------------------


def synthetic(times, values, k=1, b=0.25):
    tr = FlowTrace()
    tr.times = list(times)
    tr.holder = {holder_key(k, b): list(values)}
    return tr


def test_smoothing_ratio_synthetic():
    t = np.linspace(0, 1, 41)
    flat = synthetic(t, 1.0 / np.maximum(t, 1e-3))  # t S = 1
    assert smoothing_ratios(flat, 1.0, (1,), 0.25)[1] == pytest.approx(1.0)
    rising = synthetic(t, np.ones_like(t) * 5.0)  # t S grows linearly
    r = smoothing_ratios(rising, 1.0, (1,), 0.25)[1]
    assert r == pytest.approx(1.0 / 0.75)
    rep = check_smoothing(None, FlowConfig(O1, T=1.0), trace=rising)
    assert not rep.passed and rep.tolerance == pytest.approx(0.2)


def test_smoothing_needs_long_trace():
    with pytest.raises(ValueError):
        smoothing_ratios(synthetic([0.0, 1.0], [1.0, 1.0]), 1.0, (1,), 0.25)


def test_smoothing_real_run_records_monitor(bump_trace):
    rep = check_smoothing(bump(), FlowConfig(O1, T=0.25), trace=bump_trace)
    assert "1" in rep.meta["ratios"]


# operator bounds ----------------------------------------------------------------------------------------------


def periodic_field(seed, amp):
    return make_profile("random", 1, 64, TWO_PI / 64, amplitude=amp, modes=3, seed=seed)


def test_operator_ratios_zero_field():
    z = make_profile("zero", 1, 64, TWO_PI / 64, extension="periodic")
    assert operator_ratios(z, O1) == (0.0, 0.0)


def test_operator_ratios_homogeneous_in_small_amplitude():
    # both operators are asymptotically linear: ratios approach a limit as amp -> 0
    a = operator_ratios(periodic_field(1, 1e-4), O1)
    b = operator_ratios(periodic_field(1, 1e-5), O1)
    assert a[0] == pytest.approx(b[0], rel=1e-6) and a[1] == pytest.approx(b[1], rel=1e-3)


def test_operator_bounds_pass_and_checkerboard_control():
    corpus = [periodic_field(s, 0.1) for s in range(3)]
    rep = check_operator_bounds(corpus, O1, constant=50.0)
    assert rep.passed and len(rep.meta["ratios"]) == 3
    # the central gradient of a node-scale checkerboard vanishes: ratio is unbounded
    chk = corpus[0].with_values(1e-3 * (-1.0) ** np.arange(64))
    bad = check_operator_bounds(corpus + [chk], O1, constant=50.0)
    assert not bad.passed and bad.meta["witness"] == 3
    with pytest.raises(ValueError):
        check_operator_bounds([], O1)


def test_operator_gamma_range():
    with pytest.raises(ValueError):
        operator_ratios(periodic_field(0, 0.1), O1, gamma=0.3)
