import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import psnr_direct, ssim_direct
from streamderain.core import ShapeError
from streamderain.metrics import evaluate_sequence, psnr, ssim
from streamderain.synth import (StreakParams, interpolate_params, make_sequence, streak_layer,
                                synthesize_streaks)


def test_psnr_examples():
    a = np.random.default_rng(0).random((16, 16))
    assert psnr(a, a) == 100.0
    assert psnr(np.full((8, 8), 0.5), np.full((8, 8), 0.6)) == pytest.approx(20.0, abs=1e-9)


def test_psnr_matches_direct_formula():
    g = np.random.default_rng(1)
    a, b = g.random((2, 20, 24))
    assert abs(psnr(a, b) - psnr_direct(a, b)) <= 1e-10


def test_ssim_examples():
    a = np.random.default_rng(2).random((24, 24))
    assert ssim(a, a) == pytest.approx(1.0, abs=1e-12)
    assert ssim(a, 1 - a) < 1.0


def test_ssim_matches_sliding_window():
    g = np.random.default_rng(3)
    a = g.random((20, 23))
    b = np.clip(a + 0.1 * g.standard_normal(a.shape), 0, 1)
    assert abs(ssim(a, b) - ssim_direct(a, b)) <= 1e-8


def test_metric_errors():
    with pytest.raises(ShapeError):
        ssim(np.zeros((10, 30)), np.zeros((10, 30)))
    with pytest.raises(ShapeError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31))
def test_metrics_symmetric(seed):
    g = np.random.default_rng(seed)
    a, b = g.random((2, 16, 16))
    assert psnr(a, b) == psnr(b, a)
    assert abs(ssim(a, b) - ssim(b, a)) <= 1e-12


def test_sequence_report():
    g = np.random.default_rng(4)
    ref = [g.random((16, 16)) for _ in range(4)]
    rec = [np.clip(r + 0.05 * g.standard_normal(r.shape), 0, 1) for r in ref]
    same = evaluate_sequence(ref, ref)
    assert same.mean_psnr == 100.0 and same.mean_ssim == pytest.approx(1.0)
    one = evaluate_sequence(rec[:1], ref[:1])
    assert one.mean_psnr == psnr(rec[0], ref[0]) and one.mean_ssim == ssim(rec[0], ref[0])
    rep = evaluate_sequence(rec, ref)
    perm = [3, 1, 0, 2]
    rep2 = evaluate_sequence([rec[i] for i in perm], [ref[i] for i in perm])
    assert rep.mean_psnr == pytest.approx(rep2.mean_psnr, rel=1e-14)
    assert rep.mean_ssim == pytest.approx(rep2.mean_ssim, rel=1e-14)
    doc = json.loads(rep.to_json())
    assert doc["summary"]["n_frames"] == 4
    assert [f["index"] for f in doc["frames"]] == [0, 1, 2, 3]
    with pytest.raises(ValueError):
        evaluate_sequence(rec, ref[:3])


# -------------------------------------------------------------- synthesis


def test_no_rain_when_density_or_intensity_zero():
    clean = np.random.default_rng(5).random((32, 32)) * 0.8
    for p in (StreakParams(density=0.0), StreakParams(intensity=0.0)):
        rainy, gt = synthesize_streaks(clean, p, 3)
        np.testing.assert_array_equal(rainy, clean)
        assert not gt.any()


def test_synthesis_deterministic():
    clean = np.full((40, 40), 0.3)
    a = synthesize_streaks(clean, StreakParams(), [7, 1])
    b = synthesize_streaks(clean, StreakParams(), [7, 1])
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])
    c = synthesize_streaks(clean, StreakParams(), [7, 2])
    assert not np.array_equal(a[1], c[1])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 10.0), st.floats(0.0, 10.0))
def test_density_monotone(seed, d1, d2):
    lo, hi = sorted((d1, d2))
    a = streak_layer((32, 32), StreakParams(density=lo), seed)
    b = streak_layer((32, 32), StreakParams(density=hi), seed)
    assert np.abs(b).sum() >= np.abs(a).sum()
    assert a.min() >= 0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_ground_truth_where_unclamped(seed, intensity):
    clean = np.random.default_rng(seed).random((24, 24)) * 0.6
    rainy, gt = synthesize_streaks(clean, StreakParams(intensity=intensity), seed)
    ok = clean + gt <= 1.0
    np.testing.assert_allclose((rainy - clean)[ok], gt[ok], atol=1e-15)


def test_params_validation_and_interpolation():
    with pytest.raises(ValueError):
        StreakParams(density=-1)
    with pytest.raises(ValueError):
        StreakParams(intensity=1.5)
    ps = interpolate_params(StreakParams(density=6.0), StreakParams(density=1.0), 6)
    np.testing.assert_allclose([p.density for p in ps], [6, 5, 4, 3, 2, 1])
    assert StreakParams(density=2.0, density_drift=-0.5).at(3).density == 0.5


def test_make_sequence_layout():
    seq = make_sequence(5, (32, 48), jitter=1.0)
    assert len(seq.clean) == len(seq.rainy) == len(seq.rain) == 5
    assert all(abs(sx) <= 1.0 and abs(sy) <= 1.0 for sx, sy in seq.shifts)
    assert np.sum(seq.rain[0]) > np.sum(seq.rain[-1]) * 0.5
    seq2 = make_sequence(5, (32, 48), jitter=1.0)
    np.testing.assert_array_equal(seq.rainy[3], seq2.rainy[3])
