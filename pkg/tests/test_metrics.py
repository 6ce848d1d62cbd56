import csv

import numpy as np
import pytest

from rollvid.errors import InsufficientDataError
from rollvid.freq import high_pass, low_pass
from rollvid.metrics import (
    CSV_COLUMNS,
    MetricsReport,
    background_consistency,
    compute_report,
    lowfreq_coherence,
    motion_smoothness,
    subject_consistency,
    temporal_flicker,
    write_metrics_csv,
)


def video(seed, n=5, c=2, h=8, w=8):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal((c, h, w)) for _ in range(n)]


def full_masks(n, h=8, w=8):
    return [np.ones((h, w), dtype=bool) for _ in range(n)]


# ---------------------------------------------------------------- subject

def test_identical_frames_score_one():
    z = video(0, n=1)[0]
    frames = [z, z.copy(), z.copy()]
    assert subject_consistency(frames, full_masks(3)) == pytest.approx(1.0)


def test_sign_flip_scores_minus_one():
    z = video(1, n=1)[0]
    assert subject_consistency([z, -z], full_masks(2)) == pytest.approx(-1.0)


def test_subject_consistency_hand_fixture():
    # descriptors chosen directly: (1,0), (0,1), (1,1)
    d = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([1.0, 1.0])]
    frames = [np.tile(v[:, None, None], (1, 4, 4)) for v in d]
    got = subject_consistency(frames, full_masks(3, 4, 4))
    want = (0.0 + 1.0 / np.sqrt(2.0)) / 2.0
    assert got == pytest.approx(want, abs=1e-12)


def test_empty_mask_frames_are_skipped():
    z0, z1, z2 = video(2, n=3)
    masks = [np.ones((8, 8), bool), np.zeros((8, 8), bool), np.ones((8, 8), bool)]
    got = subject_consistency([z0, z1, z2], masks)
    want = subject_consistency([z0, z2], full_masks(2))
    assert got == want


def test_subject_descriptor_uses_only_masked_cells():
    z0 = np.zeros((1, 4, 4))
    z1 = np.zeros((1, 4, 4))
    z0[0, 0, 0] = z1[0, 0, 0] = 3.0   # agree inside the mask
    z1[0, 3, 3] = -50.0               # disagree far outside it
    m = np.zeros((4, 4), bool)
    m[0, 0] = True
    assert subject_consistency([z0, z1], [m, m]) == pytest.approx(1.0)


def test_subject_insufficient_data():
    z = video(3, n=2)
    with pytest.raises(InsufficientDataError):
        subject_consistency(z, [np.zeros((8, 8), bool)] * 2)
    with pytest.raises(InsufficientDataError):
        subject_consistency(z[:1], full_masks(1))


def test_background_uses_complement():
    z0, z1 = video(4, n=2)
    masks = [np.zeros((8, 8), bool)] * 2   # empty subject -> full background
    got = background_consistency([z0, z1], masks)
    want = subject_consistency([z0, z1], full_masks(2))
    assert got == want


# ---------------------------------------------------------------- flicker

def test_constant_video_has_zero_flicker():
    z = video(5, n=1)[0]
    assert temporal_flicker([z, z.copy(), z.copy()]) == 0.0


def test_flicker_scalar_oracle():
    frames = video(6, n=4)
    want = np.mean([np.abs(frames[i + 1] - frames[i]).mean() for i in range(3)])
    assert temporal_flicker(frames) == pytest.approx(want, abs=1e-15)


def test_flicker_scales_linearly():
    frames = video(7, n=4)
    a = temporal_flicker(frames)
    b = temporal_flicker([3.0 * z for z in frames])
    assert b == pytest.approx(3.0 * a)


# ---------------------------------------------------------------- smoothness

def test_linear_ramp_is_perfectly_smooth():
    base, step = video(8, n=2)
    frames = [base + k * step for k in range(5)]
    assert motion_smoothness(frames) == pytest.approx(0.0, abs=1e-12)
    assert temporal_flicker(frames) == pytest.approx(np.abs(step).mean())


def test_smoothness_scalar_oracle():
    frames = video(9, n=5)
    want = np.mean([
        np.linalg.norm(frames[i + 1] - 2 * frames[i] + frames[i - 1])
        for i in range(1, 4)
    ])
    assert motion_smoothness(frames) == pytest.approx(want, abs=1e-12)


def test_counts_guards():
    frames = video(10, n=2)
    with pytest.raises(InsufficientDataError):
        motion_smoothness(frames)
    with pytest.raises(InsufficientDataError):
        temporal_flicker(frames[:1])
    with pytest.raises(InsufficientDataError):
        lowfreq_coherence(frames[:1], 0.25)


# ---------------------------------------------------------------- spectral

def test_lowfreq_coherence_scalar_oracle():
    frames = video(11, n=3)
    bands = [low_pass(z, 0.25) for z in frames]

    def cos(a, b):
        a, b = a.ravel(), b.ravel()
        return (a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))

    want = np.mean([cos(bands[0], bands[1]), cos(bands[1], bands[2])])
    assert lowfreq_coherence(frames, 0.25) == pytest.approx(want, abs=1e-12)


def test_lowfreq_ignores_high_band_noise():
    rng = np.random.default_rng(12)
    low = low_pass(rng.standard_normal((2, 8, 8)), 0.5)
    # independent pure-high-band noise on a shared low band
    frames = [low + high_pass(rng.standard_normal((2, 8, 8)), 0.5)
              for _ in range(3)]
    assert lowfreq_coherence(frames, 0.5) == pytest.approx(1.0)


def test_reversal_symmetry():
    frames = video(13, n=6)
    masks = full_masks(6)
    assert subject_consistency(frames, masks) == pytest.approx(
        subject_consistency(frames[::-1], masks[::-1]))
    assert temporal_flicker(frames) == pytest.approx(temporal_flicker(frames[::-1]))
    assert motion_smoothness(frames) == pytest.approx(
        motion_smoothness(frames[::-1]))
    assert lowfreq_coherence(frames, 0.25) == pytest.approx(
        lowfreq_coherence(frames[::-1], 0.25))


# ---------------------------------------------------------------- report

def test_compute_report_fields():
    frames = video(14, n=5)
    m = np.zeros((8, 8), bool)
    m[2:5, 2:5] = True
    masks = [m] * 5
    rep = compute_report(frames, masks, r=0.25)
    assert rep.n_frames == 5
    assert rep.subject_consistency == subject_consistency(frames, masks)
    assert rep.background_consistency == background_consistency(frames, masks)
    assert rep.temporal_flicker == temporal_flicker(frames)


def test_as_row_negates_lower_is_better():
    rep = MetricsReport(subject_consistency=0.9, background_consistency=0.8,
                        motion_smoothness=2.0, temporal_flicker=0.3,
                        lowfreq_coherence=0.7, n_frames=10)
    row = rep.as_row("runA", "cafe0123")
    assert row["run_id"] == "runA"
    assert row["motion_smoothness"] == -2.0
    assert row["temporal_flicker"] == -0.3
    assert row["subject_consistency"] == 0.9
    assert set(row) == set(CSV_COLUMNS)


def test_csv_roundtrip(tmp_path):
    rep = MetricsReport(0.1, 0.2, 0.3, 0.4, 0.5, 7)
    path = tmp_path / "m.csv"
    write_metrics_csv(path, [rep.as_row("a", "h1"), rep.as_row("b", "h2")])
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["run_id"] for r in rows] == ["a", "b"]
    assert float(rows[0]["motion_smoothness"]) == -0.3
    assert rows[0]["n_frames"] == "7"
