"""Desk-scale video quality proxies.

Descriptor-based scores over latent frames: cosine agreement of masked
subject features, raw frame differences for flicker, second differences
for motion smoothness, and spectral low-band agreement for structural
drift.  Proxies support directional comparisons between runs only; the
absolute numbers mean nothing outside this codebase.
"""

import csv
from dataclasses import dataclass, fields

import numpy as np

from .errors import InsufficientDataError
from .freq import low_pass


def _cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


def subject_consistency(frames, masks) -> float:
    """Mean cosine of consecutive masked-mean channel descriptors.

    A frame's descriptor is the per-channel mean of its latent over the
    mask's support.  Frames whose mask is empty carry no subject and drop
    out; pairs are consecutive among the survivors.
    """
    descriptors = []
    for z, m in zip(frames, masks):
        m = np.asarray(m, dtype=bool)
        if not m.any():
            continue
        z = np.asarray(z, dtype=np.float64)
        descriptors.append(z[:, m].mean(axis=1))
    if len(descriptors) < 2:
        raise InsufficientDataError(
            f"subject_consistency needs >=2 masked frames, got {len(descriptors)}"
        )
    return float(np.mean([
        _cosine(descriptors[i], descriptors[i + 1])
        for i in range(len(descriptors) - 1)
    ]))


def background_consistency(frames, masks) -> float:
    """subject_consistency over the mask complements."""
    return subject_consistency(frames, [~np.asarray(m, dtype=bool) for m in masks])


def temporal_flicker(frames) -> float:
    """Mean over consecutive pairs of the mean absolute frame difference."""
    if len(frames) < 2:
        raise InsufficientDataError("temporal_flicker needs >=2 frames")
    frames = [np.asarray(z, dtype=np.float64) for z in frames]
    return float(np.mean([
        np.mean(np.abs(frames[i + 1] - frames[i])) for i in range(len(frames) - 1)
    ]))


def motion_smoothness(frames) -> float:
    """Mean norm of the second difference f[k+1] - 2 f[k] + f[k-1].

    Zero for any frame sequence linear in k; grows with jitter.
    """
    if len(frames) < 3:
        raise InsufficientDataError("motion_smoothness needs >=3 frames")
    frames = [np.asarray(z, dtype=np.float64) for z in frames]
    return float(np.mean([
        np.linalg.norm(frames[i + 1] - 2.0 * frames[i] + frames[i - 1])
        for i in range(1, len(frames) - 1)
    ]))


def lowfreq_coherence(frames, r: float) -> float:
    """Mean cosine of consecutive low-pass bands (hard radius r)."""
    if len(frames) < 2:
        raise InsufficientDataError("lowfreq_coherence needs >=2 frames")
    bands = [low_pass(np.asarray(z, dtype=np.float64), r) for z in frames]
    return float(np.mean([
        _cosine(bands[i], bands[i + 1]) for i in range(len(bands) - 1)
    ]))


@dataclass(frozen=True)
class MetricsReport:
    """Raw scores; flicker and smoothness are lower-is-better here.

    as_row() flips their sign so every exported column reads
    higher-is-better.
    """

    subject_consistency: float
    background_consistency: float
    motion_smoothness: float
    temporal_flicker: float
    lowfreq_coherence: float
    n_frames: int

    NEGATED = ("motion_smoothness", "temporal_flicker")

    def as_row(self, run_id: str, config_hash: str) -> dict:
        row = {"run_id": run_id, "config_hash": config_hash}
        for f in fields(self):
            v = getattr(self, f.name)
            row[f.name] = -v if f.name in self.NEGATED else v
        return row


CSV_COLUMNS = [
    "run_id", "config_hash",
    "subject_consistency", "background_consistency",
    "motion_smoothness", "temporal_flicker", "lowfreq_coherence",
    "n_frames",
]


def compute_report(frames, masks, r: float) -> MetricsReport:
    """All scores for one run.  frames: list of [c,h,w]; masks: [h,w] bool."""
    return MetricsReport(
        subject_consistency=subject_consistency(frames, masks),
        background_consistency=background_consistency(frames, masks),
        motion_smoothness=motion_smoothness(frames),
        temporal_flicker=temporal_flicker(frames),
        lowfreq_coherence=lowfreq_coherence(frames, r),
        n_frames=len(frames),
    )


def write_metrics_csv(path, rows):
    """Write report rows (dicts from MetricsReport.as_row) to a CSV file."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
