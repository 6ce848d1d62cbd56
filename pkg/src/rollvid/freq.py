"""2D spectral filtering and the blended tail latent.

A hard circular mask in the centered (DC-at-center) frequency plane splits a
latent into complementary low and high bands.  The freshly enqueued top-level
latent takes its low band from the re-noised second-to-last latent and its
high band from new Gaussian noise, so layout persists while dynamics stay
fresh.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, QueueInvariantError
from .schedule import FrameLatent, NoiseSchedule, renoise


@dataclass(frozen=True)
class FreqMask:
    """Binary pass mask over an h-by-w centered spectrum."""

    h: int
    w: int
    r: float
    mask: np.ndarray


def freq_mask(h: int, w: int, r: float) -> FreqMask:
    """Ideal low-pass disc: 1 where the per-axis-normalized radius is <= r.

    Radii are normalized by each axis half-extent, so r is resolution
    independent; r = sqrt(2) covers the spectrum corners.
    """
    if r < 0:
        raise ConfigurationError(f"low_pass_threshold must be >= 0, got {r}")
    u = (np.arange(h) - h // 2) / (h / 2.0)
    v = (np.arange(w) - w // 2) / (w / 2.0)
    radius2 = u[:, None] ** 2 + v[None, :] ** 2
    return FreqMask(h=h, w=w, r=r, mask=(radius2 <= r * r).astype(np.float64))


def _filter(x, r: float, complement: bool):
    x = np.asarray(x, dtype=np.float64)
    grids = x[None] if x.ndim == 2 else x
    h, w = grids.shape[-2:]
    m = freq_mask(h, w, r).mask
    if complement:
        m = 1.0 - m
    spec = np.fft.fftshift(np.fft.fft2(grids), axes=(-2, -1))
    out = np.fft.ifft2(np.fft.ifftshift(spec * m, axes=(-2, -1))).real
    return out[0] if x.ndim == 2 else out


def low_pass(x, r: float):
    """Per-channel low band of x (grid [h,w] or [c,h,w]) under freq_mask."""
    return _filter(x, r, complement=False)


def high_pass(x, r: float):
    """Per-channel high band: the complement, so low_pass + high_pass == x."""
    return _filter(x, r, complement=True)


def coherent_tail_sample(
    z_second_to_last: FrameLatent,
    sched: NoiseSchedule,
    renoise_eta,
    band_eta,
    r: float,
) -> FrameLatent:
    """Blend a new top-level latent from the level T-1 neighbor.

    The neighbor is lifted one level with renoise_eta, then its low band is
    combined with the high band of band_eta (a fresh unit Gaussian draw).
    The result carries level T and the next frame index.
    """
    T = sched.T
    if z_second_to_last.noise_level != T - 1:
        raise QueueInvariantError(
            f"tail sampling needs a level {T - 1} latent, got level "
            f"{z_second_to_last.noise_level}"
        )
    z_hat = renoise(z_second_to_last.data, T, renoise_eta, sched)
    data = low_pass(z_hat, r) + high_pass(band_eta, r)
    return FrameLatent(
        data=data,
        noise_level=T,
        frame_index=z_second_to_last.frame_index + 1,
    )
