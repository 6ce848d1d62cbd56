"""Noise schedule arithmetic: the ladder of betas/alphas/alpha-bars, the
forward noising process, the deterministic DDIM update, and the single-level
re-noising transition used when recycling a latent back to the top level.

All operations are pure functions over immutable inputs; a NoiseSchedule can
be shared freely across threads.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError, TimestepError


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion ladder with T discrete levels.

    Arrays are indexed 0..T-1 for levels 1..T; ``alpha_bar(0)`` is defined
    as 1 (a level-0 latent is clean).
    """

    T: int
    betas: np.ndarray
    alphas: np.ndarray
    alpha_bars: np.ndarray

    def alpha_bar(self, t: int) -> float:
        """Cumulative signal fraction at level t, with alpha_bar(0) == 1."""
        if t == 0:
            return 1.0
        return float(self.alpha_bars[t - 1])

    def check_t(self, t: int, lo: int = 1):
        if not lo <= t <= self.T:
            raise TimestepError(f"timestep {t} outside [{lo}, {self.T}]")


@dataclass(frozen=True)
class FrameLatent:
    """One frame's latent grid [c, h, w] tagged with its noise level and its
    position in the emission order (1-based; level 0 means fully denoised)."""

    data: np.ndarray
    noise_level: int
    frame_index: int = field(default=0)

    def __post_init__(self):
        if not np.isfinite(self.data).all():
            raise ValueError(
                f"non-finite values in latent for frame {self.frame_index}"
            )


def build_schedule(T: int, beta_start: float, beta_end: float) -> NoiseSchedule:
    """Linear beta ladder from beta_start to beta_end over T steps.

    Raises ConfigurationError naming the offending key when the range is
    invalid (T must be >= 2 and 0 < beta_start <= beta_end < 1).
    """
    if T < 2:
        raise ConfigurationError(f"T must be >= 2, got T={T}")
    if not 0.0 < beta_start <= beta_end:
        raise ConfigurationError(
            f"beta_start must satisfy 0 < beta_start <= beta_end, got beta_start={beta_start}"
        )
    if beta_end >= 1.0:
        raise ConfigurationError(f"beta_end must be < 1, got beta_end={beta_end}")
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alphas = 1.0 - betas
    alpha_bars = np.cumprod(alphas)
    return NoiseSchedule(T=T, betas=betas, alphas=alphas, alpha_bars=alpha_bars)


def forward_diffuse(x0, t: int, eps, sched: NoiseSchedule):
    """q(z_t | x_0): sqrt(abar_t) * x0 + sqrt(1 - abar_t) * eps."""
    sched.check_t(t)
    if x0.shape != eps.shape:
        raise DimensionError(f"x0 shape {x0.shape} != eps shape {eps.shape}")
    ab = sched.alpha_bar(t)
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def ddim_step(z_t, eps_hat, t: int, sched: NoiseSchedule):
    """One deterministic DDIM update from level t to level t-1 (eta = 0).

    Reconstructs x0_hat from the noise estimate, then re-composes at the
    next-lower level; at t == 1 the result is x0_hat itself.
    """
    sched.check_t(t)
    ab_t = sched.alpha_bar(t)
    ab_prev = sched.alpha_bar(t - 1)
    x0_hat = (z_t - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0_hat + np.sqrt(1.0 - ab_prev) * eps_hat


def renoise(z_prev, t: int, eta, sched: NoiseSchedule):
    """One-step forward transition lifting a level t-1 latent to level t.

    q(z_t | z_{t-1}) with the cumulative ratio abar_t / abar_{t-1}, so that
    renoising a correct level t-1 marginal yields the level t marginal.
    """
    if t <= 1:
        raise TimestepError(f"renoise targets levels 2..T, got t={t}")
    sched.check_t(t)
    ratio = sched.alpha_bar(t) / sched.alpha_bar(t - 1)
    return np.sqrt(ratio) * z_prev + np.sqrt(1.0 - ratio) * eta
