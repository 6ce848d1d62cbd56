"""Subject feature bank and self-recurrent gradient guidance.

The bank keeps an m-row exponential moving average of subject-masked key
rows harvested from the cleanest frames.  Noisy tail frames are nudged
down the gradient of the squared distance between their own masked keys
and the bank, pulling the subject's features back toward its long-term
appearance before each denoising step.
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .attention import SubjectMask
from .errors import ConfigurationError, DimensionError, StateError
from .scene import ToyDenoiser, patchify, unpatchify
from .schedule import FrameLatent, NoiseSchedule

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SubjectBank:
    """Long-term subject key memory: fixed m-row EMA, decay lam."""

    k_ltm: np.ndarray
    lam: float
    initialized: bool = False

    @property
    def m(self) -> int:
        return self.k_ltm.shape[0]

    @classmethod
    def fresh(cls, m: int, d: int, lam: float):
        if not 0.0 <= lam <= 1.0:
            raise ConfigurationError("bank decay lam must lie in [0, 1]")
        if m < 1:
            raise ConfigurationError("bank row budget m must be >= 1")
        return cls(k_ltm=np.zeros((m, d), dtype=np.float64), lam=lam)


@dataclass(frozen=True)
class GuidanceConfig:
    gamma0: float = 0.05
    head_span: int = 16
    tail_span: int = 16

    def __post_init__(self):
        if self.gamma0 < 0:
            raise ConfigurationError("guidance gamma0 must be >= 0")
        if self.head_span < 1 or self.tail_span < 1:
            raise ConfigurationError("guidance spans must be >= 1")


def _group_slices(s: int, m: int):
    """Boundaries of m equal-occupancy groups over s rows (s >= m)."""
    edges = np.linspace(0, s, m + 1).astype(int)
    return list(zip(edges[:-1], edges[1:]))


def reduce_rows(rows, m: int):
    """Map an [s, d] row set onto a fixed m-row layout (raster order kept).

    s >= m: means of m equal-occupancy contiguous groups.  0 < s < m: the
    rows themselves, padded with copies of their mean.  s == 0 is the
    caller's problem (empty masks disable guidance upstream).
    """
    rows = np.asarray(rows, dtype=np.float64)
    s = rows.shape[0]
    if s == 0:
        raise DimensionError("cannot reduce an empty row set")
    if s >= m:
        return np.stack([rows[a:b].mean(axis=0) for a, b in _group_slices(s, m)])
    pad = np.repeat(rows.mean(axis=0, keepdims=True), m - s, axis=0)
    return np.concatenate([rows, pad], axis=0)


def _reduce_adjoint(grad_r, s: int):
    """Pull a gradient on reduce_rows(rows, m) back onto the s input rows."""
    m = grad_r.shape[0]
    if s >= m:
        out = np.empty((s, grad_r.shape[1]), dtype=np.float64)
        for g, (a, b) in enumerate(_group_slices(s, m)):
            out[a:b] = grad_r[g] / (b - a)
        return out
    return grad_r[:s] + grad_r[s:].sum(axis=0, keepdims=True) / s


def init_bank(captures, m: int, lam: float) -> SubjectBank:
    """Seed the bank from the first clean window's masked key rows.

    All rows across the captures are pooled then reduced to m rows.  When
    every mask came up empty the bank is returned uninitialized and
    guidance stays disabled.
    """
    pooled = [c.masked_keys for c in captures if c.masked_keys is not None
              and c.masked_keys.shape[0] > 0]
    if not pooled:
        log.warning("no subject rows in the initial window; guidance disabled")
        d = captures[0].k.d if captures else 1
        return SubjectBank.fresh(m, d, lam)
    rows = np.concatenate(pooled, axis=0)
    bank = SubjectBank.fresh(m, rows.shape[1], lam)
    return replace(bank, k_ltm=reduce_rows(rows, m), initialized=True)


def update_bank(bank: SubjectBank, current) -> SubjectBank:
    """EMA step: k_ltm <- lam*k_ltm + ((1-lam)/f)*sum_t reduce(masked_keys_t).

    Captures whose masks are empty carry no subject evidence; they are
    excluded and f counts only contributing captures.  With none, the bank
    is unchanged.
    """
    if not bank.initialized:
        raise StateError("update_bank on an uninitialized bank")
    reduced = [reduce_rows(c.masked_keys, bank.m) for c in current
               if c.masked_keys is not None and c.masked_keys.shape[0] > 0]
    if not reduced:
        return bank
    mean = np.mean(reduced, axis=0)
    return replace(bank, k_ltm=bank.lam * bank.k_ltm + (1.0 - bank.lam) * mean)


def _masked_reduced_keys(data, mask: SubjectMask, model: ToyDenoiser, m: int):
    keys = model.content_keys(np.asarray(data, dtype=np.float64))
    if keys.shape[0] != mask.mask.size:
        raise DimensionError(
            f"mask resolution {mask.resolution} does not cover {keys.shape[0]} tokens"
        )
    rows = keys[mask.mask.ravel()]
    reduced = reduce_rows(rows, m) if rows.shape[0] else None
    return rows, reduced


def guidance_loss(data, mask: SubjectMask, bank: SubjectBank, model: ToyDenoiser) -> float:
    """L(z) = ||k_ltm - reduce(masked content keys of z)||_F^2."""
    rows, reduced = _masked_reduced_keys(data, mask, model, bank.m)
    if rows.shape[0] == 0:
        return 0.0
    return float(np.sum((bank.k_ltm - reduced) ** 2))


def guidance_gradient(data, mask: SubjectMask, bank: SubjectBank, model: ToyDenoiser):
    """Exact dL/dz for the bank-matching loss, mask held constant.

    The key path is linear (patchify -> w_embed -> w_k -> row select ->
    group reduce), so the gradient is the chain of transposes applied to
    2*(reduce(K') - k_ltm).  Empty mask: zero gradient.
    """
    if not bank.initialized:
        raise StateError("guidance_gradient needs an initialized bank")
    data = np.asarray(data, dtype=np.float64)
    rows, reduced = _masked_reduced_keys(data, mask, model, bank.m)
    if rows.shape[0] == 0:
        return np.zeros_like(data)
    grad_r = 2.0 * (reduced - bank.k_ltm)            # dL/dR
    grad_rows = _reduce_adjoint(grad_r, rows.shape[0])  # dL/dK_masked
    n = mask.mask.size
    grad_k = np.zeros((n, model.d), dtype=np.float64)
    grad_k[mask.mask.ravel()] = grad_rows            # scatter to all tokens
    grad_tokens = (grad_k @ model.w_k.T) @ model.w_embed.T
    c, h, w = data.shape
    return unpatchify(grad_tokens, c, h, w, model.p)


def gamma_t(gamma0: float, t: int, sched: NoiseSchedule) -> float:
    """Guidance strength gamma0*sqrt(1-alpha_bar(t)): strong early, ->0 clean."""
    return gamma0 * np.sqrt(1.0 - sched.alpha_bar(t))


def apply_guidance(z: FrameLatent, grad, t: int, cfg: GuidanceConfig,
                   sched: NoiseSchedule) -> FrameLatent:
    """Descend the bank-matching loss: data <- data - gamma_t * grad."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != z.data.shape:
        raise DimensionError(f"gradient shape {grad.shape} != latent {z.data.shape}")
    step = gamma_t(cfg.gamma0, t, sched)
    return FrameLatent(
        data=z.data - step * grad,
        noise_level=z.noise_level,
        frame_index=z.frame_index,
    )
