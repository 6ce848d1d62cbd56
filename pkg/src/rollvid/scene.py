"""Synthetic latent scenes, condition embeddings, and the two ε-predictors.

The scene renders smooth blobs drifting on a torus, which stand in for
video content.  Two predictors drive denoising: an analytic one for a
Gaussian data prior (exact, used to verify the sampler) and a small seeded
attention network (untrained, used to exercise every attention/guidance
code path with real tensor traffic).
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .attention import (
    AttentionCapture,
    SubjectMask,
    TokenMatrix,
    build_subject_mask,
    cross_attention_maps,
    sacfa_attention,
)
from .errors import ConfigurationError, DimensionError
from .schedule import NoiseSchedule

# sub-stream tags so blob colours, subject rows, and context rows never
# collide even under equal seeds
_TAG_CHAN = 101
_TAG_SUBJ = 211
_TAG_CTX = 223
_TAG_WEIGHTS = 307


@dataclass(frozen=True)
class Blob:
    subject_id: int
    radius: float
    velocity: tuple  # (vy, vx) in cells/frame
    position: tuple  # (y, x) at frame 0
    amplitude: float = 1.0


@dataclass(frozen=True)
class SceneSpec:
    """Deterministic moving-blob world on a (c, h, w) latent grid."""

    c: int
    h: int
    w: int
    subjects: tuple = ()
    background: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.c < 1 or self.h < 1 or self.w < 1:
            raise ConfigurationError("scene dims must be positive")
        for b in self.subjects:
            if b.radius < 1.0:
                raise ConfigurationError(
                    f"blob radius {b.radius} below one cell"
                )


@dataclass(frozen=True)
class ConditionEmbedding:
    """Token rows conditioning the denoiser; subject rows are flagged."""

    tokens: np.ndarray
    subject_token_rows: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=int)
    )

    @property
    def has_subjects(self) -> bool:
        return self.subject_token_rows.size > 0


def _channel_signature(subject_id: int, seed: int, c: int):
    """Unit-norm per-channel colour of a blob; fixed by (id, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_CHAN, subject_id]))
    v = rng.standard_normal(c)
    return v / np.linalg.norm(v)


def _toroidal_dist2(h, w, cy, cx):
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    ry = np.abs(yy - cy) % h
    rx = np.abs(xx - cx) % w
    dy = np.minimum(ry, h - ry)
    dx = np.minimum(rx, w - rx)
    return dy * dy + dx * dx


def render_frame(spec: SceneSpec, frame_index: int):
    """Render frame `frame_index`; returns (latent [c,h,w], mask [h,w]).

    Each blob is a cosine-profile bump centred at its wrapped position
    initial + velocity * frame_index; its channel colour is a seeded
    unit vector.  The ground-truth mask is the union of blob supports
    (toroidal distance strictly inside the radius).
    """
    if frame_index < 0:
        raise ConfigurationError("frame_index must be >= 0")
    latent = np.full((spec.c, spec.h, spec.w), spec.background, dtype=np.float64)
    mask = np.zeros((spec.h, spec.w), dtype=bool)
    for b in spec.subjects:
        cy = (b.position[0] + b.velocity[0] * frame_index) % spec.h
        cx = (b.position[1] + b.velocity[1] * frame_index) % spec.w
        dist = np.sqrt(_toroidal_dist2(spec.h, spec.w, cy, cx))
        inside = dist < b.radius
        profile = np.where(inside, 0.5 * (1.0 + np.cos(np.pi * dist / b.radius)), 0.0)
        colour = _channel_signature(b.subject_id, spec.seed, spec.c)
        latent += b.amplitude * colour[:, None, None] * profile[None, :, :]
        mask |= inside
    return latent, mask


def scene_video(spec: SceneSpec, n_frames: int):
    """Stack of rendered latents and masks for frames 0..n_frames-1."""
    frames, masks = [], []
    for k in range(n_frames):
        z, m = render_frame(spec, k)
        frames.append(z)
        masks.append(m)
    return np.stack(frames), np.stack(masks)


def make_condition(subject_ids, seed: int, d: int, context_tokens: int = 0):
    """Condition rows for the toy denoiser.

    Subject rows are unit-norm vectors fixed by (subject_id, seed);
    context rows (generic non-subject words) follow, fixed by (seed, slot).
    An empty id list yields a zero-row embedding — downstream subject
    machinery silently disables itself.
    """
    if d <= 0:
        raise ConfigurationError("embedding width d must be positive")
    if not subject_ids:
        return ConditionEmbedding(tokens=np.zeros((0, d), dtype=np.float64))
    rows = []
    for sid in subject_ids:
        rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_SUBJ, int(sid)]))
        v = rng.standard_normal(d)
        rows.append(v / np.linalg.norm(v))
    for j in range(context_tokens):
        rng = np.random.default_rng(np.random.SeedSequence([seed, _TAG_CTX, j]))
        v = rng.standard_normal(d)
        rows.append(v / np.linalg.norm(v))
    return ConditionEmbedding(
        tokens=np.stack(rows),
        subject_token_rows=np.arange(len(subject_ids)),
    )


def analytic_gaussian_epsilon(z_t, t, mu, sigma_d, sched: NoiseSchedule):
    """Exact noise prediction when the data prior is Normal(mu, sigma_d^2 I).

    Posterior mean of x0 given z_t is
        m = mu + (sqrt(a)·sigma_d^2 / (a·sigma_d^2 + 1 − a)) · (z_t − sqrt(a)·mu)
    with a = alpha_bar(t); the implied noise is (z_t − sqrt(a)·m)/sqrt(1−a).
    """
    if sigma_d <= 0:
        raise ConfigurationError("sigma_d must be positive")
    sched.check_t(t)
    z_t = np.asarray(z_t, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if z_t.shape != mu.shape:
        raise DimensionError(f"z_t shape {z_t.shape} != mu shape {mu.shape}")
    a = sched.alpha_bar(t)
    sa = np.sqrt(a)
    gain = sa * sigma_d**2 / (a * sigma_d**2 + 1.0 - a)
    m = mu + gain * (z_t - sa * mu)
    return (z_t - sa * m) / np.sqrt(1.0 - a)


def patchify(z, p: int):
    """[c,h,w] -> tokens [gh*gw, c*p*p] in raster order over the patch grid."""
    c, h, w = z.shape
    if h % p or w % p:
        raise DimensionError(f"grid {h}x{w} not divisible by patch size {p}")
    gh, gw = h // p, w // p
    t = z.reshape(c, gh, p, gw, p).transpose(1, 3, 0, 2, 4)
    return np.ascontiguousarray(t).reshape(gh * gw, c * p * p)


def unpatchify(tokens, c: int, h: int, w: int, p: int):
    """Inverse of patchify."""
    gh, gw = h // p, w // p
    if tokens.shape != (gh * gw, c * p * p):
        raise DimensionError(
            f"token matrix {tokens.shape} does not unpack to ({c},{h},{w}) at p={p}"
        )
    t = tokens.reshape(gh, gw, c, p, p).transpose(2, 0, 3, 1, 4)
    return np.ascontiguousarray(t).reshape(c, h, w)


def timestep_embedding(t: int, d: int):
    """Sinusoidal embedding of a scalar timestep into d dims (d even)."""
    half = d // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    ang = t * freqs
    return np.concatenate([np.sin(ang), np.cos(ang)])


class ToyDenoiser:
    """Fixed-weight patch-attention ε-predictor.

    patchify(p) -> embed -> +timestep embedding -> residual self-attention
    (optionally widened with cross-frame references) -> residual
    cross-attention against condition tokens -> linear head -> unpatchify.
    Weights come untrained from a seeded generator; the network verifies
    mechanism, not quality.  Forward passes are pure; `calls` counts them.
    """

    def __init__(self, c: int, weights_seed: int, d: int = 32, p: int = 4):
        if d % 2:
            raise ConfigurationError("token width d must be even")
        self.c, self.d, self.p = c, d, p
        self.weights_seed = weights_seed
        rng = np.random.default_rng(np.random.SeedSequence([weights_seed, _TAG_WEIGHTS]))

        def mat(n_in, n_out):
            return rng.standard_normal((n_in, n_out)) / np.sqrt(n_in)

        pdim = c * p * p
        self.w_embed = mat(pdim, d)
        self.w_q = mat(d, d)
        self.w_k = mat(d, d)
        self.w_v = mat(d, d)
        self.w_cq = mat(d, d)
        self.w_ck = mat(d, d)  # text key path: cond @ w_ck
        self.w_cv = mat(d, d)
        self.w_head = mat(d, pdim)
        self.calls = 0

    def content_keys(self, z):
        """Timestep-free key rows (patchify -> embed -> w_k).

        This path sees only frame content, so rows harvested from frames at
        different noise levels live in one comparable feature space; it is
        also the differentiable path the feature-bank guidance descends.
        """
        return (patchify(z, self.p) @ self.w_embed) @ self.w_k

    def _frame_forward(self, z, t, cond: ConditionEmbedding, sacfa_kv=None):
        c, h, w = z.shape
        if c != self.c:
            raise DimensionError(f"expected {self.c} channels, got {c}")
        gh, gw = h // self.p, w // self.p
        x = patchify(z, self.p) @ self.w_embed
        x = x + timestep_embedding(t, self.d)[None, :]

        q = x @ self.w_q
        k = x @ self.w_k
        v = x @ self.w_v
        if sacfa_kv is not None:
            k_ref, v_ref = sacfa_kv
            x = x + sacfa_attention(q, k, v, k_ref, v_ref)
        else:
            x = x + kernels.attention(q, k, v)

        maps = []
        subj_mask = SubjectMask.empty((gh, gw))
        masked = np.zeros((0, self.d), dtype=np.float64)
        if cond.tokens.shape[0] > 0:
            cq = TokenMatrix(x @ self.w_cq, grid_dims=(gh, gw))
            ck = cond.tokens @ self.w_ck
            cv = cond.tokens @ self.w_cv
            x = x + kernels.attention(cq.tokens, ck, cv)
            if cond.has_subjects:
                maps = [cross_attention_maps(cq, ck, cond.subject_token_rows)]
                subj_mask = build_subject_mask(maps)
                masked = self.content_keys(z)[subj_mask.mask.ravel()]

        eps = unpatchify(x @ self.w_head, c, h, w, self.p)
        capture = AttentionCapture(
            q=TokenMatrix(q, (gh, gw)),
            k=TokenMatrix(k, (gh, gw)),
            v=TokenMatrix(v, (gh, gw)),
            cross_maps=maps,
            subject_mask=subj_mask,
            masked_keys=masked,
        )
        return eps, capture

    def forward(self, window, timesteps, cond: ConditionEmbedding, sacfa_kv=None):
        """Denoise a window of latents, each at its own timestep.

        Frames are independent except through the shared sacfa_kv
        references.  Returns (eps list, capture list), aligned with the
        window.
        """
        if len(window) != len(timesteps):
            raise DimensionError("window and timestep counts differ")
        self.calls += 1
        out, caps = [], []
        for z, t in zip(window, timesteps):
            eps, cap = self._frame_forward(np.asarray(z, np.float64), t, cond, sacfa_kv)
            out.append(eps)
            caps.append(cap)
        return out, caps


_MODELS: dict = {}


def toy_denoiser_forward(window, timesteps, cond, weights_seed, sacfa_kv=None):
    """Functional wrapper over a cached ToyDenoiser keyed by (c, seed)."""
    c = np.asarray(window[0]).shape[0]
    key = (c, weights_seed)
    model = _MODELS.get(key)
    if model is None:
        model = _MODELS[key] = ToyDenoiser(c, weights_seed)
    return model.forward(window, timesteps, cond, sacfa_kv)
