"""Token attention primitives and subject masking.

Subject localization works off cross-attention: the attention mass each
query position puts on the subject word columns forms a relevance map,
which Otsu's method binarizes.  Masks gate which key/value rows neighboring
frames contribute when a frame's self-attention is widened with cross-frame
references.
"""

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateInputError, DimensionError

OTSU_BINS = 256


@dataclass(frozen=True)
class TokenMatrix:
    """n tokens of width d; grid_dims (h', w') when the tokens are spatial."""

    tokens: np.ndarray
    grid_dims: tuple | None = None

    @property
    def n(self) -> int:
        return self.tokens.shape[0]

    @property
    def d(self) -> int:
        return self.tokens.shape[1]


@dataclass(frozen=True)
class SubjectMask:
    """Binary spatial mask at token-grid resolution."""

    mask: np.ndarray
    resolution: tuple
    degenerate: bool = False

    @property
    def popcount(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def empty(cls, resolution, degenerate=True):
        return cls(np.zeros(resolution, dtype=bool), tuple(resolution), degenerate)


@dataclass(frozen=True)
class AttentionCapture:
    """Per-frame attention state recorded during a denoiser forward pass.

    cross_maps holds one subject-relevance grid per capture site;
    masked_keys are the content-key rows at mask==1 positions (raster order),
    the rows later pooled into the subject feature bank.
    """

    q: TokenMatrix
    k: TokenMatrix
    v: TokenMatrix
    cross_maps: list = field(default_factory=list)
    subject_mask: SubjectMask | None = None
    masked_keys: np.ndarray | None = None


def cross_attention_maps(q: TokenMatrix, k_text, subject_cols=None):
    """Subject-relevance map over the query grid.

    Softmax runs over all text-key columns; the map averages the columns in
    subject_cols (all columns when None).  Spatial contrast therefore needs
    non-subject context columns in k_text: with only subject columns the
    mass sums to one per row and the map is flat.

    Returns a grid shaped like q.grid_dims with values in (0, 1].
    """
    if q.grid_dims is None:
        raise DimensionError("query tokens carry no grid_dims")
    k_text = np.asarray(k_text, dtype=np.float64)
    if k_text.ndim != 2 or k_text.shape[0] < 1:
        raise DimensionError("k_text must be a nonempty [s, d] matrix")
    if k_text.shape[1] != q.d:
        raise DimensionError(
            f"key width {k_text.shape[1]} != query width {q.d}"
        )
    weights = kernels.attention_weights(np.asarray(q.tokens, np.float64), k_text)
    cols = np.arange(k_text.shape[0]) if subject_cols is None else np.asarray(subject_cols)
    return weights[:, cols].mean(axis=1).reshape(q.grid_dims)


def otsu_threshold(values) -> float:
    """Threshold maximizing inter-class variance over a 256-bin histogram.

    The histogram spans [min, max] of the input; candidate thresholds are
    the interior bin edges, ties resolved toward the lower edge.  Raises
    DegenerateInputError when all values are equal — equality judged at
    relative 1e-12, so spread that is pure floating-point residue does not
    manufacture a split.
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = values.min(), values.max()
    if hi - lo <= 1e-12 * max(abs(lo), abs(hi), 1e-300):
        raise DegenerateInputError("all values equal; no threshold exists")
    counts, edges = np.histogram(values, bins=OTSU_BINS, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    split = kernels.otsu_split(counts.astype(np.float64), centers)
    return float(edges[split])


def binarize(grid, threshold: float):
    """Boolean mask of cells strictly above the threshold."""
    return np.asarray(grid) > threshold


def resize_bilinear(grid, out_shape):
    """Bilinear resampling with corner-aligned coordinates.

    Identity when shapes already match; a single source row/column
    broadcasts.
    """
    grid = np.asarray(grid, dtype=np.float64)
    in_h, in_w = grid.shape
    out_h, out_w = out_shape
    if (in_h, in_w) == (out_h, out_w):
        return grid.copy()

    def coords(n_in, n_out):
        if n_out == 1 or n_in == 1:
            return np.zeros(n_out), np.zeros(n_out, dtype=int), np.zeros(n_out, dtype=int)
        x = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.floor(x).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return x - i0, i0, i1

    fy, y0, y1 = coords(in_h, out_h)
    fx, x0, x1 = coords(in_w, out_w)
    top = grid[y0][:, x0] * (1 - fx) + grid[y0][:, x1] * fx
    bot = grid[y1][:, x0] * (1 - fx) + grid[y1][:, x1] * fx
    return top * (1 - fy[:, None]) + bot * fy[:, None]


def build_subject_mask(maps) -> SubjectMask:
    """Fuse per-site relevance maps into one binary mask.

    Each map is Otsu-binarized at its own resolution, resampled to the
    largest capture resolution, and averaged; the average re-binarizes at
    0.5 with ties mapping to 1.  Flat maps are skipped; if every map is
    flat the result is an all-zero mask flagged degenerate.
    """
    grids = [np.asarray(m, dtype=np.float64) for m in maps]
    if not grids:
        raise DimensionError("build_subject_mask needs at least one map")
    target = max((g.shape for g in grids), key=lambda s: (s[0] * s[1], s))
    layers = []
    for g in grids:
        try:
            binary = binarize(g, otsu_threshold(g)).astype(np.float64)
        except DegenerateInputError:
            continue
        layers.append(resize_bilinear(binary, target))
    if not layers:
        return SubjectMask.empty(target)
    fused = np.mean(layers, axis=0) >= 0.5
    return SubjectMask(mask=fused, resolution=target, degenerate=False)


def collect_masked_kv(frames):
    """Concatenate mask-selected key/value rows across frames.

    frames is a sequence of (K, V, SubjectMask) with K, V shaped [n, d] in
    the mask's raster order.  Returns (k_ref, v_ref) stacked frame-major;
    both are [0, d] when every mask is empty.
    """
    ks, vs = [], []
    d = None
    for k, v, m in frames:
        k = np.asarray(k)
        v = np.asarray(v)
        if d is None:
            d = k.shape[1]
        elif k.shape[1] != d or v.shape[1] != d:
            raise DimensionError("inconsistent token widths across frames")
        if k.shape[0] != m.mask.size:
            raise DimensionError(
                f"mask size {m.mask.size} does not match {k.shape[0]} tokens"
            )
        flat = m.mask.ravel()
        ks.append(k[flat])
        vs.append(v[flat])
    if d is None:
        raise DimensionError("collect_masked_kv needs at least one frame")
    return np.concatenate(ks, axis=0), np.concatenate(vs, axis=0)


def sacfa_attention(q, k, v, k_ref, v_ref):
    """Self-attention widened with cross-frame reference rows.

    Computes softmax(q [k;k_ref]^T / sqrt(d)) [v;v_ref].  Empty references
    reduce it to vanilla self-attention over (k, v).
    """
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    k_ref = np.asarray(k_ref, dtype=np.float64).reshape(-1, k.shape[1])
    v_ref = np.asarray(v_ref, dtype=np.float64).reshape(-1, v.shape[1])
    if not (q.shape[1] == k.shape[1] == v.shape[1]):
        raise DimensionError("q/k/v widths differ")
    if k_ref.shape[0] != v_ref.shape[0]:
        raise DimensionError("reference key and value row counts differ")
    k_cat = np.concatenate((k, k_ref), axis=0)
    v_cat = np.concatenate((v, v_ref), axis=0)
    return kernels.attention(q, k_cat, v_cat)
