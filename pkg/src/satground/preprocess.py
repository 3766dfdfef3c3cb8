"""Attention-guided multi-scale preprocessing of image regions.

Each region is discarded, box-downsampled or kept at full resolution
depending on where its attention score falls relative to two thresholds.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array

from ._seeding import rng_for
from .domain import (DEFAULT_BYTES_PER_PIXEL, DEFAULT_HEADER_BYTES, ByteSize, RegionGrid,
                     TaskAnswer, TaskKind, box_regions, byte_size, reassemble)

DISCARD, DOWNSAMPLE, PRESERVE = "discard", "downsample", "preserve"
_TAGS = {DISCARD: 0, DOWNSAMPLE: 1, PRESERVE: 2}
_RECORD = struct.Struct("<IBHH")
WIRE_HEADER_BYTES = _RECORD.size


@dataclass(frozen=True)
class RegionDecision:
    kind: str
    factor: float = 1.0  # per-axis downsampling divisor; 0 for a discard

    @property
    def kept(self) -> bool:
        return self.kind != DISCARD


@dataclass(frozen=True)
class RegionAttentionMap:
    scores: Tuple[float, ...]
    decisions: Tuple[RegionDecision, ...]
    alpha: float
    beta: float
    max_downsample_factor: float


@dataclass(frozen=True)
class FilteredImage:
    grid: RegionGrid
    regions: tuple  # None for discarded regions
    decisions: Tuple[RegionDecision, ...]
    total_bytes: ByteSize
    original_bytes: ByteSize
    retained_attention_mass: float

    @property
    def compression_ratio(self) -> float:
        return self.total_bytes.bytes / self.original_bytes.bytes

    @property
    def discarded(self) -> int:
        return sum(not d.kept for d in self.decisions)

    def reconstruct(self) -> np.ndarray:
        return reconstruct(self.grid, self.regions)


def scaling_factor(score: float, alpha: float, beta: float) -> float:
    if score == alpha:
        return math.inf
    return (beta - alpha) / (score - alpha)


def classify_region(score: float, alpha: float, beta: float,
                    max_factor: float = math.inf) -> RegionDecision:
    if not alpha < beta:
        raise ValueError(f"need alpha < beta, got {alpha}, {beta}")
    if score < alpha:
        return RegionDecision(DISCARD, 0.0)
    if score < beta:
        return RegionDecision(DOWNSAMPLE, min(scaling_factor(score, alpha, beta), max_factor))
    return RegionDecision(PRESERVE, 1.0)


def _bin_edges(n, out):
    return np.floor(np.arange(out + 1) * n / out).astype(int)


def downsample(region, c: float) -> np.ndarray:
    """Box-average ``region`` to ``ceil(H/c) x ceil(W/c)`` pixels."""
    if not c >= 1:
        raise ValueError(f"downsampling factor must be >= 1, got {c}")
    x = np.asarray(region, dtype=float)
    h, w = x.shape
    oh, ow = math.ceil(h / c), math.ceil(w / c)
    if (oh, ow) == (h, w):
        return x.copy()
    ey, ex = _bin_edges(h, oh), _bin_edges(w, ow)
    sums = np.add.reduceat(np.add.reduceat(x, ey[:-1], axis=0), ex[:-1], axis=1)
    return sums / np.outer(np.diff(ey), np.diff(ex))


def upsample(block, height: int, width: int) -> np.ndarray:
    """Nearest-neighbour expansion back to ``height x width`` (inverse of the binning)."""
    block = np.asarray(block, dtype=float)
    ry = np.repeat(np.arange(block.shape[0]), np.diff(_bin_edges(height, block.shape[0])))
    rx = np.repeat(np.arange(block.shape[1]), np.diff(_bin_edges(width, block.shape[1])))
    return block[np.ix_(ry, rx)]


def retained_mass(scores, kept) -> float:
    pos = np.clip(np.asarray(scores, dtype=float), 0.0, None)
    kept = np.asarray(kept, dtype=bool)
    total = pos.sum()
    if total == 0:
        return float(kept.mean())
    return min(1.0, float(pos[kept].sum() / total))


def build_attention_map(scores, alpha=0.35, beta=0.55, max_factor=math.inf) -> RegionAttentionMap:
    if not 0 <= alpha < beta:
        raise ValueError(f"need 0 <= alpha < beta, got {alpha}, {beta}")
    scores = tuple(float(s) for s in scores)
    decisions = tuple(classify_region(s, alpha, beta, max_factor) for s in scores)
    return RegionAttentionMap(scores, decisions, alpha, beta, max_factor)


def _finish(grid, regions, decisions, scores, bytes_per_pixel, header_bytes):
    return FilteredImage(
        grid=grid, regions=tuple(regions), decisions=tuple(decisions),
        total_bytes=byte_size(list(regions), bytes_per_pixel, header_bytes),
        original_bytes=byte_size(grid, bytes_per_pixel, header_bytes),
        retained_attention_mass=retained_mass(
            np.ones(len(grid)) if scores is None else scores, [d.kept for d in decisions]))


def apply_filter(grid: RegionGrid, attention: RegionAttentionMap,
                 bytes_per_pixel=DEFAULT_BYTES_PER_PIXEL,
                 header_bytes=DEFAULT_HEADER_BYTES) -> FilteredImage:
    if len(attention.decisions) != len(grid):
        raise ValueError(f"{len(attention.decisions)} decisions for {len(grid)} regions")
    regions = []
    for block, d in zip(grid.regions, attention.decisions):
        if d.kind == DISCARD:
            regions.append(None)
        elif d.kind == DOWNSAMPLE:
            regions.append(downsample(block, d.factor))
        else:
            regions.append(block)
    return _finish(grid, regions, attention.decisions, attention.scores,
                   bytes_per_pixel, header_bytes)


def mask_regions(grid: RegionGrid, discard, scores=None,
                 bytes_per_pixel=DEFAULT_BYTES_PER_PIXEL,
                 header_bytes=DEFAULT_HEADER_BYTES) -> FilteredImage:
    """Drop the regions whose indices are in ``discard``; keep the rest untouched."""
    discard = set(int(i) for i in discard)
    decisions = [RegionDecision(DISCARD, 0.0) if i in discard else RegionDecision(PRESERVE)
                 for i in range(len(grid))]
    regions = [None if i in discard else b for i, b in enumerate(grid.regions)]
    return _finish(grid, regions, decisions, scores, bytes_per_pixel, header_bytes)


def ideal_mask(grid: RegionGrid, ground_truth: TaskAnswer, mask_fraction: Optional[float] = None,
               scores=None, seed: int = 0, **size_kw) -> FilteredImage:
    """Oracle mask that never drops a region touching the target box.

    Without ``mask_fraction`` every non-target region is discarded; otherwise
    ``round(fraction * N)`` regions are discarded, drawn from the non-target
    ones (all of them if there are too few).
    """
    if ground_truth.kind is not TaskKind.DETECTION:
        raise ValueError("ideal masking needs a detection ground truth")
    target = set(box_regions(grid, ground_truth.value))
    others = [i for i in range(len(grid)) if i not in target]
    if mask_fraction is not None:
        count = min(int(round(mask_fraction * len(grid))), len(others))
        rng = rng_for(seed, "ideal-mask")
        others = sorted(rng.choice(others, size=count, replace=False).tolist()) if count else []
    return mask_regions(grid, others, scores, **size_kw)


def random_mask(grid: RegionGrid, mask_fraction: float, seed: int = 0, scores=None,
                **size_kw) -> FilteredImage:
    if not 0.0 <= mask_fraction <= 1.0:
        raise ValueError("mask_fraction must be in [0, 1]")
    count = int(round(mask_fraction * len(grid)))
    chosen = rng_for(seed, "random-mask").choice(len(grid), size=count, replace=False)
    return mask_regions(grid, chosen.tolist(), scores, **size_kw)


def attention_mask(grid: RegionGrid, scores, mask_fraction: float, **size_kw) -> FilteredImage:
    """Discard the ``round(fraction * N)`` lowest-attention regions (stable order)."""
    count = int(round(mask_fraction * len(grid)))
    order = np.argsort(np.asarray(scores, dtype=float), kind="stable")
    return mask_regions(grid, order[:count].tolist(), scores, **size_kw)


class MultiScaleFilter(BaseEstimator, TransformerMixin):
    """Threshold-based region filter in estimator form.

    ``transform`` maps attention scores to per-axis downsampling factors
    (0 means discard, 1 means keep at full resolution); :meth:`filter`
    applies the decisions to a region grid.
    """

    def __init__(self, alpha=0.35, beta=0.55, max_downsample_factor=None,
                 bytes_per_pixel=DEFAULT_BYTES_PER_PIXEL, header_bytes=DEFAULT_HEADER_BYTES):
        self.alpha = alpha
        self.beta = beta
        self.max_downsample_factor = max_downsample_factor
        self.bytes_per_pixel = bytes_per_pixel
        self.header_bytes = header_bytes

    def fit(self, X=None, y=None):
        if not 0 <= self.alpha < self.beta:
            raise ValueError(f"need 0 <= alpha < beta, got {self.alpha}, {self.beta}")
        return self

    def _cap(self, grid=None):
        if self.max_downsample_factor is not None:
            return float(self.max_downsample_factor)
        if grid is not None:
            return float(max(grid.region_height, grid.region_width))
        return math.inf

    def transform(self, X):
        X = check_array(np.atleast_2d(X), dtype=np.float64)
        cap = self._cap()
        return np.vectorize(lambda s: classify_region(s, self.alpha, self.beta, cap).factor)(X)

    def attention_map(self, scores, grid=None) -> RegionAttentionMap:
        self.fit()
        return build_attention_map(scores, self.alpha, self.beta, self._cap(grid))

    def filter(self, grid: RegionGrid, scores) -> FilteredImage:
        return apply_filter(grid, self.attention_map(scores, grid),
                            self.bytes_per_pixel, self.header_bytes)


# -- wire format -------------------------------------------------------------

def encode_filtered(filtered: FilteredImage) -> bytes:
    """Serialize as per-region records: index u32, tag u8, rows u16, cols u16, uint8 pixels."""
    out = bytearray()
    for index, (block, d) in enumerate(zip(filtered.regions, filtered.decisions)):
        if block is None:
            out += _RECORD.pack(index, _TAGS[DISCARD], 0, 0)
            continue
        block = np.asarray(block)
        out += _RECORD.pack(index, _TAGS[d.kind], *block.shape)
        out += np.round(np.clip(block, 0.0, 1.0) * 255).astype(np.uint8).tobytes()
    return bytes(out)


def decode_filtered(blob: bytes, grid_shape) -> list:
    """Parse a record stream into per-region pixel blocks (``None`` when discarded).

    ``grid_shape`` is ``(region_height, region_width, n_regions)``; downsampled
    blocks are returned at their transmitted size.
    """
    rh, rw, n = grid_shape
    regions = [None] * n
    offset = 0
    while offset < len(blob):
        index, tag, rows, cols = _RECORD.unpack_from(blob, offset)
        offset += _RECORD.size
        if tag == _TAGS[DISCARD]:
            continue
        size = rows * cols
        pixels = np.frombuffer(blob, dtype=np.uint8, count=size, offset=offset)
        regions[index] = pixels.reshape(rows, cols).astype(float) / 255.0
        offset += size
    return regions


def reconstruct(grid: RegionGrid, regions: Sequence) -> np.ndarray:
    """Ground-side image: discarded regions zero-filled, downsampled ones expanded."""
    full = [None if b is None else upsample(b, grid.region_height, grid.region_width)
            for b in regions]
    return reassemble(grid, full)
