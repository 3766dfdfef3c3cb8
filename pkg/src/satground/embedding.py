"""Synthetic visual/text encoders and text-image attention scoring.

The encoders stand in for a pretrained vision-language backbone. Region
tokens are a seeded mixture of a prompt-aligned direction and a random
direction, weighted by a planted relevance value, so the attention score of a
region is controlled by that relevance. A weak difficulty direction is mixed
into the random part so pooled image features carry information about how hard
the sample is.
"""
from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Tuple

import numpy as np

from ._seeding import rng_for


@dataclass(frozen=True)
class EncoderSpec:
    embedding_dim: int = 64
    tokens_per_region: int = 4
    tokens_per_prompt: int = 8
    seed: int = 0
    # (sample_id, region_index) -> planted relevance in [0, 1]
    relevance_injection: Mapping[Tuple[int, int], float] = field(default_factory=dict)
    default_relevance: float = 0.0
    prompt_spread: float = 0.3
    difficulty_gain: float = 0.5

    def __post_init__(self):
        if min(self.embedding_dim, self.tokens_per_region, self.tokens_per_prompt) < 1:
            raise ValueError("encoder dimensions must be >= 1")


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=-1, keepdims=True)


def _gaussian_unit(rng, shape):
    return _unit_rows(rng.standard_normal(shape))


@functools.lru_cache(maxsize=4096)
def _direction(seed, label, dim, prompt=""):
    v = _gaussian_unit(rng_for(seed, label, prompt), dim)
    v.setflags(write=False)
    return v


def prompt_direction(prompt: str, spec: EncoderSpec) -> np.ndarray:
    return _direction(spec.seed, "prompt-direction", spec.embedding_dim, prompt)


def difficulty_direction(spec: EncoderSpec) -> np.ndarray:
    return _direction(spec.seed, "difficulty-direction", spec.embedding_dim)


def encode_prompt(prompt: str, spec: EncoderSpec) -> np.ndarray:
    """``tokens_per_prompt`` unit rows scattered around the prompt direction."""
    if not prompt:
        raise ValueError("prompt must be non-empty")
    u = prompt_direction(prompt, spec)
    noise = rng_for(spec.seed, "prompt-tokens", prompt).standard_normal(
        (spec.tokens_per_prompt, spec.embedding_dim)) / math.sqrt(spec.embedding_dim)
    return _unit_rows(u + spec.prompt_spread * noise)


def _region_noise(spec, sample_id, n_regions):
    """Scaled Gaussian noise for the first ``n_regions`` regions of a sample.

    One stream per sample; region r always takes the r-th slice, however many
    regions are drawn.
    """
    d = spec.embedding_dim
    rng = rng_for(spec.seed, "region-noise", sample_id)
    return rng.standard_normal((n_regions, spec.tokens_per_region, d)) / math.sqrt(d)


def encode_region(region, spec: EncoderSpec, sample_id: int, region_index: int, *,
                  prompt: str, relevance: Optional[float] = None,
                  difficulty: float = 0.5) -> np.ndarray:
    """``tokens_per_region`` unit rows for one image region.

    Pixel content only has to be non-empty; the tokens are keyed by
    ``(seed, sample_id, region_index)``.
    """
    if region is None or np.asarray(region).size == 0:
        raise ValueError("region must be non-empty")
    if relevance is None:
        relevance = spec.relevance_injection.get((sample_id, region_index),
                                                 spec.default_relevance)
    rho = float(relevance)
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"relevance {rho} outside [0, 1]")
    noise = _region_noise(spec, sample_id, region_index + 1)[region_index]
    rand = _unit_rows(noise + spec.difficulty_gain * (2 * difficulty - 1) * difficulty_direction(spec))
    return _unit_rows(rho * prompt_direction(prompt, spec) + (1.0 - rho) * rand)


def encode_sample(sample, grid, spec: EncoderSpec) -> np.ndarray:
    """Token tensor of shape (regions, tokens_per_region, embedding_dim).

    Equal, region by region, to :func:`encode_region`; the arithmetic is
    batched over regions.
    """
    n = len(grid.regions)
    if any(np.asarray(block).size == 0 for block in grid.regions):
        raise ValueError("region must be non-empty")
    if sample.relevance is None:
        rho = np.array([spec.relevance_injection.get((sample.id, r), spec.default_relevance)
                        for r in range(n)], dtype=float)
    else:
        rho = np.asarray(sample.relevance, dtype=float)[:n]
    if np.any((rho < 0) | (rho > 1)):
        raise ValueError(f"relevance outside [0, 1]: {rho[(rho < 0) | (rho > 1)][0]}")
    noise = _region_noise(spec, sample.id, n)
    rand = _unit_rows(noise + spec.difficulty_gain * (2 * sample.difficulty - 1)
                      * difficulty_direction(spec))
    return _unit_rows(rho[:, None, None] * prompt_direction(sample.prompt, spec)
                      + (1.0 - rho)[:, None, None] * rand)


def pooled_features(region_tokens: np.ndarray) -> np.ndarray:
    """Whole-image feature vector: mean over every region token."""
    return region_tokens.reshape(-1, region_tokens.shape[-1]).mean(axis=0)


def _running_sum(terms):
    """Left-to-right sum over the last axis, one rounded addition at a time."""
    acc = np.zeros(terms.shape[:-1])
    for k in range(terms.shape[-1]):
        acc = acc + terms[..., k]
    return acc


def attention_scores(region_tokens, text_tokens, normalize: bool = True) -> np.ndarray:
    """Text-image attention for a stack of regions, shape (regions, N_V, D).

    Dot products, squared norms and the pair sum accumulate strictly left to
    right (image token outer, text token inner), vectorized across pairs, so
    each score is bit-identical to a plain scalar double loop.
    """
    v = np.asarray(region_tokens, dtype=float)
    e = np.asarray(text_tokens, dtype=float)
    if v.ndim != 3 or e.ndim != 2 or v.shape[2] != e.shape[1]:
        raise ValueError(f"token matrices disagree in embedding dimension: "
                         f"{v.shape[1:]} vs {e.shape}")
    n_r, n_v, _ = v.shape
    n_e = e.shape[0]
    v_norm = np.sqrt(_running_sum(v * v))
    e_norm = np.sqrt(_running_sum(e * e))
    dots = _running_sum(v[:, :, None, :] * e[None, None, :, :])
    cosines = dots / (v_norm[:, :, None] * e_norm[None, None, :])
    totals = _running_sum(cosines.reshape(n_r, n_v * n_e))
    if normalize:
        return totals / (n_v * n_e)
    return totals


def attention_score(image_tokens, text_tokens, normalize: bool = True) -> float:
    """Sum of pairwise cosines between image and text tokens.

    With ``normalize`` the sum is divided by the number of pairs, giving a
    value in [-1, 1].
    """
    v = np.asarray(image_tokens, dtype=float)
    if v.ndim != 2:
        raise ValueError("image tokens must be a 2-D matrix")
    return float(attention_scores(v[None], text_tokens, normalize)[0])


region_scores = attention_scores
