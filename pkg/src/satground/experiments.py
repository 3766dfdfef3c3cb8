"""Offload-fraction sweep and region-masking experiments."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from ._seeding import rng_for
from .domain import TaskKind
from .models import infer, simi
from .orchestrator import MASK_ID_OFFSET, Pipeline
from .preprocess import attention_mask, ideal_mask, random_mask
from .samples import generate_samples

RANKED, RANDOM = "confidence_ranked", "random"


@dataclass(frozen=True)
class SweepRow:
    fraction: float
    confidence_ranked: float
    random: float


def _mean_with_offload(sat_simi, gnd_simi, offloaded):
    chosen = np.where(offloaded, gnd_simi, sat_simi)
    return float(chosen.mean()) if len(chosen) else math.nan


def sweep_offload(pipeline: Pipeline, fractions: Sequence[float], preprocess: bool = False,
                  seed: int = 0) -> List[SweepRow]:
    """Mean simi when exactly ``round(f * n)`` samples are answered on the ground.

    The ranked variant offloads the samples with the lowest final-stage
    confidence (ties kept in sample order); the random variant offloads a
    prefix of one seeded permutation, so its offload sets are nested.
    """
    if any(not 0.0 <= f <= 1.0 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    samples = pipeline.samples
    n = len(samples)
    sat_simi = np.empty(n)
    gnd_simi = np.empty(n)
    conf = np.empty(n)
    enc = pipeline.encoder
    for k, s in enumerate(samples):
        sat = pipeline.satellite_output(s)
        sat_simi[k] = simi(sat.answer, s.ground_truth, encoder=enc)
        mass = pipeline.offload_payload(s, preprocess)[2]
        gnd = pipeline.ground_output(s, mass)
        gnd_simi[k] = simi(gnd.answer, s.ground_truth, encoder=enc)
        conf[k] = pipeline.final_stage_score(s)
    ranked_order = np.argsort(conf, kind="stable")
    random_order = rng_for(seed, "sweep-random").permutation(n)
    rows = []
    for f in fractions:
        m = int(round(f * n))
        ranked = np.zeros(n, dtype=bool)
        ranked[ranked_order[:m]] = True
        rand = np.zeros(n, dtype=bool)
        rand[random_order[:m]] = True
        rows.append(SweepRow(float(f), _mean_with_offload(sat_simi, gnd_simi, ranked),
                             _mean_with_offload(sat_simi, gnd_simi, rand)))
    return rows


@dataclass(frozen=True)
class MaskRow:
    fraction: float  # requested share of discarded regions (achieved share for filter rows)
    strategy: str
    mean_simi: float
    std_simi: float
    mean_bytes: float
    mean_retained_mass: float
    n: int


@dataclass
class MaskingResult:
    rows: List[MaskRow]
    # per-strategy, per-fraction arrays of per-sample simi, aligned by sample
    per_sample: dict
    region_scores: dict  # sample id -> scores

    def simi(self, strategy, fraction) -> np.ndarray:
        return self.per_sample[(strategy, float(fraction))]


def detection_samples(pipeline: Pipeline, count: int, seed: Optional[int] = None):
    cfg = pipeline.config
    pp = cfg.preprocess
    spec = cfg.samples.spec(pp.region_height, pp.region_width, id_offset=MASK_ID_OFFSET,
                            count=count, seed=seed,
                            task_mix={TaskKind.DETECTION.value: 1.0})
    return generate_samples(spec)


def masking_experiment(pipeline: Pipeline, mask_fractions: Sequence[float], count: int = 500,
                       seed: Optional[int] = None, mask_seed: int = 0) -> MaskingResult:
    """Ground answers on detection tasks under random, ideal and attention masks.

    At each fraction all three strategies discard the same number of regions,
    so their byte budgets match. Two extra rows compare the threshold filter
    with a random mask discarding as many bytes.
    """
    samples = detection_samples(pipeline, count, seed)
    pp = pipeline.config.preprocess
    size_kw = dict(bytes_per_pixel=pp.bytes_per_pixel, header_bytes=pp.header_bytes)
    region_bytes = pp.region_height * pp.region_width * pp.bytes_per_pixel
    enc = pipeline.encoder
    per_sample = {}
    stats = {}
    scores_by_id = {}

    def record(strategy, fraction, filtered_list):
        sims, nbytes, masses = [], [], []
        for s, fi in zip(samples, filtered_list):
            out = infer(pipeline.ground_oracle, s, fi.retained_attention_mass, enc)
            sims.append(simi(out.answer, s.ground_truth, encoder=enc))
            nbytes.append(fi.total_bytes.bytes)
            masses.append(fi.retained_attention_mass)
        per_sample[(strategy, float(fraction))] = np.array(sims)
        stats[(strategy, float(fraction))] = (np.array(nbytes), np.array(masses))

    grids = [pipeline.grid(s) for s in samples]
    scores = [pipeline.region_scores(s, g) for s, g in zip(samples, grids)]
    for s, sc in zip(samples, scores):
        scores_by_id[s.id] = sc

    for f in mask_fractions:
        record("random", f, [random_mask(g, f, seed=_mix(mask_seed, s.id), scores=sc, **size_kw)
                             for s, g, sc in zip(samples, grids, scores)])
        record("ideal", f, [ideal_mask(g, s.ground_truth, f, scores=sc,
                                       seed=_mix(mask_seed, s.id), **size_kw)
                            for s, g, sc in zip(samples, grids, scores)])
        record("attention", f, [attention_mask(g, sc, f, **size_kw)
                                for g, sc in zip(grids, scores)])

    filtered = [pipeline.filter.filter(g, sc) for g, sc in zip(grids, scores)]
    saved = [fi.original_bytes.bytes - fi.total_bytes.bytes for fi in filtered]
    matched = []
    for s, g, sc, b in zip(samples, grids, scores, saved):
        count_m = min(len(g), int(round(b / region_bytes)))
        matched.append(random_mask(g, count_m / len(g), seed=_mix(mask_seed, s.id), scores=sc,
                                   **size_kw))
    achieved = float(np.mean([fi.discarded / len(fi.grid) for fi in filtered]))
    record("threshold_filter", achieved, filtered)
    record("random_byte_matched", achieved, matched)

    rows = []
    for (strategy, f), sims in per_sample.items():
        nbytes, masses = stats[(strategy, f)]
        rows.append(MaskRow(f, strategy, float(sims.mean()),
                            float(sims.std(ddof=1)) if len(sims) > 1 else 0.0,
                            float(nbytes.mean()), float(masses.mean()), len(sims)))
    return MaskingResult(rows, per_sample, scores_by_id)


def _mix(seed, sample_id):
    return int(rng_for(seed, "mask", sample_id).integers(2 ** 32))


def paired_z(a, b) -> float:
    """z statistic of ``mean(a - b)`` for per-sample paired values."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    sd = d.std(ddof=1) if len(d) > 1 else 0.0
    if sd == 0:
        return math.inf if d.mean() > 0 else (-math.inf if d.mean() < 0 else 0.0)
    return float(d.mean() / (sd / math.sqrt(len(d))))


def sweep_csv(rows: Sequence[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", RANKED, RANDOM])
    for r in rows:
        w.writerow([repr(r.fraction), repr(r.confidence_ranked), repr(r.random)])
    return buf.getvalue()


def masking_csv(rows: Sequence[MaskRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["fraction", "strategy", "mean_simi", "std_simi", "mean_bytes",
                "mean_retained_mass", "n"])
    for r in rows:
        w.writerow([repr(r.fraction), r.strategy, repr(r.mean_simi), repr(r.std_simi),
                    repr(r.mean_bytes), repr(r.mean_retained_mass), r.n])
    return buf.getvalue()


def region_scores_csv(scores: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["sample_id", "region_index", "score"])
    for sid in sorted(scores):
        for i, v in enumerate(scores[sid]):
            w.writerow([sid, i, repr(float(v))])
    return buf.getvalue()
