"""Seeded generator of synthetic observation tasks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from ._seeding import rng_for
from .domain import Sample, TaskAnswer, TaskKind, box_regions, partition_image

_OBJECTS = ("airplane", "bridge", "harbor", "stadium", "tennis court", "swimming pool",
            "storage tank", "roundabout")
_PROMPTS = {
    TaskKind.QA: "Is there a {obj} next to the road?",
    TaskKind.CLASSIFICATION: "Which scene category does this image show? Look for {obj}s.",
    TaskKind.DETECTION: "Locate the {obj} in the image.",
}


@dataclass(frozen=True)
class SampleGeneratorSpec:
    count: int = 1000
    seed: int = 0
    id_offset: int = 0
    difficulty_low: float = 0.0
    difficulty_high: float = 1.0
    task_mix: Dict[str, float] = field(default_factory=lambda: {
        "QA": 1.0, "Classification": 1.0, "Detection": 1.0})
    image_height: int = 160
    image_width: int = 160
    region_height: int = 16
    region_width: int = 16
    # target box side, in regions
    box_min_regions: float = 1.5
    box_max_regions: float = 3.0
    target_relevance: tuple = (0.6, 1.0)
    background_relevance: tuple = (0.0, 0.15)
    n_labels: int = 45
    qa_length: int = 24
    vocab_size: int = 1000


def generate_sample(spec: SampleGeneratorSpec, index: int) -> Sample:
    sid = spec.id_offset + index
    rng = rng_for(spec.seed, "sample", sid)
    kinds = [TaskKind(k) for k in spec.task_mix]
    weights = np.array([spec.task_mix[k.value] for k in kinds], dtype=float)
    kind = kinds[rng.choice(len(kinds), p=weights / weights.sum())]
    difficulty = float(rng.uniform(spec.difficulty_low, spec.difficulty_high))
    obj = _OBJECTS[rng.integers(len(_OBJECTS))]

    h, w = spec.image_height, spec.image_width
    scale = 2.0 if kind is TaskKind.CLASSIFICATION else 1.0
    bw = min(w - 1.0, rng.uniform(spec.box_min_regions, spec.box_max_regions) * spec.region_width * scale)
    bh = min(h - 1.0, rng.uniform(spec.box_min_regions, spec.box_max_regions) * spec.region_height * scale)
    x0 = float(np.floor(rng.uniform(0, w - bw)))
    y0 = float(np.floor(rng.uniform(0, h - bh)))
    box = (x0, y0, float(np.ceil(x0 + bw)), float(np.ceil(y0 + bh)))

    image = rng.uniform(0.1, 0.3, size=(h, w))
    image[int(box[1]):int(box[3]), int(box[0]):int(box[2])] = rng.uniform(0.7, 0.9)

    grid = partition_image(image, spec.region_height, spec.region_width)
    hits = set(box_regions(grid, box))
    lo_t, hi_t = spec.target_relevance
    lo_b, hi_b = spec.background_relevance
    draws = rng.uniform(size=len(grid))
    relevance = np.array([lo_t + (hi_t - lo_t) * u if i in hits else lo_b + (hi_b - lo_b) * u
                          for i, u in enumerate(draws)])

    if kind is TaskKind.DETECTION:
        truth = TaskAnswer.box(*box)
    elif kind is TaskKind.CLASSIFICATION:
        truth = TaskAnswer.label(int(rng.integers(spec.n_labels)))
    else:
        truth = TaskAnswer.qa(rng.integers(spec.vocab_size, size=spec.qa_length))
    return Sample(id=sid, image=image, prompt=_PROMPTS[kind].format(obj=obj),
                  ground_truth=truth, difficulty=difficulty, task_kind=kind,
                  relevance=relevance)


def generate_samples(spec: SampleGeneratorSpec) -> List[Sample]:
    return [generate_sample(spec, i) for i in range(spec.count)]
