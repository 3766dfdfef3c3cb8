import numpy as np

from satground.domain import TaskKind, box_regions, partition_image
from satground.samples import SampleGeneratorSpec, generate_sample, generate_samples


def test_generation_is_deterministic():
    spec = SampleGeneratorSpec(count=5)
    a, b = generate_samples(spec), generate_samples(spec)
    for x, y in zip(a, b):
        assert x.id == y.id and x.prompt == y.prompt and x.ground_truth == y.ground_truth
        assert np.array_equal(x.image, y.image)


def test_offset_ids_and_task_mix():
    spec = SampleGeneratorSpec(count=20, id_offset=100, task_mix={"Detection": 1.0})
    samples = generate_samples(spec)
    assert [s.id for s in samples] == list(range(100, 120))
    assert all(s.task_kind is TaskKind.DETECTION for s in samples)


def test_relevance_is_planted_on_the_box():
    spec = SampleGeneratorSpec(task_mix={"Detection": 1.0})
    for i in range(20):
        s = generate_sample(spec, i)
        grid = partition_image(s.image, spec.region_height, spec.region_width)
        hits = set(box_regions(grid, s.ground_truth.value))
        assert len(hits) <= 16
        for r, rho in enumerate(s.relevance):
            assert (rho >= 0.6) == (r in hits)


def test_difficulty_range():
    spec = SampleGeneratorSpec(count=200, difficulty_low=0.2, difficulty_high=0.4)
    d = [s.difficulty for s in generate_samples(spec)]
    assert 0.2 <= min(d) and max(d) <= 0.4
