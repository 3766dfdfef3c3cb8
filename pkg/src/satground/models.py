"""Synthetic inference oracles for the onboard and ground models, plus task metrics."""
from __future__ import annotations

import functools
import math
import subprocess
import sys
from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np

from ._seeding import rng_for
from .domain import Sample, TaskAnswer, TaskKind
from .embedding import EncoderSpec

SATELLITE, GROUND = "satellite", "ground"
DEFAULT_OUTPUT_LENGTHS = {TaskKind.QA: 24, TaskKind.CLASSIFICATION: 4, TaskKind.DETECTION: 16}


def logistic_accuracy(d, k, d0):
    return 1.0 / (1.0 + np.exp(k * (np.asarray(d, dtype=float) - d0)))


@dataclass(frozen=True)
class OracleSpec:
    role: str = SATELLITE
    k: float = 8.0
    d0: float = 0.45
    tokens_per_second: float = 6.0
    encode_latency_s: float = 0.5
    output_length_tokens: Dict[TaskKind, int] = field(
        default_factory=lambda: dict(DEFAULT_OUTPUT_LENGTHS))
    degradation_exponent: float = 0.5
    seed: int = 1
    vocab_size: int = 1000
    n_labels: int = 45
    # detection failures shift the box by this many pixels
    box_shift_px: float = 16.0
    token_embed_dim: int = 16
    token_signal: float = 0.6
    token_noise: float = 0.6

    def __post_init__(self):
        if self.role not in (SATELLITE, GROUND):
            raise ValueError(f"unknown oracle role {self.role!r}")
        if self.tokens_per_second <= 0 or self.encode_latency_s < 0:
            raise ValueError("tokens_per_second must be > 0 and encode_latency_s >= 0")
        if self.degradation_exponent < 0:
            raise ValueError("degradation_exponent must be >= 0")
        lengths = {TaskKind(k): int(v) for k, v in self.output_length_tokens.items()}
        if any(v < 1 for v in lengths.values()):
            raise ValueError("output lengths must be >= 1")
        object.__setattr__(self, "output_length_tokens", lengths)

    def accuracy(self, difficulty):
        return logistic_accuracy(difficulty, self.k, self.d0)

    def output_length(self, kind) -> int:
        return self.output_length_tokens[TaskKind(kind)]


def satellite_spec(**kw) -> OracleSpec:
    return OracleSpec(**{"role": SATELLITE, **kw})


def ground_spec(**kw) -> OracleSpec:
    base = dict(role=GROUND, k=8.0, d0=0.8, tokens_per_second=40.0, encode_latency_s=0.1, seed=2)
    return OracleSpec(**{**base, **kw})


def check_ordering(satellite: OracleSpec, ground: OracleSpec, points: int = 101):
    """Raise unless the ground model is at least as accurate at every difficulty."""
    grid = np.linspace(0.0, 1.0, points)
    bad = grid[satellite.accuracy(grid) > ground.accuracy(grid)]
    if bad.size:
        raise ValueError(f"satellite oracle beats ground oracle at difficulty {bad[0]:.2f}")


@dataclass(frozen=True)
class OracleOutput:
    answer: TaskAnswer
    tokens: Tuple[int, ...]
    latency_s: float
    answer_embedding: np.ndarray = field(repr=False)
    # per-token hidden features consumed by the confidence network
    token_features: np.ndarray = field(repr=False)
    correct: bool = False


def answer_embedding(answer: TaskAnswer, spec: Optional[EncoderSpec] = None) -> np.ndarray:
    spec = spec or EncoderSpec()
    v = rng_for(spec.seed, "answer", answer.kind.value, answer.to_text()).standard_normal(
        spec.embedding_dim)
    return v / np.linalg.norm(v)


def answer_tokens(answer: TaskAnswer, length: int, vocab_size: int = 1000) -> Tuple[int, ...]:
    if answer.kind is TaskKind.QA:
        return tuple(answer.value[:length])
    rng = rng_for("answer-tokens", answer.kind.value, answer.to_text())
    return tuple(int(t) for t in rng.integers(vocab_size, size=length))


def wrong_answer(sample: Sample, spec: OracleSpec) -> TaskAnswer:
    """The single deterministic wrong answer both oracles give for ``sample``."""
    gt = sample.ground_truth
    if gt.kind is TaskKind.CLASSIFICATION:
        return TaskAnswer.label((gt.value + 1) % spec.n_labels)
    if gt.kind is TaskKind.DETECTION:
        x0, y0, x1, y1 = gt.value
        return TaskAnswer.box(x0 + spec.box_shift_px, y0, x1 + spec.box_shift_px, y1)
    n = len(gt.value)
    tokens = rng_for("distractor", sample.id).integers(spec.vocab_size, size=n)
    if tuple(tokens) == gt.value:
        tokens[0] = (tokens[0] + 1) % spec.vocab_size
    return TaskAnswer.qa(tokens)


@functools.lru_cache(maxsize=None)
def _token_base(token: int, dim: int) -> np.ndarray:
    v = rng_for("token-embedding", token).standard_normal(dim) / math.sqrt(dim)
    v.setflags(write=False)
    return v


@functools.lru_cache(maxsize=None)
def _confidence_direction(dim: int) -> np.ndarray:
    v = rng_for("token-confidence-direction").standard_normal(dim)
    v /= np.linalg.norm(v)
    v.setflags(write=False)
    return v


def _token_features(spec: OracleSpec, sample_id, tokens, correct) -> np.ndarray:
    """Hidden features of generated tokens; their projection on a fixed
    direction leans positive when the answer is right."""
    dim = spec.token_embed_dim
    base = np.stack([_token_base(t, dim) for t in tokens])
    conf_dir = _confidence_direction(dim)
    noise = rng_for(spec.seed, "token-noise", sample_id).standard_normal(len(tokens))
    strength = (spec.token_signal if correct else -spec.token_signal) + spec.token_noise * noise
    return base + strength[:, None] * conf_dir


def infer(spec: OracleSpec, sample: Sample, retained_mass: float = 1.0,
          encoder: Optional[EncoderSpec] = None) -> OracleOutput:
    """Answer ``sample``; correctness is a seeded draw at ``p(d) * mass**gamma``."""
    if not 0.0 <= retained_mass <= 1.0:
        raise ValueError(f"retained mass {retained_mass} outside [0, 1]")
    p = float(spec.accuracy(sample.difficulty)) * retained_mass ** spec.degradation_exponent
    correct = bool(rng_for(spec.seed, "correct", sample.id).random() < p)
    answer = sample.ground_truth if correct else wrong_answer(sample, spec)
    length = spec.output_length(sample.task_kind)
    tokens = answer_tokens(answer, length, spec.vocab_size)
    return OracleOutput(
        answer=answer,
        tokens=tokens,
        latency_s=spec.encode_latency_s + length / spec.tokens_per_second,
        answer_embedding=answer_embedding(answer, encoder),
        token_features=_token_features(spec, sample.id, tokens, correct),
        correct=correct,
    )


def iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def simi(a: TaskAnswer, b: TaskAnswer, task_kind=None, encoder: Optional[EncoderSpec] = None) -> float:
    """Task-specific answer similarity in [0, 1]."""
    kind = TaskKind(task_kind) if task_kind is not None else a.kind
    if a.kind is not kind or b.kind is not kind:
        raise ValueError(f"cannot compare {a.kind.value} with {b.kind.value} as {kind.value}")
    if kind is TaskKind.CLASSIFICATION:
        return 1.0 if a.value == b.value else 0.0
    if kind is TaskKind.DETECTION:
        return iou(a.value, b.value)
    if a == b:
        return 1.0
    cos = float(answer_embedding(a, encoder) @ answer_embedding(b, encoder))
    return (1.0 + cos) / 2.0


# -- external oracle protocol ------------------------------------------------
#
# One request per line on the oracle's stdin:   <sample_id>\t<task_kind>\n
# One response per line on its stdout:          <answer_text>\t<latency_s>\n
# Answer text uses TaskAnswer.to_text(): space-separated tokens for QA, the
# label for classification, "x_min,y_min,x_max,y_max" for detection.

def format_request(sample: Sample) -> str:
    return f"{sample.id}\t{sample.task_kind.value}\n"


def parse_response(line: str, kind) -> Tuple[TaskAnswer, float]:
    answer_text, latency = line.rstrip("\n").split("\t")
    return TaskAnswer.from_text(kind, answer_text), float(latency)


class ExternalOracle:
    """Oracle backed by a subprocess speaking the line protocol above."""

    def __init__(self, command, encoder: Optional[EncoderSpec] = None, vocab_size: int = 1000):
        self.encoder = encoder
        self.vocab_size = vocab_size
        self._proc = subprocess.Popen(command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                                      text=True, bufsize=1)

    def infer(self, sample: Sample, retained_mass: float = 1.0) -> OracleOutput:
        self._proc.stdin.write(format_request(sample))
        self._proc.stdin.flush()
        line = self._proc.stdout.readline()
        if not line:
            raise RuntimeError("external oracle closed its output")
        answer, latency = parse_response(line, sample.task_kind)
        tokens = answer_tokens(answer, len(answer.value) if answer.kind is TaskKind.QA else 1,
                               self.vocab_size)
        return OracleOutput(answer, tokens, latency, answer_embedding(answer, self.encoder),
                            np.zeros((len(tokens), 1)), answer == sample.ground_truth)

    def close(self):
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def serve(spec: OracleSpec, samples: Dict[int, Sample], stdin=None, stdout=None):
    """Answer protocol requests with the synthetic oracle until EOF."""
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        sample_id, _kind = line.rstrip("\n").split("\t")
        out = infer(spec, samples[int(sample_id)])
        stdout.write(f"{out.answer.to_text()}\t{out.latency_s!r}\n")
        stdout.flush()
