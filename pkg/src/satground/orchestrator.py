"""End-to-end offloading workflow over a simulated constellation.

Each sample is processed on one satellite. Under the progressive policy the
confidence network is consulted after the image is encoded and again as the
onboard model emits token blocks; a low score sends the sample to the ground
station, optionally after attention-guided filtering, over the contact-window
constrained downlink.
"""
from __future__ import annotations

import copy
import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import constellation as cst
from ._seeding import rng_for
from .confidence import ProgressiveConfidenceNet, StageInput, decide, similarity_target
from .config import ConfigError, ScenarioConfig
from .domain import RegionGrid, Sample, byte_size, partition_image
from .embedding import attention_scores, encode_prompt, encode_sample, pooled_features
from .link import HorizonExceeded, SatelliteQueue, schedule_transmission
from .models import OracleOutput, infer, simi
from .preprocess import MultiScaleFilter
from .samples import generate_samples

METRICS_VERSION = 1
TRAIN_ID_OFFSET = 10_000_000
MASK_ID_OFFSET = 20_000_000
COMPONENTS = ("onboard_wait", "onboard_encode", "onboard_generation", "confidence",
              "transmission", "ground_inference")
ONBOARD, GROUND, INCOMPLETE = "onboard", "ground", "incomplete"


@dataclass(frozen=True)
class SampleTrace:
    sample_id: int
    satellite: str
    task_kind: str
    difficulty: float
    # NaN marks a stage that was not evaluated
    stage_scores: Tuple[float, ...]
    status: str
    offload_stage: int  # 0 when answered onboard
    onboard_tokens: int
    bytes_transmitted: int
    original_bytes: int
    retained_mass: float
    arrival_s: float
    start_s: float
    components: Dict[str, float]
    answer: str
    simi: float

    @property
    def offloaded(self) -> bool:
        return self.offload_stage > 0

    @property
    def total_latency_s(self) -> float:
        total = 0.0
        for name in COMPONENTS:
            total += self.components[name]
        return total

    @property
    def compression_ratio(self) -> float:
        return self.bytes_transmitted / self.original_bytes if self.original_bytes else 1.0


@dataclass(frozen=True)
class ScenarioMetrics:
    n_samples: int
    n_onboard: int
    n_ground: int
    n_incomplete: int
    offload_fraction: float
    mean_latency_s: Optional[float]
    std_latency_s: Optional[float]
    latency_percentiles_s: Dict[str, Optional[float]]
    mean_simi: Optional[float]
    std_simi: Optional[float]
    mean_compression_ratio: Optional[float]
    mean_onboard_tokens: Optional[float]
    latency_shares: Dict[str, Optional[float]]

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class ScenarioResult:
    policy: str
    metrics: ScenarioMetrics
    traces: List[SampleTrace]
    contact_mask_deg: float = 0.0


def _token_blocks(token_features, length, n_stages, block):
    """Pooled token-block embeddings feeding stages 2..I.

    Block j covers tokens ``[(j-1)*block, j*block)``; the block feeding the
    final stage runs to the end of the output.
    """
    dim = token_features.shape[1]
    out = []
    for j in range(1, n_stages):
        lo = (j - 1) * block
        hi = length if j == n_stages - 1 else min(j * block, length)
        chunk = token_features[lo:hi]
        out.append(chunk.mean(axis=0) if len(chunk) else np.zeros(dim))
    return out


def stage_inputs(image_features, sat_output: OracleOutput, n_stages, block) -> List[StageInput]:
    blocks = _token_blocks(sat_output.token_features, len(sat_output.tokens), n_stages, block)
    return [StageInput(image_features, tuple(blocks[:i])) for i in range(n_stages)]


def tokens_before_stage(stage, n_stages, block, length) -> int:
    """Onboard tokens generated by the time ``stage`` is evaluated."""
    return length if stage == n_stages else min((stage - 1) * block, length)


def summarize(traces: Sequence[SampleTrace]) -> ScenarioMetrics:
    done = [t for t in traces if t.status != INCOMPLETE]
    n = len(traces)
    offloaded = sum(t.offloaded for t in traces)
    pct = {"p50": None, "p90": None, "p99": None}
    shares = {c: None for c in COMPONENTS}
    if not done:
        return ScenarioMetrics(n, 0, 0, n - len(done), offloaded / n if n else 0.0, None, None,
                               pct, None, None, None, None, shares)
    lat = np.array([t.total_latency_s for t in done])
    sims = np.array([t.simi for t in done])
    for q in (50, 90, 99):
        pct[f"p{q}"] = float(np.percentile(lat, q))
    sums = {c: math.fsum(t.components[c] for t in done) for c in COMPONENTS}
    grand = math.fsum(sums.values())
    shares = {c: (sums[c] / grand if grand > 0 else None) for c in COMPONENTS}
    sent = [t.compression_ratio for t in done if t.status == GROUND]
    return ScenarioMetrics(
        n_samples=n,
        n_onboard=sum(t.status == ONBOARD for t in done),
        n_ground=sum(t.status == GROUND for t in done),
        n_incomplete=n - len(done),
        offload_fraction=offloaded / n,
        mean_latency_s=float(lat.mean()),
        std_latency_s=float(lat.std(ddof=1)) if len(lat) > 1 else 0.0,
        latency_percentiles_s=pct,
        mean_simi=float(sims.mean()),
        std_simi=float(sims.std(ddof=1)) if len(sims) > 1 else 0.0,
        mean_compression_ratio=float(np.mean(sent)) if sent else None,
        mean_onboard_tokens=float(np.mean([t.onboard_tokens for t in done])),
        latency_shares=shares,
    )


def _key(sample: Sample):
    return sample.id, sample.prompt, sample.difficulty


class Pipeline:
    """Resolved scenario: orbits, windows, oracles, confidence net, caches.

    Per-sample encodings and oracle outputs are cached, so several policies
    can be run over one sample set without repeating work.

    ``windows`` overrides the computed contact windows (one list per
    satellite) and ``scorer(sample, grid) -> scores`` overrides region
    attention scoring; both exist for hand-constructed scenarios.
    """

    def __init__(self, config: ScenarioConfig, net: Optional[ProgressiveConfidenceNet] = None,
                 windows: Optional[Sequence[Sequence[cst.ContactWindow]]] = None,
                 scorer: Optional[Callable] = None, base_dir=None):
        self.config = config
        c = config.constellation
        self.sat_ids = [s.id for s in c.satellites]
        self.orbits = [s.spec() for s in c.satellites]
        self.ground_station = c.ground_station.spec()
        self.encoder = config.encoder.spec()
        self.link = config.link.spec()
        tdim = config.confidence.token_embed_dim
        shift = float(config.preprocess.region_width)
        self.sat_oracle = config.oracles.satellite.spec("satellite", tdim, shift)
        self.ground_oracle = config.oracles.ground.spec("ground", tdim, shift)
        pp = config.preprocess
        self.filter = MultiScaleFilter(pp.alpha, pp.beta, pp.max_downsample_factor,
                                       pp.bytes_per_pixel, pp.header_bytes)
        self._windows = None if windows is None else [list(w) for w in windows]
        if self._windows is not None and len(self._windows) != len(self.orbits):
            raise ValueError("need one window list per satellite")
        self.scorer = scorer
        self.base_dir = base_dir
        self._net = net
        self._tokens: Dict[int, np.ndarray] = {}
        self._scores: Dict[int, np.ndarray] = {}
        self._sat: Dict[int, OracleOutput] = {}
        self._samples: Optional[List[Sample]] = None

    def with_thresholds(self, thresholds: Sequence[float]) -> "Pipeline":
        """A pipeline differing only in offload thresholds, sharing all caches."""
        if len(thresholds) != len(self.config.confidence.thresholds):
            raise ValueError("threshold count must match the number of stages")
        self.windows, self.net, self.samples  # resolve lazy pieces so the copy shares them
        other = copy.copy(self)
        other.config = self.config.with_updates(confidence__thresholds=list(thresholds))
        return other

    # -- resolved pieces -----------------------------------------------------

    @property
    def windows(self) -> List[List[cst.ContactWindow]]:
        if self._windows is None:
            c = self.config.constellation
            self._windows = [cst.contact_windows(o, self.ground_station, c.horizon_s, c.step_s)
                             for o in self.orbits]
        return self._windows

    @property
    def net(self) -> ProgressiveConfidenceNet:
        if self._net is None:
            cc = self.config.confidence
            if cc.model_path:
                path = Path(cc.model_path)
                if self.base_dir is not None and not path.is_absolute():
                    path = Path(self.base_dir) / path
                try:
                    net = ProgressiveConfidenceNet.load(path, thresholds=tuple(cc.thresholds))
                    self._check_net(net)
                except (OSError, ValueError) as exc:
                    raise ConfigError([("confidence.model_path", str(exc))]) from None
                self._net = net
            else:
                self._net = train_confidence(self.config)
        return self._net

    def _check_net(self, net):
        cc = self.config.confidence
        want = (len(cc.thresholds), self.encoder.embedding_dim, cc.token_embed_dim, cc.token_block)
        got = (net.n_stages, net.image_dim, net.token_embed_dim, net.token_block)
        if want != got:
            raise ValueError(f"confidence model shape {got} does not match config {want} "
                             "(stages, image_dim, token_embed_dim, token_block)")

    @property
    def samples(self) -> List[Sample]:
        if self._samples is None:
            pp = self.config.preprocess
            self._samples = generate_samples(
                self.config.samples.spec(pp.region_height, pp.region_width))
        return self._samples

    def grid(self, sample: Sample) -> RegionGrid:
        pp = self.config.preprocess
        return partition_image(sample.image, pp.region_height, pp.region_width)

    def region_tokens(self, sample: Sample, grid=None) -> np.ndarray:
        if _key(sample) not in self._tokens:
            self._tokens[_key(sample)] = encode_sample(sample, grid or self.grid(sample), self.encoder)
        return self._tokens[_key(sample)]

    def image_features(self, sample: Sample) -> np.ndarray:
        return pooled_features(self.region_tokens(sample))

    def region_scores(self, sample: Sample, grid=None) -> np.ndarray:
        if _key(sample) not in self._scores:
            grid = grid or self.grid(sample)
            if self.scorer is not None:
                scores = np.asarray(self.scorer(sample, grid), dtype=float)
            else:
                scores = attention_scores(self.region_tokens(sample, grid),
                                          encode_prompt(sample.prompt, self.encoder),
                                          self.config.encoder.normalize_scores)
            self._scores[_key(sample)] = scores
        return self._scores[_key(sample)]

    def satellite_output(self, sample: Sample) -> OracleOutput:
        if _key(sample) not in self._sat:
            self._sat[_key(sample)] = infer(self.sat_oracle, sample, 1.0, self.encoder)
        return self._sat[_key(sample)]

    def ground_output(self, sample: Sample, retained_mass: float = 1.0) -> OracleOutput:
        return infer(self.ground_oracle, sample, retained_mass, self.encoder)

    def stage_inputs(self, sample: Sample) -> List[StageInput]:
        cc = self.config.confidence
        return stage_inputs(self.image_features(sample), self.satellite_output(sample),
                            len(cc.thresholds), cc.token_block)

    def final_stage_score(self, sample: Sample) -> float:
        inputs = self.stage_inputs(sample)
        return self.net.estimate(len(inputs), inputs[-1])

    def offload_payload(self, sample: Sample, preprocess: bool):
        """``(bytes, original_bytes, retained_mass)`` of the downlinked image."""
        grid = self.grid(sample)
        pp = self.config.preprocess
        original = byte_size(grid, pp.bytes_per_pixel, pp.header_bytes).bytes
        if not preprocess:
            return original, original, 1.0
        filtered = self.filter.filter(grid, self.region_scores(sample, grid))
        return filtered.total_bytes.bytes, original, filtered.retained_attention_mass

    # -- simulation ----------------------------------------------------------

    def run_sample(self, sample: Sample, sat_index: int, arrival_s: Optional[float],
                   clocks: List[float], queues: List[SatelliteQueue],
                   policy=None) -> SampleTrace:
        """Process one sample on satellite ``sat_index``, advancing its clock and queue.

        ``arrival_s=None`` means the sample was queued in a batch; its latency
        then counts from the moment the satellite picks it up.
        """
        policy = policy or self.config.policy
        cc = self.config.confidence
        sat = self.sat_oracle
        thresholds = tuple(cc.thresholds)
        n_stages = len(thresholds)
        length = sat.output_length(sample.task_kind)

        if arrival_s is None:
            arrival_s = clocks[sat_index]
        start = max(arrival_s, clocks[sat_index])
        comp = dict.fromkeys(COMPONENTS, 0.0)
        comp["onboard_wait"] = start - arrival_s
        scores = [math.nan] * n_stages
        offload_stage = 0
        tokens = 0
        needs_encode = policy.preprocess
        evals = 0

        if policy.name == "SatelliteOnly":
            tokens = length
        elif policy.name == "GroundOnly":
            offload_stage = 1
        elif policy.name == "RandomOffload":
            if rng_for(policy.seed, "random-offload", sample.id).random() < policy.fraction:
                offload_stage = 1
            else:
                tokens = length
        elif policy.name == "ConfidenceAfterFullInference":
            tokens = length
            needs_encode = True
            inputs = self.stage_inputs(sample)
            scores[-1] = self.net.estimate(n_stages, inputs[-1])
            evals = 1
            if decide(thresholds, n_stages, scores[-1]).offload:
                offload_stage = n_stages
        else:  # Progressive
            needs_encode = True
            inputs = None
            for stage in range(1, n_stages + 1):
                generated = tokens_before_stage(stage, n_stages, cc.token_block, length)
                tokens = generated
                # an impossible threshold or an already finished output skips the stage
                if thresholds[stage - 1] == -math.inf:
                    continue
                if stage < n_stages and (stage - 1) * cc.token_block >= length:
                    continue
                inputs = inputs or self.stage_inputs(sample)
                scores[stage - 1] = self.net.estimate(stage, inputs[stage - 1])
                evals += 1
                if decide(thresholds, stage, scores[stage - 1]).offload:
                    offload_stage = stage
                    break
            else:
                tokens = length

        if needs_encode or tokens > 0:
            comp["onboard_encode"] = sat.encode_latency_s
        comp["onboard_generation"] = tokens / sat.tokens_per_second
        comp["confidence"] = evals * cc.eval_time_s
        release = start + comp["onboard_encode"] + comp["onboard_generation"] + comp["confidence"]
        clocks[sat_index] = release

        common = dict(sample_id=sample.id, satellite=self.sat_ids[sat_index],
                      task_kind=sample.task_kind.value, difficulty=sample.difficulty,
                      stage_scores=tuple(scores), offload_stage=offload_stage,
                      onboard_tokens=tokens, arrival_s=arrival_s, start_s=start)
        if not offload_stage:
            out = self.satellite_output(sample)
            return SampleTrace(status=ONBOARD, bytes_transmitted=0, original_bytes=0,
                               retained_mass=1.0, components=comp, answer=out.answer.to_text(),
                               simi=simi(out.answer, sample.ground_truth, encoder=self.encoder),
                               **common)

        nbytes, original, mass = self.offload_payload(sample, policy.preprocess)
        try:
            record = schedule_transmission(nbytes, release, self.windows[sat_index], self.link,
                                           queues[sat_index])
        except HorizonExceeded:
            return SampleTrace(status=INCOMPLETE, bytes_transmitted=nbytes,
                               original_bytes=original, retained_mass=mass, components=comp,
                               answer="", simi=math.nan, **common)
        comp["transmission"] = record.complete_s - release
        out = self.ground_output(sample, mass)
        comp["ground_inference"] = out.latency_s
        return SampleTrace(status=GROUND, bytes_transmitted=nbytes, original_bytes=original,
                           retained_mass=mass, components=comp, answer=out.answer.to_text(),
                           simi=simi(out.answer, sample.ground_truth, encoder=self.encoder),
                           **common)

    def arrivals(self, n_samples: int) -> List[Optional[float]]:
        """Arrival time of each sample at its satellite (``None`` for batch mode)."""
        arr = self.config.arrival
        n_sats = len(self.orbits)
        if arr.mode == "batch":
            return [None] * n_samples
        times: List[Optional[float]] = [0.0] * n_samples
        for s in range(n_sats):
            idx = list(range(s, n_samples, n_sats))
            gaps = rng_for(arr.seed, "arrivals", s).exponential(1.0 / arr.rate_per_s, len(idx))
            for i, t in zip(idx, np.cumsum(gaps)):
                times[i] = float(t)
        return times

    def run(self, policy=None, samples: Optional[Sequence[Sample]] = None) -> ScenarioResult:
        """Run every sample; sample ``k`` goes to satellite ``k mod n``."""
        policy = policy or self.config.policy
        samples = self.samples if samples is None else list(samples)
        n_sats = len(self.orbits)
        clocks = [0.0] * n_sats
        queues = [SatelliteQueue() for _ in range(n_sats)]
        arrivals = self.arrivals(len(samples))
        traces = [self.run_sample(s, k % n_sats, arrivals[k], clocks, queues, policy)
                  for k, s in enumerate(samples)]
        return ScenarioResult(policy.name, summarize(traces), traces,
                              self.ground_station.min_elevation_deg)


def run_scenario(config: ScenarioConfig, **kw) -> ScenarioResult:
    return Pipeline(config, **kw).run()


# -- confidence training data ------------------------------------------------

def training_set(config: ScenarioConfig, count: Optional[int] = None):
    """Stage inputs and similarity targets from a held-out synthetic split.

    Targets are the cosine between the onboard and ground answer embeddings,
    clipped to [0, 1].
    """
    cc = config.confidence
    pp = config.preprocess
    spec = config.samples.spec(pp.region_height, pp.region_width, id_offset=TRAIN_ID_OFFSET,
                               count=cc.train_samples if count is None else count,
                               seed=cc.train_seed)
    pipe = Pipeline(config, net=ProgressiveConfidenceNet())
    n_stages = len(cc.thresholds)
    rows = [[] for _ in range(n_stages)]
    targets = []
    for sample in generate_samples(spec):
        for i, si in enumerate(pipe.stage_inputs(sample)):
            rows[i].append(si.vector())
        sat = pipe.satellite_output(sample)
        gnd = pipe.ground_output(sample, 1.0)
        targets.append(min(1.0, max(0.0, similarity_target(sat.answer_embedding,
                                                           gnd.answer_embedding))))
    return [np.array(r) for r in rows], np.array(targets)


def train_confidence(config: ScenarioConfig, count: Optional[int] = None) -> ProgressiveConfidenceNet:
    xs, y = training_set(config, count)
    net = config.confidence.estimator(config.encoder.embedding_dim)
    return net.fit(xs, y)


# -- output files ------------------------------------------------------------

TRACE_COLUMNS = (["sample_id", "satellite", "task_kind", "difficulty", "status",
                  "offload_stage", "onboard_tokens", "bytes_transmitted", "original_bytes",
                  "retained_mass", "arrival_s", "start_s"]
                 + [f"{c}_s" for c in COMPONENTS]
                 + ["total_latency_s", "stage_scores", "simi", "answer"])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def traces_csv(traces: Sequence[SampleTrace]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for t in traces:
        w.writerow([_fmt(v) for v in (
            t.sample_id, t.satellite, t.task_kind, t.difficulty, t.status, t.offload_stage,
            t.onboard_tokens, t.bytes_transmitted, t.original_bytes, t.retained_mass,
            t.arrival_s, t.start_s,
            *[t.components[c] for c in COMPONENTS],
            t.total_latency_s, " ".join(repr(s) for s in t.stage_scores), t.simi, t.answer)])
    return buf.getvalue()


def metrics_json(result: ScenarioResult) -> str:
    doc = {"version": METRICS_VERSION, "policy": result.policy,
           "contact_mask_deg": result.contact_mask_deg, "metrics": result.metrics.to_dict()}
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_outputs(result: ScenarioResult, out_dir) -> Dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.json", "traces": out / "traces.csv"}
    paths["metrics"].write_text(metrics_json(result))
    paths["traces"].write_text(traces_csv(result.traces))
    return paths
