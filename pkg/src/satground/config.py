"""Scenario configuration: strict schema, loading, and the resolved echo.

Unknown keys anywhere in a config file are rejected so a typo in a threshold
name cannot silently fall back to a default.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Dict, List, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import constellation as cst
from .confidence import ProgressiveConfidenceNet
from .embedding import EncoderSpec
from .link import LinkSpec
from .models import OracleSpec, check_ordering
from .samples import SampleGeneratorSpec

CONFIG_VERSION = 1
POLICIES = ("Progressive", "SatelliteOnly", "GroundOnly", "ConfidenceAfterFullInference",
            "RandomOffload")


class ConfigError(ValueError):
    """Configuration problem; ``errors`` lists ``(field_path, message)`` pairs."""

    def __init__(self, errors, source=None):
        self.errors = list(errors)
        self.source = source
        where = f"{source}: " if source else ""
        super().__init__(where + "; ".join(f"{path}: {msg}" for path, msg in self.errors))


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", validate_default=True)


class SatelliteEntry(_Strict):
    id: str
    altitude_km: float = Field(gt=0)
    inclination_deg: float = Field(ge=0, le=180)
    raan_deg: float = Field(ge=0, lt=360)
    initial_anomaly_deg: float = Field(ge=0, lt=360)
    epoch_s: float = 0.0

    def spec(self) -> cst.OrbitSpec:
        return cst.OrbitSpec(self.altitude_km, self.inclination_deg, self.raan_deg,
                             self.initial_anomaly_deg, self.epoch_s)


class GroundStationEntry(_Strict):
    id: str = "gs-0"
    latitude_deg: float = Field(ge=-90, le=90)
    longitude_deg: float = Field(ge=-180, le=180)
    min_elevation_deg: float = Field(ge=0, lt=90)

    def spec(self) -> cst.GroundStationSpec:
        return cst.GroundStationSpec(self.latitude_deg, self.longitude_deg, self.min_elevation_deg)


class ConstellationConfig(_Strict):
    satellites: List[SatelliteEntry] = Field(min_length=1)
    ground_station: GroundStationEntry
    horizon_s: float = Field(86400.0, gt=0)
    step_s: float = Field(cst.DEFAULT_STEP_S, gt=0)
    calibration_target: float = Field(0.0433, ge=0, le=1)
    calibration_tolerance: float = Field(0.0005, gt=0)


class LinkConfig(_Strict):
    bandwidth_bps: float = Field(110.67e6, gt=0)
    per_message_overhead_bytes: int = Field(0, ge=0)

    def spec(self) -> LinkSpec:
        return LinkSpec(self.bandwidth_bps, self.per_message_overhead_bytes)


class EncoderConfig(_Strict):
    embedding_dim: int = Field(64, ge=1)
    tokens_per_region: int = Field(4, ge=1)
    tokens_per_prompt: int = Field(8, ge=1)
    seed: int = Field(0, ge=0)
    prompt_spread: float = Field(0.3, ge=0)
    difficulty_gain: float = Field(0.5, ge=0)
    normalize_scores: bool = True

    def spec(self) -> EncoderSpec:
        return EncoderSpec(self.embedding_dim, self.tokens_per_region, self.tokens_per_prompt,
                           self.seed, prompt_spread=self.prompt_spread,
                           difficulty_gain=self.difficulty_gain)


class ConfidenceConfig(_Strict):
    model_path: Optional[str] = None
    thresholds: List[float] = Field(default_factory=lambda: [0.5, 0.4], min_length=1)
    hidden_width: int = Field(64, ge=1)
    n_hidden: int = Field(2, ge=1)
    token_block: int = Field(8, ge=1)
    token_embed_dim: int = Field(16, ge=1)
    learning_rate: float = Field(1e-3, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)
    epochs: int = Field(200, ge=0)
    seed: int = Field(0, ge=0)
    train_samples: int = Field(2000, ge=1)
    train_seed: int = Field(1, ge=0)
    eval_time_s: float = Field(0.001, ge=0)

    @field_validator("thresholds")
    @classmethod
    def _no_nan(cls, v):
        if any(math.isnan(t) for t in v):
            raise ValueError("thresholds must not be NaN")
        return v

    def estimator(self, image_dim: int) -> ProgressiveConfidenceNet:
        return ProgressiveConfidenceNet(
            image_dim=image_dim, token_embed_dim=self.token_embed_dim,
            n_stages=len(self.thresholds), hidden_width=self.hidden_width,
            n_hidden=self.n_hidden, thresholds=tuple(self.thresholds),
            token_block=self.token_block, learning_rate=self.learning_rate,
            momentum=self.momentum, batch_size=self.batch_size, epochs=self.epochs,
            seed=self.seed)


class PreprocessConfig(_Strict):
    alpha: float = Field(0.35, ge=0)
    beta: float = 0.55
    region_height: int = Field(16, ge=1)
    region_width: int = Field(16, ge=1)
    max_downsample_factor: Optional[float] = Field(None, ge=1)
    bytes_per_pixel: int = Field(1, ge=1)
    header_bytes: int = Field(4, ge=0)

    @model_validator(mode="after")
    def _ordered(self):
        if not self.alpha < self.beta:
            raise ValueError("alpha must be < beta")
        return self


class OracleConfig(_Strict):
    k: float
    d0: float
    tokens_per_second: float = Field(gt=0)
    encode_latency_s: float = Field(ge=0)
    output_length_tokens: Dict[Literal["QA", "Classification", "Detection"], int]
    degradation_exponent: float = Field(0.5, ge=0)
    seed: int = Field(ge=0)
    token_signal: float = 0.6
    token_noise: float = Field(0.6, ge=0)

    def spec(self, role, token_embed_dim, box_shift_px) -> OracleSpec:
        return OracleSpec(role=role, k=self.k, d0=self.d0,
                          tokens_per_second=self.tokens_per_second,
                          encode_latency_s=self.encode_latency_s,
                          output_length_tokens=dict(self.output_length_tokens),
                          degradation_exponent=self.degradation_exponent, seed=self.seed,
                          box_shift_px=box_shift_px, token_embed_dim=token_embed_dim,
                          token_signal=self.token_signal, token_noise=self.token_noise)


_LENGTHS = {"QA": 24, "Classification": 4, "Detection": 16}


class OraclesConfig(_Strict):
    satellite: OracleConfig = Field(default_factory=lambda: OracleConfig(
        k=8.0, d0=0.45, tokens_per_second=6.0, encode_latency_s=0.5,
        output_length_tokens=dict(_LENGTHS), seed=1))
    ground: OracleConfig = Field(default_factory=lambda: OracleConfig(
        k=8.0, d0=0.8, tokens_per_second=40.0, encode_latency_s=0.1,
        output_length_tokens=dict(_LENGTHS), seed=2))


class SamplesConfig(_Strict):
    count: int = Field(1000, ge=0)
    seed: int = Field(0, ge=0)
    difficulty_low: float = Field(0.0, ge=0, le=1)
    difficulty_high: float = Field(1.0, ge=0, le=1)
    task_mix: Dict[Literal["QA", "Classification", "Detection"], float] = Field(
        default_factory=lambda: {"QA": 1.0, "Classification": 1.0, "Detection": 1.0})
    image_height: int = Field(160, ge=1)
    image_width: int = Field(160, ge=1)
    box_min_regions: float = Field(1.5, gt=0)
    box_max_regions: float = Field(3.0, gt=0)
    target_relevance: List[float] = Field(default_factory=lambda: [0.6, 1.0],
                                          min_length=2, max_length=2)
    background_relevance: List[float] = Field(default_factory=lambda: [0.0, 0.15],
                                              min_length=2, max_length=2)

    @model_validator(mode="after")
    def _ranges(self):
        if self.difficulty_low > self.difficulty_high:
            raise ValueError("difficulty_low must be <= difficulty_high")
        if not self.task_mix or any(w < 0 for w in self.task_mix.values()) \
                or sum(self.task_mix.values()) <= 0:
            raise ValueError("task_mix weights must be non-negative with a positive sum")
        return self

    def spec(self, region_height, region_width, id_offset=0, count=None, seed=None,
             task_mix=None) -> SampleGeneratorSpec:
        return SampleGeneratorSpec(
            count=self.count if count is None else count,
            seed=self.seed if seed is None else seed, id_offset=id_offset,
            difficulty_low=self.difficulty_low, difficulty_high=self.difficulty_high,
            task_mix=dict(task_mix or self.task_mix), image_height=self.image_height,
            image_width=self.image_width, region_height=region_height,
            region_width=region_width, box_min_regions=self.box_min_regions,
            box_max_regions=self.box_max_regions,
            target_relevance=tuple(self.target_relevance),
            background_relevance=tuple(self.background_relevance))


class ArrivalConfig(_Strict):
    mode: Literal["batch", "poisson"] = "batch"
    rate_per_s: float = Field(0.01, gt=0)
    seed: int = Field(0, ge=0)


class PolicyConfig(_Strict):
    name: Literal[POLICIES] = "Progressive"
    fraction: Optional[float] = Field(None, ge=0, le=1)
    seed: int = Field(0, ge=0)
    # filter offloaded images before downlink; defaults to on for Progressive only
    preprocess: Optional[bool] = None

    @model_validator(mode="after")
    def _resolve(self):
        if self.name == "RandomOffload" and self.fraction is None:
            raise ValueError("RandomOffload needs a fraction")
        if self.name != "RandomOffload" and self.fraction is not None:
            raise ValueError(f"fraction only applies to RandomOffload, not {self.name}")
        if self.preprocess is None:
            self.preprocess = self.name == "Progressive"
        return self


class ScenarioConfig(_Strict):
    version: Literal[CONFIG_VERSION] = CONFIG_VERSION
    constellation: Union[ConstellationConfig, str]
    link: LinkConfig = Field(default_factory=LinkConfig)
    encoder: EncoderConfig = Field(default_factory=EncoderConfig)
    confidence: ConfidenceConfig = Field(default_factory=ConfidenceConfig)
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    oracles: OraclesConfig = Field(default_factory=OraclesConfig)
    samples: SamplesConfig = Field(default_factory=SamplesConfig)
    arrival: ArrivalConfig = Field(default_factory=ArrivalConfig)
    policy: PolicyConfig = Field(default_factory=PolicyConfig)

    @model_validator(mode="after")
    def _oracle_order(self):
        sat = self.oracles.satellite.spec("satellite", 1, 1.0)
        ground = self.oracles.ground.spec("ground", 1, 1.0)
        check_ordering(sat, ground)
        return self

    def with_updates(self, **dotted) -> "ScenarioConfig":
        """Copy with ``section__field=value`` overrides, re-validated."""
        data = self.to_dict()
        for key, value in dotted.items():
            node = data
            *parents, leaf = key.split("__")
            for p in parents:
                node = node[p]
            node[leaf] = value
        return ScenarioConfig.model_validate(data)

    def to_dict(self) -> dict:
        return self.model_dump(mode="python")


def _format_errors(exc: ValidationError):
    errors = []
    for err in exc.errors():
        loc = [str(p) for p in err["loc"]]
        # the constellation may be inline or a file path; report only the branch that applies
        if loc[:2] == ["constellation", "str"] and len(exc.errors()) > 1:
            continue
        loc = [p for p in loc if p not in ("ConstellationConfig", "str")]
        errors.append((".".join(loc) or "<root>", err["msg"]))
    return errors


def parse_config(data, source=None, base_dir=None) -> ScenarioConfig:
    if not isinstance(data, dict):
        raise ConfigError([("<root>", "config must be a mapping")], source)
    try:
        cfg = ScenarioConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc), source) from None
    except ValueError as exc:
        raise ConfigError([("<root>", str(exc))], source) from None
    mp = cfg.confidence.model_path
    if mp and base_dir is not None and not Path(mp).is_absolute():
        cfg.confidence.model_path = str((Path(base_dir) / mp).resolve())
    if isinstance(cfg.constellation, str):
        path = Path(cfg.constellation)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            raw = yaml.safe_load(path.read_text())
            cfg.constellation = ConstellationConfig.model_validate(raw)
        except OSError as exc:
            raise ConfigError([("constellation", f"cannot read {path}: {exc}")], source) from None
        except ValidationError as exc:
            raise ConfigError([("constellation." + p, m) for p, m in _format_errors(exc)],
                              source) from None
    return cfg


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([("<file>", f"cannot read config {path}: {exc.strerror}")],
                          str(path)) from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError([("<file>", f"invalid YAML: {exc}")], str(path)) from None
    return parse_config(data, str(path), base_dir=path.parent)


def default_config_path() -> Path:
    return Path(str(resources.files("satground") / "data" / "default_scenario.yaml"))


def default_config() -> ScenarioConfig:
    return load_config(default_config_path())


def dump_config(cfg: ScenarioConfig) -> str:
    """Fully materialized YAML; feeding it back in reproduces ``cfg``."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
