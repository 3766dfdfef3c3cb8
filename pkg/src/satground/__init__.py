"""Simulator and library for satellite-ground collaborative inference.

A compact onboard model answers what it can; a progressive confidence
network decides, while tokens are still being generated, which samples to
send down to a larger ground model, and attention-guided filtering shrinks
the images that do get sent.
"""
from .confidence import ProgressiveConfidenceNet, StageInput, decide, similarity_target, train
from .config import ConfigError, ScenarioConfig, default_config, load_config
from .domain import ByteSize, RegionGrid, Sample, TaskAnswer, TaskKind, byte_size, partition_image
from .orchestrator import Pipeline, ScenarioMetrics, SampleTrace, run_scenario
from .preprocess import MultiScaleFilter, apply_filter, classify_region

__all__ = [
    "ByteSize", "ConfigError", "MultiScaleFilter", "Pipeline", "ProgressiveConfidenceNet",
    "RegionGrid", "Sample", "SampleTrace", "ScenarioConfig", "ScenarioMetrics", "StageInput",
    "TaskAnswer", "TaskKind", "apply_filter", "byte_size", "classify_region", "decide",
    "default_config", "load_config", "partition_image", "run_scenario", "similarity_target",
    "train",
]
__version__ = "0.1.0"
