"""Automatic traffic reports from enriched flow records."""

__version__ = "0.1.0"

from .burst import Burst, BurstConfig, analyze_bursts, candidate_metrics, detect_bursts, rank_root_causes
from .config import Config, ConfigError
from .kernels import BACKEND
from .rag import RagRow, Severity, build_rag_table, score_dns_server, score_http_server, score_tcp_server
from .recordio import Dataset, OpChain, RecordBatch, col, open_dataset, scan_stats
from .records import validate
from .scheduler import StagePlan, StageRunStats, build_plan, execute_plan
from .synth import ScenarioSpec, generate, standard_scenario
from .timeseries import TimeSeries, reconstruct, resample, rolling_variability

__all__ = [
    "BACKEND", "Burst", "BurstConfig", "Config", "ConfigError", "Dataset", "OpChain", "RagRow", "RecordBatch",
    "ScenarioSpec", "Severity", "StagePlan", "StageRunStats", "TimeSeries", "analyze_bursts", "build_plan",
    "build_rag_table", "candidate_metrics", "col", "detect_bursts", "execute_plan", "generate", "open_dataset",
    "rank_root_causes", "reconstruct", "resample", "rolling_variability", "scan_stats", "score_dns_server",
    "score_http_server", "score_tcp_server", "standard_scenario", "validate",
]
