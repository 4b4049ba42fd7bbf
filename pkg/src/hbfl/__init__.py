"""Hierarchical blockchain-based federated learning simulator for IoT intrusion detection."""

from .config import ExperimentConfig, load_config
from .contract import ContractOrchestrator, NormZScorePolicy, ProcessOutcome, TaskId, run_process, validate_update
from .data import (
    CsvSchema,
    DatasetPartition,
    PartitionPlan,
    build_endpoints,
    generate_synthetic,
    load_netflow_csv,
    netflow_like_synthetic_spec,
)
from .federation import RoundConfig, Topology, WeightUpdate, run_hierarchy, weighted_average
from .kernels import BACKEND
from .ledger import Ledger, verify_blocks
from .metrics import compute_metrics
from .nn import Hyperparameters, LayerSpec, ModelParameters, forward, init_model, train_local
from .scenarios import ScenarioSpec, export_report, run_scenario

__all__ = [
    "BACKEND", "ContractOrchestrator", "CsvSchema", "DatasetPartition", "ExperimentConfig", "Hyperparameters",
    "LayerSpec", "Ledger", "ModelParameters", "NormZScorePolicy", "PartitionPlan", "ProcessOutcome",
    "RoundConfig", "ScenarioSpec", "TaskId", "Topology", "WeightUpdate", "build_endpoints", "compute_metrics",
    "export_report", "forward", "generate_synthetic", "init_model", "load_config", "load_netflow_csv",
    "netflow_like_synthetic_spec", "run_hierarchy", "run_process", "run_scenario", "train_local",
    "validate_update", "verify_blocks", "weighted_average",
]
