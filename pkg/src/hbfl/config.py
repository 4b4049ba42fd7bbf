"""Experiment configuration: YAML file -> dataclasses; defaults are the standard training setup."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Any, Mapping

import yaml

from .contract import NormZScorePolicy
from .data import EndpointPlan, PartitionPlan, SyntheticSpec, netflow_like_synthetic_spec
from .errors import ArgumentError, PreconditionError
from .federation import RoundConfig
from .nn import Hyperparameters


@dataclass(frozen=True)
class SyntheticConfig:
    separation: float = 4.0
    dim: int = 16
    benign: int = 13500
    per_attack: int = 2000
    attack_sigma: float = 0.5
    shared: float = 0.6
    clip: float | None = 2.5

    def spec(self) -> SyntheticSpec:
        return netflow_like_synthetic_spec(**dataclasses.asdict(self))


@dataclass(frozen=True)
class DataConfig:
    csv_path: str | None = None
    schema_path: str | None = None
    partitions_dir: str | None = None
    attack_cap: int | None = 20000
    split_ratio: float = 0.7
    chunksize: int = 500_000
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)


@dataclass(frozen=True)
class ValidationConfig:
    policy: str = "norm-zscore"
    threshold: float = 3.0
    min_history: int = 3
    rel_std_floor: float = 0.05
    strict: bool = True

    def build(self) -> NormZScorePolicy:
        if self.policy != "norm-zscore":
            raise ArgumentError(f"unknown validation policy {self.policy!r}")
        return NormZScorePolicy(self.threshold, self.min_history, self.rel_std_floor)


@dataclass(frozen=True)
class LedgerConfig:
    admin_id: str = "reducer"


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    partition: PartitionPlan = field(default_factory=PartitionPlan.standard)
    training: Hyperparameters = field(default_factory=Hyperparameters)
    rounds: RoundConfig = field(default_factory=RoundConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    ledger: LedgerConfig = field(default_factory=LedgerConfig)
    seed: int = 0
    repeats: int = 3
    threshold: float = 0.5

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def _build(cls, raw: Mapping[str, Any] | None, where: str):
    raw = dict(raw or {})
    names = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(names))
    if unknown:
        raise ArgumentError(f"unknown key(s) in {where}: {', '.join(unknown)}")
    nested = {"synthetic": SyntheticConfig}
    kw = {}
    for k, v in raw.items():
        if k in nested and isinstance(v, Mapping):
            v = _build(nested[k], v, f"{where}.{k}")
        kw[k] = v
    try:
        return cls(**kw)
    except TypeError as exc:
        raise ArgumentError(f"bad {where}: {exc}") from None


def _plan(raw) -> PartitionPlan:
    if raw is None:
        return PartitionPlan.standard()
    if isinstance(raw, Mapping):
        if set(raw) - {"endpoints", "caps"}:
            raise ArgumentError("partition takes 'endpoints' and/or 'caps'")
        if "endpoints" not in raw:
            return PartitionPlan.standard(raw.get("caps"))
        raw = raw["endpoints"]
    eps = []
    for i, e in enumerate(raw):
        e = dict(e)
        try:
            eps.append(EndpointPlan(str(e.pop("endpoint")), str(e.pop("org")), tuple(e.pop("classes")),
                                    bool(e.pop("benign", True)), dict(e.pop("caps", {}) or {})))
        except KeyError as exc:
            raise ArgumentError(f"partition endpoint {i} is missing {exc}") from None
        if e:
            raise ArgumentError(f"partition endpoint {i}: unknown key(s) {sorted(e)}")
    return PartitionPlan(tuple(eps))


def config_from_mapping(raw: Mapping[str, Any] | None) -> ExperimentConfig:
    raw = dict(raw or {})
    top = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ArgumentError(f"unknown top-level key(s): {', '.join(unknown)}")
    cfg = ExperimentConfig(
        data=_build(DataConfig, raw.get("data"), "data"),
        partition=_plan(raw.get("partition")),
        training=_build(Hyperparameters, raw.get("training"), "training"),
        rounds=_build(RoundConfig, raw.get("rounds"), "rounds"),
        validation=_build(ValidationConfig, raw.get("validation"), "validation"),
        ledger=_build(LedgerConfig, raw.get("ledger"), "ledger"),
        seed=int(raw.get("seed", 0)),
        repeats=int(raw.get("repeats", 3)),
        threshold=float(raw.get("threshold", 0.5)),
    )
    try:
        cfg.training.validate()
        cfg.rounds.validate()
    except PreconditionError as exc:
        raise ArgumentError(f"bad config: {exc}") from None
    if cfg.repeats < 1:
        raise ArgumentError("repeats must be >= 1")
    return cfg


def load_config(path: str | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is not None and not isinstance(raw, Mapping):
        raise ArgumentError(f"{path}: top level must be a mapping")
    return config_from_mapping(raw)
