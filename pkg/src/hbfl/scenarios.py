"""Scenarios 1-3: single-organisation baselines and the full HBFL run, evaluated every round."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .contract import run_process
from .data import (
    CsvSchema,
    EndpointData,
    PartitionPlan,
    build_endpoints,
    generate_synthetic,
    load_endpoints,
    load_netflow_csv,
)
from .errors import ArgumentError, DataError, PlanError
from .federation import Endpoint, Hooks, Organisation, Topology, derive_seed, run_hierarchy
from .ledger import Ledger
from .metrics import Metrics, compute_metrics
from .nn import LayerSpec, ModelParameters, forward, init_live_model

log = logging.getLogger(__name__)

REPORT_COLUMNS = ("scenario", "round", "class", "accuracy", "dr", "far", "f1", "tp", "tn", "fp", "fn", "seed")
METRIC_NAMES = ("accuracy", "dr", "far", "f1")


@dataclass(frozen=True)
class ScenarioSpec:
    id: int
    train_orgs: tuple[str, ...]
    test_orgs: tuple[str, ...]
    hbfl: bool

    @classmethod
    def standard(cls, scenario: int, plan: PartitionPlan) -> "ScenarioSpec":
        orgs = sorted(plan.organisations)
        if scenario == 3:
            return cls(3, tuple(orgs), tuple(orgs), True)
        if len(orgs) != 2:
            raise PlanError("scenarios 1 and 2 need exactly two organisations")
        if scenario == 1:
            return cls(1, (orgs[0],), (orgs[1],), False)
        if scenario == 2:
            return cls(2, (orgs[1],), (orgs[0],), False)
        raise ArgumentError(f"scenario must be 1, 2 or 3, got {scenario}")


def check_standard_topology(plan: PartitionPlan) -> None:
    """Scenario 3 runs only on two organisations of two endpoints each.

    k1 holds DDoS and Reconnaissance, k2 holds DoS and Theft, and every
    endpoint holds benign rows.
    """
    ref = PartitionPlan.standard()
    got = {o: sorted(eps) for o, eps in plan.organisations.items()}
    want = {o: sorted(eps) for o, eps in ref.organisations.items()}
    if got != want:
        raise PlanError(f"scenario 3 topology must be {want}, got {got}")
    for o in want:
        if sorted(plan.classes_of(o)) != sorted(ref.classes_of(o)):
            raise PlanError(f"{o} must hold {sorted(ref.classes_of(o))}, got {sorted(plan.classes_of(o))}")
    if not all(e.benign for e in plan.endpoints):
        raise PlanError("every endpoint must hold benign rows")


@dataclass
class RoundReport:
    round: int
    per_class: dict[str, Metrics]


@dataclass
class ScenarioResult:
    scenario: int
    seed: int
    rounds: list[RoundReport] = field(default_factory=list)
    terminated: bool = False
    ledger: Ledger | None = None
    final: ModelParameters | None = None

    def series(self, cls: str, metric: str) -> list[float | None]:
        return [getattr(r.per_class[cls], metric) for r in self.rounds]


@dataclass(frozen=True)
class TestSet:
    features: np.ndarray
    labels: np.ndarray
    classes: np.ndarray

    @classmethod
    def of(cls, endpoints: Sequence[EndpointData]) -> "TestSet":
        if not endpoints:
            raise DataError("no test endpoints")
        return cls(
            np.vstack([e.test.features for e in endpoints]),
            np.concatenate([e.test.labels for e in endpoints]),
            np.concatenate([e.test.attack_classes for e in endpoints]),
        )


def _topology(endpoints: Sequence[EndpointData], orgs: Sequence[str]) -> Topology:
    grouped: dict[str, list[Endpoint]] = {o: [] for o in orgs}
    for e in endpoints:
        if e.org_id in grouped:
            grouped[e.org_id].append(Endpoint(e.endpoint_id, e.org_id, e.train))
    for o, eps in grouped.items():
        if not eps:
            raise PlanError(f"organisation {o} has no endpoints")
    return Topology(tuple(Organisation(o, tuple(eps)) for o, eps in grouped.items()))


class _Evaluate(Hooks):
    def __init__(self, result: ScenarioResult, test: TestSet, threshold: float):
        self.result = result
        self.test = test
        self.threshold = threshold

    def round_end(self, t, params):
        scores = forward(params, self.test.features)
        report = compute_metrics(scores, self.test.labels, self.test.classes, self.threshold)
        self.result.rounds.append(RoundReport(t, report.per_class))


def run_scenario(spec: ScenarioSpec, endpoints: Sequence[EndpointData], config: ExperimentConfig,
                 seed: int | None = None) -> ScenarioResult:
    """Train on ``spec.train_orgs`` and score every round on the test rows of ``spec.test_orgs``."""
    seed = config.seed if seed is None else seed
    if spec.hbfl:
        check_standard_topology(config.partition)
    train_eps = [e for e in endpoints if e.org_id in spec.train_orgs]
    test_eps = [e for e in endpoints if e.org_id in spec.test_orgs]
    test = TestSet.of(test_eps)
    topo = _topology(train_eps, spec.train_orgs)
    dim = train_eps[0].train.features.shape[1]
    init = init_live_model(LayerSpec.for_input(dim), derive_seed(seed, "init"))
    hp = dataclasses.replace(config.training, seed=derive_seed(seed, "train"))
    result = ScenarioResult(spec.id, seed)
    evaluate = _Evaluate(result, test, config.threshold)
    if spec.hbfl:
        ledger = Ledger(config.ledger.admin_id, seed=seed)
        out = run_process(
            topo, init, config.rounds, hp, ledger=ledger, policy=config.validation.build(),
            strict=config.validation.strict, seed=seed, on_round=evaluate.round_end,
        )
        result.terminated = out.terminated
        result.ledger = out.ledger
        result.final = out.final
    else:
        out = run_hierarchy(topo, init, config.rounds, hp, evaluate, seed)
        result.final = out.final
    log.info("scenario %d seed %d: %d rounds", spec.id, seed, len(result.rounds))
    return result


def load_data(config: ExperimentConfig, *, synthetic: bool = False, seed: int | None = None) -> list[EndpointData]:
    seed = config.seed if seed is None else seed
    d = config.data
    if synthetic:
        raw = generate_synthetic(d.synthetic.spec(), seed)
        return build_endpoints(raw, config.partition, ratio=d.split_ratio, seed=seed)
    if d.partitions_dir:
        return load_endpoints(d.partitions_dir)
    if d.csv_path:
        schema = CsvSchema.load(d.schema_path) if d.schema_path else CsvSchema.nf_bot_iot_v2()
        raw = load_netflow_csv(d.csv_path, schema, attack_cap=d.attack_cap, seed=seed, chunksize=d.chunksize)
        return build_endpoints(raw, config.partition, ratio=d.split_ratio, seed=seed)
    raise DataError("no dataset configured: set data.csv_path or data.partitions_dir, or pass --synthetic")


def run_repeats(scenario: int, config: ExperimentConfig, *, synthetic: bool = False,
                repeats: int | None = None) -> list[ScenarioResult]:
    """Seeded repetitions; repetition i uses seed ``config.seed + i`` for data split, init and training."""
    repeats = config.repeats if repeats is None else repeats
    spec = ScenarioSpec.standard(scenario, config.partition)
    fixed = None
    if not synthetic and config.data.partitions_dir:
        fixed = load_endpoints(config.data.partitions_dir)
    out = []
    for i in range(repeats):
        seed = config.seed + i
        eps = fixed if fixed is not None else load_data(config, synthetic=synthetic, seed=seed)
        out.append(run_scenario(spec, eps, config, seed))
    return out


def report_rows(results: Sequence[ScenarioResult]) -> list[dict]:
    if not results:
        raise ArgumentError("no reports to export")
    rows = []
    for res in results:
        for r in res.rounds:
            for cls in sorted(r.per_class):
                m = r.per_class[cls]
                c = m.counts
                rows.append({
                    "scenario": res.scenario, "round": r.round, "class": cls,
                    "accuracy": m.accuracy, "dr": m.dr, "far": m.far, "f1": m.f1,
                    "tp": c.tp, "tn": c.tn, "fp": c.fp, "fn": c.fn, "seed": res.seed,
                })
    return rows


def summarize(results: Sequence[ScenarioResult]) -> list[dict]:
    """Mean, min and max of each metric across repetitions, per scenario, round and class."""
    groups: dict[tuple, list[dict]] = {}
    for row in report_rows(results):
        groups.setdefault((row["scenario"], row["round"], row["class"]), []).append(row)
    out = []
    for (scn, rnd, cls), rows in sorted(groups.items()):
        entry = {"scenario": scn, "round": rnd, "class": cls, "runs": len(rows)}
        for m in METRIC_NAMES:
            vals = [r[m] for r in rows if r[m] is not None]
            entry[f"{m}_mean"] = float(np.mean(vals)) if vals else None
            entry[f"{m}_min"] = min(vals) if vals else None
            entry[f"{m}_max"] = max(vals) if vals else None
        out.append(entry)
    return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(rows: list[dict], columns: Sequence[str], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row[c]) for c in columns])


def export_report(results: Sequence[ScenarioResult], fmt: str, path) -> str:
    """Write one row per (run, round, class) as ``csv`` or ``json``; undefined metrics are blank / null."""
    rows = report_rows(results)
    if fmt == "csv":
        _write_csv(rows, REPORT_COLUMNS, path)
    elif fmt == "json":
        with open(path, "w") as fh:
            json.dump({"columns": list(REPORT_COLUMNS), "rows": rows, "summary": summarize(results)}, fh, indent=1, sort_keys=True)
            fh.write("\n")
    else:
        raise ArgumentError(f"format must be csv or json, got {fmt!r}")
    return str(path)


def read_report(path) -> list[dict]:
    """Inverse of the CSV/JSON export (rows only)."""
    if str(path).endswith(".json"):
        with open(path) as fh:
            return json.load(fh)["rows"]
    ints = {"scenario", "round", "tp", "tn", "fp", "fn", "seed"}
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if k == "class":
                    rec[k] = v
                elif v == "":
                    rec[k] = None
                else:
                    rec[k] = int(v) if k in ints else float(v)
            out.append(rec)
    return out


def write_plot_data(results: Sequence[ScenarioResult], directory) -> list[str]:
    """One CSV per (scenario, class, metric): round, mean, min, max; the axes of the per-round figures."""
    os.makedirs(directory, exist_ok=True)
    summary = summarize(results)
    keys = sorted({(s["scenario"], s["class"]) for s in summary})
    paths = []
    for scn, cls in keys:
        rows = [s for s in summary if s["scenario"] == scn and s["class"] == cls]
        for m in METRIC_NAMES:
            path = os.path.join(directory, f"scenario{scn}_{cls}_{m}.csv")
            data = [{"round": s["round"], "mean": s[f"{m}_mean"], "min": s[f"{m}_min"], "max": s[f"{m}_max"]} for s in rows]
            _write_csv(data, ("round", "mean", "min", "max"), path)
            paths.append(path)
    return paths

