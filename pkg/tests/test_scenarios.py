import dataclasses
import json

import numpy as np
import pytest

from hbfl.config import ExperimentConfig, SyntheticConfig, config_from_mapping, load_config
from hbfl.data import EndpointPlan, PartitionPlan, netflow_like_synthetic_spec
from hbfl.errors import ArgumentError, DataError, PlanError
from hbfl.federation import RoundConfig
from hbfl.metrics import ConfusionCounts, Metrics
from hbfl.nn import Hyperparameters
from hbfl.scenarios import (
    REPORT_COLUMNS,
    RoundReport,
    ScenarioResult,
    ScenarioSpec,
    check_standard_topology,
    export_report,
    load_data,
    read_report,
    report_rows,
    run_repeats,
    run_scenario,
    summarize,
    write_plot_data,
)

CFG = ExperimentConfig()


@pytest.fixture(scope="module")
def s3(small_endpoints):
    return run_scenario(ScenarioSpec.standard(3, CFG.partition), small_endpoints, CFG, 0)


# scenario definitions

def test_standard_specs():
    plan = PartitionPlan.standard()
    s1, s2, s3 = (ScenarioSpec.standard(i, plan) for i in (1, 2, 3))
    assert (s1.train_orgs, s1.test_orgs, s1.hbfl) == (("k1",), ("k2",), False)
    assert (s2.train_orgs, s2.test_orgs, s2.hbfl) == (("k2",), ("k1",), False)
    assert (s3.train_orgs, s3.test_orgs, s3.hbfl) == (("k1", "k2"), ("k1", "k2"), True)
    with pytest.raises(ArgumentError):
        ScenarioSpec.standard(4, plan)


def test_standard_topology_accepted():
    check_standard_topology(PartitionPlan.standard())


def test_scenario_3_rejects_other_topologies():
    p = PartitionPlan.standard()
    moved = tuple(dataclasses.replace(e, org_id="k2") if e.endpoint_id == "C1" else e for e in p.endpoints)
    with pytest.raises(PlanError):
        check_standard_topology(PartitionPlan(moved))
    extra = p.endpoints + (EndpointPlan("C5", "k2", ("DoS",)),)
    with pytest.raises(PlanError):
        check_standard_topology(PartitionPlan(extra))


# runs

def test_scenario_3_four_series_of_ten(s3):
    assert [r.round for r in s3.rounds] == list(range(1, 11))
    assert sorted(s3.rounds[0].per_class) == ["DDoS", "DoS", "Reconnaissance", "Theft"]
    for cls in s3.rounds[0].per_class:
        assert len(s3.series(cls, "accuracy")) == 10
    assert not s3.terminated and s3.final is not None
    assert s3.ledger.verify_chain()


def test_scenario_1_tests_only_dos_and_theft(small_endpoints):
    r = run_scenario(ScenarioSpec.standard(1, CFG.partition), small_endpoints, CFG.replace(rounds=RoundConfig(2)), 0)
    assert all(sorted(rr.per_class) == ["DoS", "Theft"] for rr in r.rounds)
    assert r.ledger is None


def test_scenario_2_tests_only_ddos_and_recon(small_endpoints):
    r = run_scenario(ScenarioSpec.standard(2, CFG.partition), small_endpoints, CFG.replace(rounds=RoundConfig(2)), 0)
    assert sorted(r.rounds[0].per_class) == ["DDoS", "Reconnaissance"]


def test_rerun_gives_identical_reports(small_endpoints, s3, tmp_path):
    again = run_scenario(ScenarioSpec.standard(3, CFG.partition), small_endpoints, CFG, 0)
    export_report([s3], "csv", tmp_path / "a.csv")
    export_report([again], "csv", tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert np.array_equal(s3.final.values, again.final.values)


def test_missing_dataset_error_has_hint():
    with pytest.raises(DataError, match="--synthetic"):
        load_data(CFG)


def test_run_repeats_uses_consecutive_seeds():
    cfg = CFG.replace(seed=5, rounds=RoundConfig(1),
                      training=Hyperparameters(epochs=1),
                      data=dataclasses.replace(CFG.data, synthetic=SyntheticConfig(benign=800, per_attack=200)))
    res = run_repeats(1, cfg, synthetic=True, repeats=2)
    assert [r.seed for r in res] == [5, 6]


# export

def test_forty_csv_rows_for_ten_rounds_four_classes(s3, tmp_path):
    path = tmp_path / "s3.csv"
    export_report([s3], "csv", path)
    lines = path.read_text().splitlines()
    assert lines[0].split(",") == list(REPORT_COLUMNS)
    assert len(lines) - 1 == 40


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_export_roundtrip(s3, tmp_path, fmt):
    path = tmp_path / f"s3.{fmt}"
    export_report([s3], fmt, path)
    back = read_report(path)
    rows = report_rows([s3])
    assert len(back) == len(rows)
    for a, b in zip(rows, back):
        assert set(a) == set(b)
        for k in a:
            if isinstance(a[k], float):
                assert b[k] == pytest.approx(a[k], abs=1e-9)
            else:
                assert a[k] == b[k]


def test_undefined_metric_exported_as_blank_and_null(tmp_path):
    m = Metrics.from_counts(ConfusionCounts(0, 5, 0, 0))
    res = ScenarioResult(1, 0, [RoundReport(1, {"Theft": m})])
    export_report([res], "csv", tmp_path / "r.csv")
    export_report([res], "json", tmp_path / "r.json")
    row = (tmp_path / "r.csv").read_text().splitlines()[1].split(",")
    assert row[REPORT_COLUMNS.index("dr")] == ""
    assert json.loads((tmp_path / "r.json").read_text())["rows"][0]["dr"] is None
    assert read_report(tmp_path / "r.csv")[0]["dr"] is None


def test_empty_report_list_rejected(tmp_path):
    with pytest.raises(ArgumentError):
        export_report([], "csv", tmp_path / "x.csv")


def test_unknown_format_rejected(s3, tmp_path):
    with pytest.raises(ArgumentError):
        export_report([s3], "xml", tmp_path / "x.xml")


def test_unwritable_path_is_io_error(s3, tmp_path):
    with pytest.raises(OSError):
        export_report([s3], "csv", tmp_path / "missing" / "x.csv")


def test_summary_mean_and_range(s3):
    summ = summarize([s3, s3])
    assert len(summ) == 40
    e = summ[0]
    assert e["runs"] == 2 and e["accuracy_min"] == e["accuracy_max"] == e["accuracy_mean"]


def test_plot_data_files(s3, tmp_path):
    paths = write_plot_data([s3], tmp_path)
    assert len(paths) == 4 * 4
    lines = (tmp_path / "scenario3_DDoS_accuracy.csv").read_text().splitlines()
    assert lines[0] == "round,mean,min,max" and len(lines) == 11


# config

def test_defaults_match_training_table():
    cfg = load_config(None)
    t = cfg.training
    assert (t.epochs, t.batch_size, t.learning_rate) == (10, 128, 0.001)
    assert (cfg.rounds.global_rounds, cfg.rounds.local_rounds) == (10, 1)
    assert cfg.data.attack_cap == 20000 and cfg.threshold == 0.5 and cfg.repeats == 3
    assert cfg.validation.strict


def test_synthetic_config_matches_builder_defaults():
    assert SyntheticConfig().spec() == netflow_like_synthetic_spec()


def test_yaml_config(tmp_path):
    path = tmp_path / "exp.yaml"
    path.write_text(
        "seed: 7\n"
        "rounds: {global_rounds: 4}\n"
        "training: {epochs: 2}\n"
        "validation: {strict: false, threshold: 2.5}\n"
        "data: {synthetic: {benign: 900}}\n"
        "partition:\n"
        "  endpoints:\n"
        "    - {endpoint: A, org: x, classes: [DDoS]}\n"
        "    - {endpoint: B, org: y, classes: [Theft], benign: false}\n"
    )
    cfg = load_config(path)
    assert cfg.seed == 7 and cfg.rounds.global_rounds == 4 and cfg.training.epochs == 2
    assert cfg.training.batch_size == 128
    assert not cfg.validation.strict and cfg.validation.build().threshold == 2.5
    assert cfg.data.synthetic.benign == 900
    assert sorted(cfg.partition.organisations) == ["x", "y"]


@pytest.mark.parametrize("raw", [
    {"bogus": 1},
    {"training": {"epoch": 3}},
    {"training": {"epochs": 0}},
    {"rounds": {"global_rounds": 0}},
    {"repeats": 0},
    {"partition": {"endpoints": [{"org": "k1", "classes": []}]}},
    {"validation": {"policy": "kmeans"}},
])
def test_bad_config_rejected(raw):
    with pytest.raises(ArgumentError):
        cfg = config_from_mapping(raw)
        cfg.validation.build()
