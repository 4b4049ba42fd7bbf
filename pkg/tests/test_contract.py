import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import toy_topology
from hbfl.contract import (
    REDUCER,
    Accept,
    ContractOrchestrator,
    HoldCondition,
    NormZScorePolicy,
    ProcessState,
    Reject,
    TaskState,
    key,
    register_topology,
    run_process,
    validate_update,
)
from hbfl.errors import WorkflowDefinitionError
from hbfl.federation import Organisation, RoundConfig, Topology, WeightUpdate
from hbfl.ledger import Ledger, TxKind
from hbfl.nn import Hyperparameters, LayerSpec, ModelParameters, init_model

SPEC = LayerSpec.for_input(3)
HP = Hyperparameters(epochs=1, batch_size=16)


def _contract(local_rounds=1, global_rounds=1, **kw):
    led = Ledger("reducer")
    topo = toy_topology()
    register_topology(led, topo)
    k = ContractOrchestrator(led, local_rounds, global_rounds, **kw)
    k.register_endpoints(topo)
    return k


def _submit_d(k, org, t, payload):
    tx = k.ledger.new_transaction(TxKind.WEIGHT_UPDATE, org, {"task": "d", "round": t, "org": org}, payload)
    k.ledger.submit_transaction(tx)


def _happy_round(k, t=1, orgs=(("k1", ("C1", "C2")), ("k2", ("C3", "C4")))):
    verdicts = []
    a = k.start_task("a", REDUCER, t)
    k.end_task(a, selection=[o for o, _ in orgs])
    verdicts.append(k.monitor(a))
    for org, eps in orgs:
        c = k.start_task("c", org, t)
        k.end_task(c, selection=list(eps))
        verdicts.append(k.monitor(c))
    for org, eps in orgs:
        for cr in range(1, k.local_rounds + 1):
            for ep in eps:
                f = k.start_task("f", ep, t, cr)
                k.end_task(f, f"{ep}/{cr}".encode())
            d = k.start_task("d", org, t, cr)
            payload = f"{org}/{t}/{cr}".encode()
            if cr == k.local_rounds:
                _submit_d(k, org, t, payload)
            k.end_task(d, payload)
            verdicts.append(k.monitor(d))
    b = k.start_task("b", REDUCER, t)
    k.end_task(b, b"global")
    verdicts.append(k.monitor(b))
    for org, _ in orgs:
        e = k.start_task("e", org, t)
        k.end_task(e, b"global")
        verdicts.append(k.monitor(e))
    return verdicts


def _update(values, sender="k1", t=1):
    return WeightUpdate(sender, t, 1, ModelParameters.unchecked(values, SPEC), 10)


# workflow conformance

def test_happy_path_trace_all_conforming():
    k = _contract(local_rounds=2, global_rounds=2)
    v = _happy_round(k, 1) + _happy_round(k, 2)
    k.finish()
    assert all(v) and len(v) == 2 * (1 + 2 + 4 + 1 + 2)
    assert k.violations == [] and k.state is ProcessState.FINISHED
    assert k.ledger.verify_chain()


def _assert_single_violation(k):
    assert len(k.violations) == 1
    assert k.state is ProcessState.TERMINATED
    assert not any(ev.kind == "Start" for ev in k.trace[k.trace.index(_violation_event(k)):])


def _violation_event(k):
    return next(ev for ev in k.trace if ev.kind == "Violation")


def test_b_before_d_holds_is_one_violation():
    k = _contract()
    a = k.start_task("a", REDUCER, 1)
    k.end_task(a, selection=["k1", "k2"])
    k.start_task("b", REDUCER, 1)
    _assert_single_violation(k)
    assert "waiting on d(k1@1.1), d(k2@1.1)" in k.violations[0].reason


def test_duplicate_start_is_one_violation():
    k = _contract()
    k.start_task("a", REDUCER, 1)
    k.start_task("a", REDUCER, 1)
    _assert_single_violation(k)
    assert k.violations[0].reason.startswith("duplicate start")


def test_end_of_pending_is_one_violation():
    k = _contract()
    rec = k.end_task(key("a", REDUCER, 1))
    _assert_single_violation(k)
    assert rec.state is TaskState.VIOLATED


def test_start_after_termination_rejected_and_logged():
    k = _contract()
    k.end_task(key("a", REDUCER, 1))
    n_tx = len(k.ledger.records()) + len(k.ledger.queue)
    k.start_task("a", REDUCER, 1)
    _assert_single_violation(k)
    assert k.trace[-1].kind == "Rejected"
    assert len(k.ledger.records()) + len(k.ledger.queue) == n_tx + 1


def test_start_after_finish_is_violation():
    k = _contract()
    _happy_round(k)
    k.finish()
    k.start_task("a", REDUCER, 2)
    _assert_single_violation(k)


def test_inactive_org_is_violation_unregistered_is_definition_error():
    k = _contract()
    a = k.start_task("a", REDUCER, 1)
    k.end_task(a, selection=["k1"])
    with pytest.raises(WorkflowDefinitionError):
        k.start_task("c", "k9", 1)
    k.start_task("c", "k2", 1)
    _assert_single_violation(k)


# hold conditions

def test_hold_all_completed_is_open():
    k = _contract()
    a = k.start_task("a", REDUCER, 1)
    k.end_task(a, selection=["k1"])
    assert k.hold(HoldCondition((a.key,)))


def test_hold_one_of_three_completed_is_closed():
    k = _contract()
    refs = tuple(key("f", ep, 1) for ep in ("C1", "C2", "C3"))
    for r in refs:
        k.record(r)
    k.records[refs[0]].state = TaskState.COMPLETED
    assert not k.hold(HoldCondition(refs))


def test_hold_empty_condition_is_open():
    assert _contract().hold(HoldCondition(()))


def test_hold_unknown_reference_is_definition_error():
    with pytest.raises(WorkflowDefinitionError):
        _contract().hold(HoldCondition((key("a", REDUCER, 7),)))


def test_completion_releases_dependent_hold():
    k = _contract()
    a = k.start_task("a", REDUCER, 1)
    dep = key("c", "k1", 1)
    assert not k.register_hold(dep)
    assert k.records[dep].state is TaskState.HELD
    k.end_task(a, selection=["k1", "k2"])
    assert dep in k.ready and k.records[dep].state is TaskState.PENDING
    assert k.start_task("c", "k1", 1).state is TaskState.STARTED
    assert k.violations == []


def test_d_digest_mismatch_is_violation():
    k = _contract()
    a = k.start_task("a", REDUCER, 1)
    k.end_task(a, selection=["k1"])
    c = k.start_task("c", "k1", 1)
    k.end_task(c, selection=["C1"])
    f = k.start_task("f", "C1", 1)
    k.end_task(f, b"x")
    d = k.start_task("d", "k1", 1)
    _submit_d(k, "k1", 1, b"what was sent")
    k.end_task(d, b"what was reported")
    v = k.monitor(d)
    assert not v and v.org == "k1" and "differs" in v.reason
    assert k.terminated


# validator

def test_validate_nan_rejected():
    v = init_model(SPEC, 0).values.copy()
    v[5] = np.nan
    assert validate_update(_update(v), []) == Reject("non-finite")


def test_validate_first_update_accepted():
    p = init_model(SPEC, 0)
    verdict = validate_update(_update(p.values), [])
    assert isinstance(verdict, Accept)
    assert verdict.norm == pytest.approx(np.linalg.norm(p.values))


def test_validate_100x_after_five_clean_rounds_rejected():
    p = init_model(SPEC, 0).values
    n = float(np.linalg.norm(p))
    history = [n * s for s in (0.98, 1.0, 1.01, 0.99, 1.02)]
    assert validate_update(_update(p * 1.01), history)
    verdict = validate_update(_update(p * 100), history)
    assert isinstance(verdict, Reject) and verdict.reason == "outlier"
    # mean 1.0 n, spread floored at 0.05 n: z = (100 - 1) / 0.05
    assert verdict.z == pytest.approx((100 - 1.0) / 0.05, rel=1e-9)


def test_validate_cold_start_accepts_anything_finite():
    p = init_model(SPEC, 0).values
    assert validate_update(_update(p * 1e6), [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.1, 100), max_size=8), st.floats(0.01, 1000), st.floats(1.0, 5.0))
def test_validator_is_deterministic(history, scale, threshold):
    pol = NormZScorePolicy(threshold=threshold)
    u = _update(init_model(SPEC, 1).values * scale)
    assert validate_update(u, history, pol) == validate_update(u, list(history), pol)


# full process

def test_two_org_single_round_transaction_count():
    topo = toy_topology()
    out = run_process(topo, init_model(SPEC, 0), RoundConfig(global_rounds=1), HP)
    assert not out.terminated and out.final is not None
    wu = [r for r in out.audit_trail if r.kind == "WeightUpdate"]
    assert sorted((r.sender, r.meta["task"]) for r in wu) == [("k1", "d"), ("k2", "d"), ("reducer", "b")]
    assert out.ledger.verify_chain()
    assert out.ledger.queue == []


def test_zero_orgs_is_definition_error_before_any_task():
    led = Ledger("reducer")
    with pytest.raises(WorkflowDefinitionError):
        run_process(Topology(()), init_model(SPEC, 0), RoundConfig(global_rounds=1), HP, ledger=led)
    assert led.blocks == []


def test_org_without_endpoints_is_definition_error():
    topo = Topology((Organisation("k1", ()),))
    with pytest.raises(WorkflowDefinitionError):
        run_process(topo, init_model(SPEC, 0), RoundConfig(global_rounds=1), HP)


def _scale(org, at):
    def tamper(t, o, u):
        if t == at and o == org:
            return WeightUpdate(u.sender_id, u.global_round, u.local_round,
                                ModelParameters(u.params.values * 100, u.params.spec), u.sample_count, u.endpoint_count)
        return u
    return tamper


def test_adversary_terminates_strict_run_naming_org():
    out = run_process(toy_topology(), init_model(SPEC, 0), RoundConfig(global_rounds=8), HP, tamper=_scale("k2", 6))
    assert out.terminated and out.final is None
    assert len(out.violations) == 1 and out.violations[0].org == "k2"
    assert len(out.history) == 5
    events = [r for r in out.audit_trail if r.meta.get("event") == "Violation"]
    assert len(events) == 1 and events[0].meta["org"] == "k2"
    assert out.ledger.verify_chain()


def test_adversary_is_discarded_in_lenient_mode():
    out = run_process(toy_topology(), init_model(SPEC, 0), RoundConfig(global_rounds=7), HP,
                      tamper=_scale("k2", 6), strict=False)
    assert not out.terminated and out.violations == []
    assert out.history[5].participants == ("k1",)
    assert any(ev.kind == "Discarded" and ev.detail["org"] == "k2" for ev in out.contract.trace)


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 2), st.sampled_from([0.5, 1.0]), st.sampled_from([0.5, 1.0]), st.integers(0, 99))
def test_trace_safety_and_audit_completeness(rounds, local, org_p, ep_p, seed):
    rc = RoundConfig(global_rounds=rounds, local_rounds=local, org_participation=org_p, endpoint_participation=ep_p)
    out = run_process(toy_topology(), init_model(SPEC, seed), rc, HP, seed=seed)
    k = out.contract
    assert not out.terminated and k.violations == []
    ended = {}
    for ev in k.trace:
        if ev.kind == "End":
            ended[ev.key] = ev.seq
    for ev in k.trace:
        if ev.kind != "Start":
            continue
        t = ev.key.round
        if ev.key.task.value == "b":
            need = [key("d", o, t, local) for o in k.active_orgs[t]]
        elif ev.key.task.value == "d":
            need = [key("f", e, t, ev.key.local_round) for e in k.selected[(t, ev.key.scope)]]
        else:
            continue
        assert need and all(ended.get(n, 10**9) < ev.seq for n in need)
    counted = sum(ev.kind in ("Start", "End", "Monitor") for ev in k.trace)
    assert len(out.audit_trail) >= counted
    assert out.ledger.verify_chain()
