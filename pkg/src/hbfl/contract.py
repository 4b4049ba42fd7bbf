"""Smart-contract orchestration: task workflow, conformance monitoring, update validation.

Workflow per global round t (C local rounds, scopes in brackets):

    a(t)[reducer]  <- e(t-1)[every active org]        (nothing for t = 1)
    c(t)[org]      <- a(t)
    f(t,c)[ep]     <- c(t)[org] for c = 1, else d(t,c-1)[org]
    d(t,c)[org]    <- f(t,c)[every selected endpoint]
    b(t)[reducer]  <- d(t,C)[every active org]
    e(t)[org]      <- b(t)

The arrow is a Hold: the dependent Start is legal only once every listed
record is Completed. Task f is tracked so the Hold on d can be evaluated,
but it never receives a Monitor verdict.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .errors import WorkflowDefinitionError
from .federation import (
    Endpoint,
    Hooks,
    Organisation,
    RoundConfig,
    Topology,
    WeightUpdate,
    run_hierarchy,
)
from .ledger import AuditRecord, Ledger, Role, TxKind, public_bytes
from .nn import Hyperparameters, ModelParameters

log = logging.getLogger(__name__)

REDUCER = "reducer"


class TaskId(str, Enum):
    a = "a"  # select organisations
    b = "b"  # global aggregate and broadcast
    c = "c"  # select endpoints
    d = "d"  # local aggregate and send
    e = "e"  # relay global parameters
    f = "f"  # endpoint training

    @property
    def monitored(self) -> bool:
        return self is not TaskId.f


class TaskState(str, Enum):
    PENDING = "Pending"
    STARTED = "Started"
    HELD = "Held"
    COMPLETED = "Completed"
    VIOLATED = "Violated"


class ProcessState(str, Enum):
    RUNNING = "Running"
    FINISHED = "Finished"
    TERMINATED = "Terminated"


@dataclass(frozen=True, order=True)
class TaskKey:
    task: TaskId
    scope: str
    round: int
    local_round: int = 0

    def __str__(self):
        lr = f".{self.local_round}" if self.local_round else ""
        return f"{self.task.value}({self.scope}@{self.round}{lr})"

    def meta(self) -> dict:
        return {"task": self.task.value, "scope": self.scope, "round": self.round, "local_round": self.local_round}


def key(task, scope: str, round: int, local_round: int = 0) -> TaskKey:
    task = TaskId(task)
    if task in (TaskId.f, TaskId.d):
        local_round = local_round or 1
    else:
        local_round = 0
    return TaskKey(task, scope, round, local_round)


@dataclass
class TaskRecord:
    key: TaskKey
    state: TaskState = TaskState.PENDING
    started_at: int | None = None
    ended_at: int | None = None
    digest: str | None = None

    @property
    def task(self) -> TaskId:
        return self.key.task


@dataclass(frozen=True)
class HoldCondition:
    refs: tuple[TaskKey, ...]


@dataclass(frozen=True)
class Conforming:
    key: TaskKey

    def __bool__(self):
        return True


@dataclass(frozen=True)
class Violation:
    key: TaskKey | None
    reason: str
    org: str | None = None

    def __bool__(self):
        return False


@dataclass(frozen=True)
class Accept:
    norm: float

    def __bool__(self):
        return True


@dataclass(frozen=True)
class Reject:
    reason: str
    norm: float | None = None
    z: float | None = None

    def __bool__(self):
        return False


class ValidationPolicy(Protocol):
    name: str

    def __call__(self, update: WeightUpdate, history: Sequence[float]) -> Accept | Reject: ...


@dataclass(frozen=True)
class NormZScorePolicy:
    """Reject an update whose L2 norm is an outlier against previously accepted norms.

    The spread estimate is floored at ``rel_std_floor`` times the mean so a
    run whose accepted norms are nearly identical does not turn ordinary
    round-to-round growth into rejections.
    """

    threshold: float = 3.0
    min_history: int = 3
    rel_std_floor: float = 0.05
    name: str = "norm-zscore"

    def __call__(self, update: WeightUpdate, history: Sequence[float]) -> Accept | Reject:
        v = update.params.values
        if not np.all(np.isfinite(v)):
            return Reject("non-finite")
        norm = float(np.linalg.norm(v))
        if len(history) < self.min_history:
            return Accept(norm)
        h = np.asarray(history, dtype=np.float64)
        mu = float(h.mean())
        sd = max(float(h.std()), self.rel_std_floor * abs(mu), 1e-12)
        z = (norm - mu) / sd
        if abs(z) > self.threshold:
            return Reject("outlier", norm, z)
        return Accept(norm)


def validate_update(update: WeightUpdate, history: Sequence[float],
                    policy: ValidationPolicy | None = None) -> Accept | Reject:
    return (policy or NormZScorePolicy())(update, history)


def _digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class TraceEvent:
    seq: int
    kind: str  # Start, End, Hold, Monitor, Violation, Rejected, Discarded, Finish
    key: TaskKey | None
    detail: dict = field(default_factory=dict)


class ContractOrchestrator:
    """Single event loop holding every task record; each event is persisted before it returns."""

    def __init__(self, ledger: Ledger, local_rounds: int = 1, global_rounds: int | None = None,
                 policy: ValidationPolicy | None = None, strict: bool = True):
        self.ledger = ledger
        self.local_rounds = local_rounds
        self.global_rounds = global_rounds
        self.policy = policy or NormZScorePolicy()
        self.strict = strict
        self.state = ProcessState.RUNNING
        self.records: dict[TaskKey, TaskRecord] = {}
        self.trace: list[TraceEvent] = []
        self.violations: list[Violation] = []
        self.accepted_norms: list[float] = []
        self.active_orgs: dict[int, tuple[str, ...]] = {}
        self.selected: dict[tuple[int, str], tuple[str, ...]] = {}
        self.endpoint_org: dict[str, str] = {}
        self.holds: dict[TaskKey, HoldCondition] = {}
        self.ready: set[TaskKey] = set()
        self.terminated_by: str | None = None

    # -- bookkeeping ---------------------------------------------------------

    def _emit(self, kind: str, k: TaskKey | None, **detail) -> TraceEvent:
        ev = TraceEvent(len(self.trace), kind, k, detail)
        self.trace.append(ev)
        meta = {"event": kind, "org": detail.get("org")}
        if k is not None:
            meta.update(k.meta())
        meta = {m: v for m, v in meta.items() if v is not None}
        payload = json.dumps({"event": kind, "key": str(k) if k else None, **detail}, sort_keys=True, default=str).encode()
        tx = self.ledger.new_transaction(TxKind.WORKFLOW_EVENT, self.ledger.admin_id, meta, payload)
        self.ledger.submit_transaction(tx)
        return ev

    def _seal(self) -> None:
        if self.ledger.queue:
            self.ledger.seal_block()

    def record(self, k: TaskKey) -> TaskRecord:
        rec = self.records.get(k)
        if rec is None:
            rec = self.records[k] = TaskRecord(k)
        return rec

    def _violate(self, k: TaskKey | None, reason: str, org: str | None = None) -> Violation:
        v = Violation(k, reason, org)
        self.violations.append(v)
        if k is not None:
            self.record(k).state = TaskState.VIOLATED
        self._emit("Violation", k, reason=reason, org=org)
        self.state = ProcessState.TERMINATED
        self.terminated_by = org
        self._seal()
        log.warning("violation at %s: %s", k, reason)
        return v

    @property
    def terminated(self) -> bool:
        return self.state is ProcessState.TERMINATED

    # -- workflow definition -------------------------------------------------

    def predecessors(self, k: TaskKey) -> tuple[TaskKey, ...]:
        t = k.round
        if k.task is TaskId.a:
            if t <= 1:
                return ()
            return tuple(key("e", o, t - 1) for o in self.active_orgs.get(t - 1, ()))
        if k.task is TaskId.c:
            return (key("a", REDUCER, t),)
        if k.task is TaskId.f:
            org = self.endpoint_org.get(k.scope)
            if org is None:
                raise WorkflowDefinitionError(f"endpoint {k.scope!r} is not registered")
            if k.local_round <= 1:
                return (key("c", org, t),)
            return (key("d", org, t, k.local_round - 1),)
        if k.task is TaskId.d:
            return tuple(key("f", ep, t, k.local_round) for ep in self.selected.get((t, k.scope), ()))
        if k.task is TaskId.b:
            return tuple(key("d", o, t, self.local_rounds) for o in self.active_orgs.get(t, ()))
        if k.task is TaskId.e:
            return (key("b", REDUCER, t),)
        raise WorkflowDefinitionError(f"unknown task {k.task}")

    def _scope_error(self, k: TaskKey) -> str | None:
        t = k.round
        if k.task in (TaskId.a, TaskId.b):
            return None if k.scope == REDUCER else f"{k.task.value} runs on the reducer"
        if k.task in (TaskId.c, TaskId.d, TaskId.e):
            if k.scope not in self.ledger.identities:
                raise WorkflowDefinitionError(f"organisation {k.scope!r} is not registered")
            if t not in self.active_orgs:
                return f"organisations for round {t} have not been selected"
            if k.scope not in self.active_orgs[t]:
                return f"{k.scope} is not active in round {t}"
            return None
        if k.task is TaskId.f:
            org = self.endpoint_org.get(k.scope)
            if org is None:
                raise WorkflowDefinitionError(f"endpoint {k.scope!r} is not registered")
            if k.scope not in self.selected.get((t, org), ()):
                return f"{k.scope} is not selected in round {t}"
        return None

    def register_endpoints(self, topology: Topology) -> None:
        for org in topology.organisations:
            for ep in org.endpoints:
                self.endpoint_org[ep.endpoint_id] = org.org_id

    # -- messages ------------------------------------------------------------

    def hold(self, condition: HoldCondition) -> bool:
        """Open when every referenced record is Completed; an empty condition is open."""
        for r in condition.refs:
            if r not in self.records:
                raise WorkflowDefinitionError(f"hold references unknown record {r}")
        return all(self.records[r].state is TaskState.COMPLETED for r in condition.refs)

    def register_hold(self, dependent: TaskKey, condition: HoldCondition | None = None) -> bool:
        """Park ``dependent`` until its Hold opens; returns whether it is startable now."""
        condition = condition or HoldCondition(self.predecessors(dependent))
        for r in condition.refs:
            self.record(r)
        self.holds[dependent] = condition
        self.record(dependent)
        return self._reevaluate_one(dependent)

    def _reevaluate_one(self, dep: TaskKey) -> bool:
        cond = self.holds.get(dep)
        rec = self.records[dep]
        if cond is not None and self.hold(cond):
            self.ready.add(dep)
            self.holds.pop(dep, None)
            if rec.state is TaskState.HELD:
                rec.state = TaskState.PENDING
            return True
        if cond is not None and rec.state is TaskState.PENDING:
            rec.state = TaskState.HELD
        return dep in self.ready

    def _reevaluate(self) -> None:
        for dep in list(self.holds):
            self._reevaluate_one(dep)

    def start_task(self, task, scope: str, round: int, local_round: int = 0) -> TaskRecord:
        k = key(task, scope, round, local_round)
        if self.state is ProcessState.TERMINATED:
            self._emit("Rejected", k, reason="process terminated")
            return self.records.get(k) or TaskRecord(k)
        if self.state is ProcessState.FINISHED:
            self._violate(k, "start after the process finished")
            return self.record(k)
        rec = self.records.get(k)
        if rec is not None and rec.state not in (TaskState.PENDING, TaskState.HELD):
            self._violate(k, f"duplicate start of {k} in state {rec.state.value}")
            return rec
        problem = self._scope_error(k)
        if problem:
            self._violate(k, problem)
            return self.record(k)
        preds = self.predecessors(k)
        cond = HoldCondition(preds)
        for p in preds:
            self.record(p)
        if preds:
            self._emit("Hold", k, refs=[str(p) for p in preds], open=self.hold(cond))
        if not self.hold(cond):
            missing = [str(p) for p in preds if self.records[p].state is not TaskState.COMPLETED]
            self._violate(k, f"out-of-order start of {k}; waiting on {', '.join(missing)}")
            return self.record(k)
        rec = self.record(k)
        rec.state = TaskState.STARTED
        rec.started_at = self.ledger.clock()
        self.ready.discard(k)
        self._emit("Start", k)
        return rec

    def end_task(self, record: TaskRecord | TaskKey, result: bytes | None = None,
                 selection: Sequence[str] | None = None) -> TaskRecord:
        k = record.key if isinstance(record, TaskRecord) else record
        rec = self.records.get(k)
        if self.state is ProcessState.TERMINATED:
            self._emit("Rejected", k, reason="process terminated")
            return rec or TaskRecord(k)
        if rec is None or rec.state is not TaskState.STARTED:
            state = rec.state.value if rec else TaskState.PENDING.value
            self._violate(k, f"end of {k} in state {state}")
            return self.record(k)
        if selection is not None:
            sel = tuple(selection)
            if k.task is TaskId.a:
                self.active_orgs[k.round] = sel
            elif k.task is TaskId.c:
                self.selected[(k.round, k.scope)] = sel
            result = json.dumps(list(sel)).encode()
        rec.state = TaskState.COMPLETED
        rec.ended_at = self.ledger.clock()
        rec.digest = _digest(result or b"")
        self._emit("End", k, digest=rec.digest)
        self._reevaluate()
        return rec

    def monitor(self, record: TaskRecord | TaskKey) -> Conforming | Violation:
        k = record.key if isinstance(record, TaskRecord) else record
        rec = self.records.get(k)
        verdict: Conforming | Violation
        if self.state is ProcessState.TERMINATED:
            verdict = Violation(k, "process terminated")
            self._emit("Monitor", k, verdict="Violation", reason=verdict.reason)
            self._seal()
            return verdict
        if rec is None:
            return self._monitor_violation(k, "no such record")
        if rec.state is not TaskState.COMPLETED:
            return self._monitor_violation(k, f"{k} is {rec.state.value}, not Completed")
        if k.task is TaskId.d and k.local_round == self.local_rounds:
            txs = [r for r in self.ledger.records() + self._queued_records()
                   if r.kind == TxKind.WEIGHT_UPDATE.value and r.sender == k.scope
                   and r.meta.get("round") == k.round and r.meta.get("task") == "d"]
            if not txs:
                return self._monitor_violation(k, f"no weight update on the ledger for {k}", org=k.scope)
            if txs[-1].digest != rec.digest:
                return self._monitor_violation(k, f"result digest of {k} differs from the submitted transaction", org=k.scope)
        verdict = Conforming(k)
        self._emit("Monitor", k, verdict="Conforming")
        self._seal()
        return verdict

    def _queued_records(self) -> list[AuditRecord]:
        return [AuditRecord(-1, i, tx.tx_id.hex(), tx.sender, tx.kind.value, tx.payload_digest.hex(), tx.timestamp, dict(tx.meta))
                for i, tx in enumerate(self.ledger.queue)]

    def _monitor_violation(self, k: TaskKey, reason: str, org: str | None = None) -> Violation:
        self._emit("Monitor", k, verdict="Violation", reason=reason, org=org)
        return self._violate(k, reason, org)

    def finish(self) -> None:
        if self.state is ProcessState.RUNNING:
            self.state = ProcessState.FINISHED
            self._emit("Finish", None)
            self._seal()

    def check_update(self, update: WeightUpdate) -> Accept | Reject:
        """Validate one organisation's local aggregate; strict mode terminates on rejection."""
        verdict = validate_update(update, self.accepted_norms, self.policy)
        if verdict:
            self.accepted_norms.append(verdict.norm)
            return verdict
        reason = f"update from {update.sender_id} rejected ({verdict.reason}"
        reason += f", z={verdict.z:.1f})" if verdict.z is not None else ")"
        if self.strict:
            self._violate(key("d", update.sender_id, update.global_round, self.local_rounds), reason, org=update.sender_id)
        else:
            self._emit("Discarded", None, reason=reason, org=update.sender_id)
        return verdict


class _ContractHooks(Hooks):
    def __init__(self, contract: ContractOrchestrator, tamper=None):
        self.k = contract
        self.tamper = tamper

    @property
    def terminated(self):
        return self.k.terminated

    def round_start(self, t, orgs):
        k = self.k
        rec = k.start_task("a", REDUCER, t)
        if k.terminated:
            return
        k.end_task(rec, selection=[o.org_id for o in orgs])
        if not k.terminated:
            k.monitor(rec)

    def endpoints_selected(self, t, org, endpoints):
        k = self.k
        if k.terminated:
            return
        rec = k.start_task("c", org.org_id, t)
        if not k.terminated:
            k.end_task(rec, selection=[e.endpoint_id for e in endpoints])
        if not k.terminated:
            k.monitor(rec)

    def endpoint_start(self, t, c, org, endpoint):
        self.k.start_task("f", endpoint.endpoint_id, t, c)

    def endpoint_done(self, t, c, org, update):
        if not self.k.terminated:
            self.k.end_task(key("f", update.sender_id, t, c), update.payload())

    def local_aggregate(self, t, c, org, update):
        k = self.k
        if k.terminated:
            return False
        rec = k.start_task("d", org.org_id, t, c)
        if k.terminated:
            return False
        final = c == k.local_rounds
        if final and self.tamper is not None:
            update = self.tamper(t, org.org_id, update)
            self._last[org.org_id] = update
        payload = update.payload()
        if final:
            meta = {"task": "d", "round": t, "org": org.org_id, "samples": update.sample_count}
            tx = k.ledger.new_transaction(TxKind.WEIGHT_UPDATE, org.org_id, meta, payload)
            k.ledger.submit_transaction(tx)
        k.end_task(rec, payload)
        if not k.terminated:
            k.monitor(rec)
        return not k.terminated

    def before_global(self, t, updates):
        k = self.k
        updates = [self._last.get(u.sender_id, u) for u in updates]
        self._last.clear()
        kept = []
        for u in sorted(updates, key=lambda u: u.sender_id):
            if k.check_update(u):
                kept.append(u)
            if k.terminated:
                return []
        self._b = k.start_task("b", REDUCER, t)
        return kept

    def global_aggregate(self, t, params, accepted):
        k = self.k
        if k.terminated:
            return
        payload = params.values.astype("<f8").tobytes()
        meta = {"task": "b", "round": t, "orgs": sorted(u.sender_id for u in accepted)}
        tx = k.ledger.new_transaction(TxKind.WEIGHT_UPDATE, k.ledger.admin_id, meta, payload)
        k.ledger.submit_transaction(tx)
        k.end_task(self._b, payload)
        k.monitor(self._b)

    def relayed(self, t, org, params):
        k = self.k
        if k.terminated:
            return
        rec = k.start_task("e", org.org_id, t)
        if not k.terminated:
            k.end_task(rec, params.values.astype("<f8").tobytes())
        if not k.terminated:
            k.monitor(rec)

    def round_end(self, t, params):
        k = self.k
        if not k.terminated and k.global_rounds is not None and t == k.global_rounds:
            k.finish()

    _last: dict
    _b: TaskRecord


@dataclass
class ProcessOutcome:
    final: ModelParameters | None
    terminated: bool
    violations: list[Violation]
    history: list
    contract: ContractOrchestrator
    ledger: Ledger

    @property
    def audit_trail(self):
        return self.ledger.records()


def register_topology(ledger: Ledger, topology: Topology) -> None:
    for org in topology.organisations:
        if org.org_id not in ledger.identities:
            ledger.register_org(org.org_id, public_bytes(ledger.key_for(org.org_id)), role=Role.PARTICIPANT)
    if ledger.queue:
        ledger.seal_block()


def run_process(
    topology: Topology,
    initial: ModelParameters,
    round_config: RoundConfig,
    hp: Hyperparameters,
    *,
    ledger: Ledger | None = None,
    policy: ValidationPolicy | None = None,
    strict: bool = True,
    seed: int = 0,
    tamper: Callable[[int, str, WeightUpdate], WeightUpdate] | None = None,
    on_round: Callable[[int, ModelParameters], None] | None = None,
) -> ProcessOutcome:
    """Run tasks a-f for every round under contract supervision.

    ``tamper`` lets a test play a malicious combiner: it sees each local
    aggregate before submission and returns what the organisation sends.
    """
    round_config.validate()
    if not topology.organisations:
        raise WorkflowDefinitionError("no participating organisations")
    if any(not o.endpoints for o in topology.organisations):
        raise WorkflowDefinitionError("every organisation needs at least one endpoint")
    ledger = ledger or Ledger(seed=seed)
    register_topology(ledger, topology)
    contract = ContractOrchestrator(ledger, round_config.local_rounds, round_config.global_rounds, policy, strict)
    contract.register_endpoints(topology)
    hooks = _ContractHooks(contract, tamper)
    hooks._last = {}
    if on_round is not None:
        base_end = hooks.round_end

        def round_end(t, params):
            base_end(t, params)
            on_round(t, params)

        hooks.round_end = round_end
    result = run_hierarchy(topology, initial, round_config, hp, hooks, seed)
    if contract.state is ProcessState.RUNNING:
        contract.finish()
    if ledger.queue:
        ledger.seal_block()
    final = None if contract.terminated else result.final
    return ProcessOutcome(final, contract.terminated, list(contract.violations), result.history, contract, ledger)
