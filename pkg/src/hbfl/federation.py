"""Endpoint, combiner and reducer aggregation and the hierarchical round loop."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .errors import AggregationError, HBFLError, MembershipError, NumericError, PreconditionError, ShapeError
from .nn import Hyperparameters, ModelParameters, train_local

log = logging.getLogger(__name__)

WEIGHTINGS = ("samples", "endpoints")


@dataclass(frozen=True, eq=False)
class WeightUpdate:
    sender_id: str
    global_round: int
    local_round: int
    params: ModelParameters
    sample_count: int
    endpoint_count: int = 1
    signature: bytes = b""

    def __post_init__(self):
        if self.sample_count < 1:
            raise PreconditionError(f"sample_count must be >= 1, got {self.sample_count}")
        if self.global_round < 0 or self.local_round < 0:
            raise PreconditionError("rounds must be non-negative")

    def payload(self) -> bytes:
        """Bytes that a signature or ledger digest covers."""
        head = f"{self.sender_id}|{self.global_round}|{self.local_round}|{self.sample_count}|{self.endpoint_count}|"
        sizes = ",".join(str(s) for s in self.params.spec.sizes)
        return head.encode() + sizes.encode() + b"|" + self.params.values.astype("<f8").tobytes()

    def __eq__(self, other):
        if not isinstance(other, WeightUpdate):
            return NotImplemented
        return (
            self.sender_id == other.sender_id
            and self.global_round == other.global_round
            and self.local_round == other.local_round
            and self.sample_count == other.sample_count
            and self.endpoint_count == other.endpoint_count
            and self.params == other.params
        )

    __hash__ = None


@dataclass(frozen=True)
class RoundConfig:
    global_rounds: int = 10
    local_rounds: int = 1
    org_participation: float = 1.0
    endpoint_participation: float = 1.0
    weighting: str = "samples"

    def validate(self) -> None:
        if self.global_rounds < 1:
            raise PreconditionError(f"global_rounds must be >= 1, got {self.global_rounds}")
        if self.local_rounds < 1:
            raise PreconditionError(f"local_rounds must be >= 1, got {self.local_rounds}")
        for name in ("org_participation", "endpoint_participation"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise PreconditionError(f"{name} must be in (0, 1], got {v}")
        if self.weighting not in WEIGHTINGS:
            raise PreconditionError(f"weighting must be one of {WEIGHTINGS}, got {self.weighting!r}")


def _weight_of(u: WeightUpdate, weighting: str) -> int:
    return u.sample_count if weighting == "samples" else u.endpoint_count


def aggregation_coefficients(updates: Sequence[WeightUpdate], weighting: str = "samples") -> np.ndarray:
    counts = np.array([_weight_of(u, weighting) for u in updates], dtype=np.float64)
    return counts / counts.sum()


def _canonical(updates: Sequence[WeightUpdate]) -> list[WeightUpdate]:
    return sorted(updates, key=lambda u: (u.sender_id, u.sample_count, u.params.values.tobytes()))


def weighted_average(updates: Sequence[WeightUpdate], weighting: str = "samples") -> ModelParameters:
    """Sum_k (n_k / n) w_k with n = sum_k n_k.

    Updates are put in a canonical order first so the floating-point result
    does not depend on arrival order, and the result is clamped to the
    componentwise envelope of the inputs to absorb rounding.
    """
    if not updates:
        raise AggregationError("cannot aggregate an empty update list")
    spec = updates[0].params.spec
    for u in updates[1:]:
        if u.params.spec != spec:
            raise ShapeError(f"layer spec mismatch: {list(spec.sizes)} vs {list(u.params.spec.sizes)}")
    ordered = _canonical(updates)
    coef = aggregation_coefficients(ordered, weighting)
    stack = np.stack([u.params.values for u in ordered])
    out = coef @ stack
    out = np.clip(out, stack.min(axis=0), stack.max(axis=0))
    if not np.all(np.isfinite(out)):
        raise NumericError("aggregate is not finite")
    return ModelParameters(out, spec)


def combiner_aggregate(
    combiner_id: str,
    updates: Sequence[WeightUpdate],
    members: Sequence[str],
    expected: Sequence[str] | None = None,
    weighting: str = "samples",
) -> WeightUpdate:
    """Local aggregate l of one organisation's endpoint updates."""
    member_set = set(members)
    for u in updates:
        if u.sender_id not in member_set:
            raise MembershipError(f"{u.sender_id!r} is not an endpoint of combiner {combiner_id!r}")
    if expected is not None:
        missing = sorted(set(expected) - {u.sender_id for u in updates})
        if missing:
            raise PreconditionError(f"combiner {combiner_id!r} still waiting on {missing}")
    if not updates:
        raise AggregationError(f"combiner {combiner_id!r} received no updates")
    params = weighted_average(updates, weighting)
    return WeightUpdate(
        sender_id=combiner_id,
        global_round=updates[0].global_round,
        local_round=max(u.local_round for u in updates),
        params=params,
        sample_count=sum(u.sample_count for u in updates),
        endpoint_count=sum(u.endpoint_count for u in updates),
    )


def reducer_aggregate(updates: Sequence[WeightUpdate], weighting: str = "samples") -> ModelParameters:
    """Global aggregate g over the combiners' local aggregates."""
    return weighted_average(updates, weighting)


@dataclass
class Endpoint:
    endpoint_id: str
    org_id: str
    data: object  # anything with features / labels, normally a DatasetPartition


@dataclass
class Organisation:
    org_id: str
    endpoints: list[Endpoint]

    @property
    def combiner_id(self) -> str:
        return self.org_id


@dataclass
class Topology:
    organisations: list[Organisation]

    def __post_init__(self):
        seen = set()
        for org in self.organisations:
            for ep in org.endpoints:
                if ep.endpoint_id in seen:
                    raise PreconditionError(f"endpoint {ep.endpoint_id!r} listed twice")
                if ep.org_id != org.org_id:
                    raise PreconditionError(f"endpoint {ep.endpoint_id!r} claims org {ep.org_id!r}, listed under {org.org_id!r}")
                seen.add(ep.endpoint_id)

    def org(self, org_id: str) -> Organisation:
        for o in self.organisations:
            if o.org_id == org_id:
                return o
        raise KeyError(org_id)


def derive_seed(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


def endpoint_round(
    endpoint: Endpoint,
    incoming: ModelParameters,
    hp: Hyperparameters,
    global_round: int = 1,
    local_round: int = 1,
    sign: Callable[[bytes], bytes] | None = None,
) -> WeightUpdate:
    """Train from ``incoming`` on the endpoint's partition and wrap the result."""
    local_hp = replace(hp, seed=derive_seed(hp.seed, endpoint.endpoint_id, global_round, local_round))
    try:
        trained = train_local(incoming, endpoint.data, local_hp)
    except NumericError as exc:
        raise NumericError(f"endpoint {endpoint.endpoint_id}: {exc}", epoch=exc.epoch, batch=exc.batch,
                           context={"endpoint": endpoint.endpoint_id, "round": global_round}) from exc
    except HBFLError as exc:
        raise type(exc)(f"endpoint {endpoint.endpoint_id}: {exc}") from exc
    update = WeightUpdate(endpoint.endpoint_id, global_round, local_round, trained.params, trained.sample_count)
    if sign is not None:
        update = replace(update, signature=sign(update.payload()))
    return update


class Hooks:
    """Callbacks for run_hierarchy; the default set runs plain hierarchical FedAvg.

    ``local_aggregate`` may return False and ``before_global`` may filter
    the list to keep an organisation's update out of the global aggregate.
    Setting ``terminated`` stops the run after the current step.
    """

    terminated: bool = False

    def round_start(self, t: int, orgs: list[Organisation]) -> None: ...
    def endpoints_selected(self, t: int, org: Organisation, endpoints: list[Endpoint]) -> None: ...
    def selection_done(self, t: int, orgs: list[Organisation]) -> None: ...
    def local_round_start(self, t: int, c: int, org: Organisation) -> None: ...
    def endpoint_start(self, t: int, c: int, org: Organisation, endpoint: Endpoint) -> None: ...
    def endpoint_done(self, t: int, c: int, org: Organisation, update: WeightUpdate) -> None: ...
    def local_aggregate(self, t: int, c: int, org: Organisation, update: WeightUpdate) -> bool:
        return True
    def before_global(self, t: int, updates: list[WeightUpdate]) -> list[WeightUpdate]:
        return updates
    def global_aggregate(self, t: int, params: ModelParameters, accepted: list[WeightUpdate]) -> None: ...
    def relayed(self, t: int, org: Organisation, params: ModelParameters) -> None: ...
    def round_end(self, t: int, params: ModelParameters) -> None: ...


@dataclass(frozen=True)
class RoundSnapshot:
    global_round: int
    params: ModelParameters
    participants: tuple[str, ...]


@dataclass
class HierarchyResult:
    history: list[RoundSnapshot] = field(default_factory=list)
    terminated: bool = False

    @property
    def final(self) -> ModelParameters | None:
        return self.history[-1].params if self.history else None


def _sample(items: list, fraction: float, rng: np.random.Generator) -> list:
    if fraction >= 1.0 or len(items) <= 1:
        return list(items)
    k = max(1, int(round(fraction * len(items))))
    idx = np.sort(rng.choice(len(items), size=k, replace=False))
    return [items[i] for i in idx]


def run_hierarchy(
    topology: Topology,
    initial: ModelParameters,
    round_config: RoundConfig,
    hp: Hyperparameters,
    hooks: Hooks | None = None,
    seed: int = 0,
) -> HierarchyResult:
    """T global rounds; each runs C local rounds per organisation, then a global aggregate.

    Within an organisation the local aggregate of round c is the starting
    point of round c + 1; every organisation starts a global round from g.
    """
    round_config.validate()
    hooks = hooks or Hooks()
    if not topology.organisations:
        raise PreconditionError("topology has no organisations")
    rng = np.random.default_rng(seed)
    g = initial
    result = HierarchyResult()
    weighting = round_config.weighting
    for t in range(1, round_config.global_rounds + 1):
        orgs = _sample(topology.organisations, round_config.org_participation, rng)
        hooks.round_start(t, orgs)
        if hooks.terminated:
            break
        chosen = {}
        for org in orgs:
            chosen[org.org_id] = _sample(org.endpoints, round_config.endpoint_participation, rng)
            hooks.endpoints_selected(t, org, chosen[org.org_id])
        hooks.selection_done(t, orgs)
        if hooks.terminated:
            break

        accepted: list[WeightUpdate] = []
        for org in orgs:
            local = g
            agg = None
            for c in range(1, round_config.local_rounds + 1):
                hooks.local_round_start(t, c, org)
                if hooks.terminated:
                    break
                ups = []
                for ep in chosen[org.org_id]:
                    hooks.endpoint_start(t, c, org, ep)
                    u = endpoint_round(ep, local, hp, t, c)
                    hooks.endpoint_done(t, c, org, u)
                    ups.append(u)
                ids = [e.endpoint_id for e in org.endpoints]
                agg = combiner_aggregate(org.combiner_id, ups, ids, [e.endpoint_id for e in chosen[org.org_id]], weighting)
                keep = hooks.local_aggregate(t, c, org, agg)
                if hooks.terminated or keep is False:
                    agg = None
                    break
                local = agg.params
            if hooks.terminated:
                break
            if agg is not None:
                accepted.append(agg)
        if hooks.terminated:
            break
        accepted = hooks.before_global(t, accepted)
        if hooks.terminated:
            break
        if not accepted:
            raise AggregationError(f"round {t}: no organisation update survived")
        g = reducer_aggregate(accepted, weighting)
        hooks.global_aggregate(t, g, accepted)
        if hooks.terminated:
            break
        for org in orgs:
            hooks.relayed(t, org, g)
        result.history.append(RoundSnapshot(t, g, tuple(u.sender_id for u in accepted)))
        hooks.round_end(t, g)
        if hooks.terminated:
            break
    result.terminated = hooks.terminated
    return result


def flat_fedavg(
    endpoints: Sequence[Endpoint],
    initial: ModelParameters,
    rounds: int,
    hp: Hyperparameters,
    on_round: Callable[[int, ModelParameters], None] | None = None,
) -> list[ModelParameters]:
    """Single-server FedAvg over a list of endpoints."""
    g = initial
    history = []
    for t in range(1, rounds + 1):
        ups = [endpoint_round(ep, g, hp, t, 1) for ep in endpoints]
        g = weighted_average(ups)
        history.append(g)
        if on_round is not None:
            on_round(t, g)
    return history
