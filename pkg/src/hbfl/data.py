"""NetFlow ingestion, preprocessing, per-endpoint partitioning and synthetic data."""

from __future__ import annotations

import hashlib
import logging
import os
import re
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
import yaml

from .errors import ArgumentError, DataError, IngestionError, PlanError, SchemaError, ShapeError

log = logging.getLogger(__name__)

BENIGN = "Benign"
CLASS_TAGS = ("Benign", "DDoS", "DoS", "Reconnaissance", "Theft")
MALFORMED_LIMIT = 0.01
_SKIP_RE = re.compile(r"Skipping line \d+")


@dataclass(frozen=True)
class CsvSchema:
    columns: tuple[str, ...]
    identifier_columns: tuple[str, ...] = ()
    label_column: str = "Label"
    attack_class_column: str = "Attack"
    delimiter: str = ","
    class_tags: tuple[str, ...] = CLASS_TAGS
    name: str = "custom"

    @classmethod
    def from_mapping(cls, m: Mapping) -> "CsvSchema":
        return cls(
            columns=tuple(m["columns"]),
            identifier_columns=tuple(m.get("identifier_columns", ())),
            label_column=m.get("label_column", "Label"),
            attack_class_column=m.get("attack_class_column", "Attack"),
            delimiter=m.get("delimiter", ","),
            class_tags=tuple(m.get("class_tags", CLASS_TAGS)),
            name=m.get("name", "custom"),
        )

    @classmethod
    def load(cls, path) -> "CsvSchema":
        with open(path) as fh:
            return cls.from_mapping(yaml.safe_load(fh))

    @classmethod
    def nf_bot_iot_v2(cls) -> "CsvSchema":
        text = resources.files("hbfl").joinpath("schemas/nf_bot_iot_v2.yaml").read_text()
        return cls.from_mapping(yaml.safe_load(text))

    def to_mapping(self) -> dict:
        return {
            "name": self.name, "delimiter": self.delimiter, "label_column": self.label_column,
            "attack_class_column": self.attack_class_column, "identifier_columns": list(self.identifier_columns),
            "columns": list(self.columns), "class_tags": list(self.class_tags),
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_mapping(), fh, sort_keys=False)

    @property
    def feature_columns(self) -> tuple[str, ...]:
        ids = set(self.identifier_columns)
        return tuple(c for c in self.columns if c not in ids)


@dataclass
class RawDataset:
    """Typed flow records. The frame index is the stable row id (file order)."""

    frame: pd.DataFrame
    label_column: str = "Label"
    attack_class_column: str = "Attack"
    identifier_columns: tuple[str, ...] = ()
    rows_read: int = 0
    malformed: int = 0

    def __post_init__(self):
        for col in (self.label_column, self.attack_class_column):
            if col not in self.frame.columns:
                raise SchemaError(f"missing column {col!r}")
        labels = self.frame[self.label_column].to_numpy()
        if len(labels) and not np.isin(labels, (0, 1)).all():
            raise DataError("label values must be 0 or 1")
        if not self.rows_read:
            self.rows_read = len(self.frame)

    @property
    def column_names(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def feature_columns(self) -> list[str]:
        skip = {self.label_column, self.attack_class_column, *self.identifier_columns}
        return [c for c in self.frame.columns if c not in skip]

    @property
    def labels(self) -> np.ndarray:
        return self.frame[self.label_column].to_numpy(dtype=np.int8)

    @property
    def attack_classes(self) -> np.ndarray:
        return self.frame[self.attack_class_column].to_numpy(dtype=object)

    @property
    def row_ids(self) -> np.ndarray:
        return self.frame.index.to_numpy(dtype=np.int64)

    def features(self) -> np.ndarray:
        return self.frame[self.feature_columns].to_numpy(dtype=np.float64)

    def __len__(self):
        return len(self.frame)

    def with_frame(self, frame: pd.DataFrame, **changes) -> "RawDataset":
        kw = dict(
            label_column=self.label_column,
            attack_class_column=self.attack_class_column,
            identifier_columns=self.identifier_columns,
            rows_read=self.rows_read,
            malformed=self.malformed,
        )
        kw.update(changes)
        return RawDataset(frame, **kw)


def _stable_key(*parts) -> int:
    h = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:8], "little")


def _canonical_tags(values: pd.Series, tags: Sequence[str]) -> pd.Series:
    lookup = {t.lower(): t for t in tags}
    return values.astype(str).str.strip().str.lower().map(lookup)


def _clean_chunk(chunk: pd.DataFrame, schema: CsvSchema) -> tuple[pd.DataFrame, int]:
    """Coerce types; returns the good rows and the number of rows dropped."""
    ok = np.ones(len(chunk), dtype=bool)
    for col in schema.feature_columns:
        if not pd.api.types.is_numeric_dtype(chunk[col]):
            chunk[col] = pd.to_numeric(chunk[col], errors="coerce")
        vals = chunk[col].to_numpy(dtype=np.float64)
        ok &= np.isfinite(vals)
    label = pd.to_numeric(chunk[schema.label_column], errors="coerce")
    ok &= label.isin((0, 1)).to_numpy()
    tags = _canonical_tags(chunk[schema.attack_class_column], schema.class_tags)
    ok &= tags.notna().to_numpy()
    chunk[schema.label_column] = label
    chunk[schema.attack_class_column] = tags
    good = chunk.loc[ok].copy()
    good[schema.label_column] = good[schema.label_column].astype(np.int8)
    for col in schema.feature_columns:
        good[col] = good[col].astype(np.float64)
    return good, int((~ok).sum())


def _cap_by_key(frame: pd.DataFrame, keys: np.ndarray, class_col: str, cap: int | None) -> tuple[pd.DataFrame, np.ndarray]:
    """Keep at most ``cap`` attack rows per class: those with the smallest keys."""
    if cap is None:
        return frame, keys
    keep = np.ones(len(frame), dtype=bool)
    classes = frame[class_col].to_numpy(dtype=object)
    for cls in np.unique(classes):
        if cls == BENIGN:
            continue
        idx = np.flatnonzero(classes == cls)
        if idx.size > cap:
            order = np.lexsort((frame.index.to_numpy()[idx], keys[idx]))
            keep[idx[order[cap:]]] = False
    return frame.loc[keep], keys[keep]


def load_netflow_csv(
    path,
    schema: CsvSchema | None = None,
    *,
    attack_cap: int | None = None,
    seed: int = 0,
    chunksize: int = 500_000,
) -> RawDataset:
    """Read a NetFlow CSV in chunks.

    Rows with the wrong field count, unparsable features, labels outside
    {0, 1} or unknown class tags are skipped and counted; more than 1%
    malformed rows aborts. With ``attack_cap`` each attack class is
    down-sampled on the fly to a seeded random subset; benign rows are kept.
    """
    schema = schema or CsvSchema.nf_bot_iot_v2()
    if not os.path.exists(path):
        raise DataError(f"no such file: {path}")
    header = pd.read_csv(path, sep=schema.delimiter, nrows=0).columns
    needed = [*schema.columns, schema.label_column, schema.attack_class_column]
    missing = [c for c in needed if c not in header]
    if missing:
        raise SchemaError(f"missing column(s) {', '.join(repr(c) for c in missing)} in {path}")
    dtypes = {c: str for c in schema.identifier_columns}
    dtypes[schema.attack_class_column] = str

    kept: list[pd.DataFrame] = []
    kept_keys: list[np.ndarray] = []
    good_total = 0
    bad_total = 0
    offset = 0
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", pd.errors.ParserWarning)
        reader = pd.read_csv(
            path, sep=schema.delimiter, usecols=needed, dtype=dtypes,
            chunksize=chunksize, on_bad_lines="warn", low_memory=False,
        )
        for i, chunk in enumerate(reader):
            chunk.index = pd.RangeIndex(offset, offset + len(chunk))
            offset += len(chunk)
            good, bad = _clean_chunk(chunk[needed], schema)
            good_total += len(good)
            bad_total += bad
            keys = np.random.default_rng([seed, i]).random(len(good))
            kept.append(good)
            kept_keys.append(keys)
            if attack_cap is not None and len(kept) > 1:
                merged = pd.concat(kept)
                mkeys = np.concatenate(kept_keys)
                merged, mkeys = _cap_by_key(merged, mkeys, schema.attack_class_column, attack_cap)
                kept, kept_keys = [merged], [mkeys]
    bad_total += sum(len(_SKIP_RE.findall(str(w.message))) for w in caught)

    total = good_total + bad_total
    if total and bad_total / total > MALFORMED_LIMIT:
        raise IngestionError(f"{bad_total} of {total} rows malformed ({bad_total / total:.2%} > {MALFORMED_LIMIT:.0%})")
    if bad_total:
        log.warning("skipped %d malformed rows of %d", bad_total, total)

    if kept:
        frame = pd.concat(kept)
        keys = np.concatenate(kept_keys)
        frame, _ = _cap_by_key(frame, keys, schema.attack_class_column, attack_cap)
        frame = frame.sort_index()
    else:
        frame = pd.DataFrame({c: pd.Series(dtype=float) for c in needed})
    log.info("read %d rows from %s (%d kept)", good_total, path, len(frame))
    return RawDataset(
        frame,
        label_column=schema.label_column,
        attack_class_column=schema.attack_class_column,
        identifier_columns=schema.identifier_columns,
        rows_read=good_total,
        malformed=bad_total,
    )


def cap_attack_classes(raw: RawDataset, cap: int | None, seed: int) -> RawDataset:
    """In-memory version of the loader's per-class attack cap."""
    if cap is None:
        return raw
    keys = np.array([_stable_key(seed, r) for r in raw.row_ids], dtype=np.float64)
    frame, _ = _cap_by_key(raw.frame, keys, raw.attack_class_column, cap)
    return raw.with_frame(frame)


def drop_flow_identifiers(raw: RawDataset, identifiers: Sequence[str] | None = None) -> RawDataset:
    ids = tuple(raw.identifier_columns if identifiers is None else identifiers)
    absent = [c for c in ids if c not in raw.frame.columns]
    if absent:
        raise SchemaError(f"identifier column(s) {', '.join(repr(c) for c in absent)} not in dataset")
    if not ids:
        return raw
    return raw.with_frame(raw.frame.drop(columns=list(ids)), identifier_columns=())


@dataclass(frozen=True)
class ScalerState:
    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        if np.any(self.maximum < self.minimum):
            raise DataError("scaler max below min")


def fit_scaler(train_features) -> ScalerState:
    x = np.asarray(train_features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DataError("cannot fit a scaler on an empty set")
    return ScalerState(x.min(axis=0), x.max(axis=0))


def apply_scaler(state: ScalerState, features) -> np.ndarray:
    """Min-max scale into [0, 1]; constant columns map to 0, out-of-range values clip."""
    x = np.asarray(features, dtype=np.float64)
    span = state.maximum - state.minimum
    safe = np.where(span > 0, span, 1.0)
    out = (x - state.minimum) / safe
    out[..., span <= 0] = 0.0
    return np.clip(out, 0.0, 1.0)


@dataclass
class DatasetPartition:
    features: np.ndarray
    labels: np.ndarray
    attack_classes: np.ndarray
    endpoint_id: str
    row_ids: np.ndarray | None = None
    scaled: bool = True

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        self.attack_classes = np.asarray(self.attack_classes, dtype=object).reshape(-1)
        if self.row_ids is None:
            self.row_ids = np.arange(len(self.labels), dtype=np.int64)
        self.row_ids = np.asarray(self.row_ids, dtype=np.int64).reshape(-1)
        n = self.features.shape[0]
        if self.features.ndim != 2 or not (len(self.labels) == len(self.attack_classes) == len(self.row_ids) == n):
            raise ShapeError("partition fields disagree on row count")
        if self.scaled and n and (self.features.min() < 0.0 or self.features.max() > 1.0):
            raise DataError("scaled partition has features outside [0, 1]")

    def __len__(self):
        return len(self.labels)

    def take(self, idx, *, features=None, **changes) -> "DatasetPartition":
        kw = dict(endpoint_id=self.endpoint_id, scaled=self.scaled)
        kw.update(changes)
        return DatasetPartition(
            self.features[idx] if features is None else features,
            self.labels[idx],
            self.attack_classes[idx],
            row_ids=self.row_ids[idx],
            **kw,
        )


def _stratified_split(labels, classes, row_ids, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions (into the given arrays) of train and test rows.

    Each (label, class) stratum is ordered by row id and shuffled with a
    generator keyed on the stratum, so the assignment depends only on the
    row ids present, not on input order. Train counts per stratum use
    largest-remainder rounding so the total is round(ratio * n).
    """
    if not 0 < ratio < 1:
        raise ArgumentError(f"ratio must be in (0, 1), got {ratio}")
    labels = np.asarray(labels)
    classes = np.asarray(classes, dtype=object)
    row_ids = np.asarray(row_ids)
    n = len(labels)
    strata: dict[tuple, np.ndarray] = {}
    keys = list(zip(labels.tolist(), classes.tolist()))
    for key in sorted(set(keys), key=lambda k: (str(k[0]), str(k[1]))):
        pos = np.flatnonzero((labels == key[0]) & (classes == key[1]))
        strata[key] = pos[np.argsort(row_ids[pos], kind="stable")]

    forced = {k for k, pos in strata.items() if len(pos) < 2}
    for k in forced:
        warnings.warn(f"stratum {k} has {len(strata[k])} row(s); assigned to train", stacklevel=3)
    target = int(round(ratio * n)) - sum(len(strata[k]) for k in forced)
    free = [k for k in strata if k not in forced]
    free_n = sum(len(strata[k]) for k in free)
    quotas = {}
    if free:
        exact = {k: len(strata[k]) * target / free_n for k in free}
        quotas = {k: min(len(strata[k]), int(np.floor(exact[k]))) for k in free}
        left = target - sum(quotas.values())
        order = sorted(free, key=lambda k: (-(exact[k] - np.floor(exact[k])), str(k)))
        for k in order:
            if left <= 0:
                break
            if quotas[k] < len(strata[k]):
                quotas[k] += 1
                left -= 1

    train, test = [], []
    for k, pos in strata.items():
        if k in forced:
            train.append(pos)
            continue
        rng = np.random.default_rng([seed, _stable_key(*k) & 0xFFFFFFFF])
        perm = pos[rng.permutation(len(pos))]
        train.append(perm[: quotas[k]])
        test.append(perm[quotas[k]:])
    tr = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.intp)
    te = np.sort(np.concatenate(test)) if test else np.empty(0, dtype=np.intp)
    return tr.astype(np.intp), te.astype(np.intp)


def split_train_test(data, ratio: float = 0.7, seed: int = 0):
    """Stratified split of a RawDataset or DatasetPartition into (train, test)."""
    if isinstance(data, RawDataset):
        tr, te = _stratified_split(data.labels, data.attack_classes, data.row_ids, ratio, seed)
        return data.with_frame(data.frame.iloc[tr]), data.with_frame(data.frame.iloc[te])
    tr, te = _stratified_split(data.labels, data.attack_classes, data.row_ids, ratio, seed)
    return data.take(tr), data.take(te)


@dataclass(frozen=True)
class EndpointPlan:
    endpoint_id: str
    org_id: str
    classes: tuple[str, ...]
    benign: bool = True
    caps: Mapping[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class PartitionPlan:
    endpoints: tuple[EndpointPlan, ...]

    def __post_init__(self):
        ids = [e.endpoint_id for e in self.endpoints]
        if len(set(ids)) != len(ids):
            raise PlanError("endpoint ids must be unique")
        for e in self.endpoints:
            if BENIGN in e.classes:
                raise PlanError(f"{e.endpoint_id}: benign rows are selected with the benign flag")

    @property
    def organisations(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {}
        for e in self.endpoints:
            out.setdefault(e.org_id, []).append(e.endpoint_id)
        return out

    def classes_of(self, org_id: str) -> tuple[str, ...]:
        seen = []
        for e in self.endpoints:
            if e.org_id == org_id:
                seen.extend(c for c in e.classes if c not in seen)
        return tuple(seen)

    @classmethod
    def standard(cls, caps: Mapping[str, int] | None = None) -> "PartitionPlan":
        caps = dict(caps or {})
        k1 = ("DDoS", "Reconnaissance")
        k2 = ("DoS", "Theft")
        return cls((
            EndpointPlan("C1", "k1", k1, True, caps),
            EndpointPlan("C2", "k1", k1, True, caps),
            EndpointPlan("C3", "k2", k2, True, caps),
            EndpointPlan("C4", "k2", k2, True, caps),
        ))


def partition(data: RawDataset, plan: PartitionPlan, seed: int = 0) -> list[DatasetPartition]:
    """Unscaled per-endpoint partitions, one per plan entry, in plan order.

    Rows of a class wanted by several endpoints are shuffled (seeded by
    class) and dealt into near-equal disjoint blocks. Benign rows are dealt
    the same way across every endpoint with the benign flag.
    """
    present = set(data.attack_classes.tolist())
    for e in plan.endpoints:
        for c in e.classes:
            if c not in present:
                raise PlanError(f"{e.endpoint_id} asks for class {c!r}, absent from the data")
        if e.benign and BENIGN not in present:
            raise PlanError(f"{e.endpoint_id} asks for benign rows, absent from the data")

    classes = data.attack_classes
    ids = data.row_ids
    chosen: dict[str, list[np.ndarray]] = {e.endpoint_id: [] for e in plan.endpoints}
    wanted = sorted({c for e in plan.endpoints for c in e.classes} | {BENIGN})
    for cls in wanted:
        takers = [e for e in plan.endpoints if (e.benign if cls == BENIGN else cls in e.classes)]
        if not takers:
            continue
        pos = np.flatnonzero(classes == cls)
        pos = pos[np.argsort(ids[pos], kind="stable")]
        rng = np.random.default_rng([seed, _stable_key("partition", cls) & 0xFFFFFFFF])
        pos = pos[rng.permutation(len(pos))]
        for e, block in zip(takers, np.array_split(pos, len(takers))):
            cap = e.caps.get(cls)
            chosen[e.endpoint_id].append(block if cap is None else block[:cap])

    feats = data.features()
    labels = data.labels
    out = []
    for e in plan.endpoints:
        blocks = chosen[e.endpoint_id]
        pos = np.concatenate(blocks) if blocks else np.empty(0, dtype=np.intp)
        pos = pos[np.argsort(ids[pos], kind="stable")]
        out.append(DatasetPartition(feats[pos], labels[pos], classes[pos], e.endpoint_id, row_ids=ids[pos], scaled=False))
    return out


@dataclass
class EndpointData:
    endpoint_id: str
    org_id: str
    train: DatasetPartition
    test: DatasetPartition
    scaler: ScalerState


def prepare_endpoint(part: DatasetPartition, org_id: str, ratio: float = 0.7, seed: int = 0) -> EndpointData:
    """Split one endpoint's rows, fit min-max on its train rows, scale both sides."""
    tr, te = split_train_test(part, ratio, seed)
    if len(tr) == 0:
        raise DataError(f"{part.endpoint_id}: no training rows")
    scaler = fit_scaler(tr.features)
    train = tr.take(slice(None), features=apply_scaler(scaler, tr.features), scaled=True)
    test = te.take(slice(None), features=apply_scaler(scaler, te.features), scaled=True)
    return EndpointData(part.endpoint_id, org_id, train, test, scaler)


def build_endpoints(raw: RawDataset, plan: PartitionPlan, *, ratio: float = 0.7, seed: int = 0) -> list[EndpointData]:
    raw = drop_flow_identifiers(raw)
    parts = partition(raw, plan, seed)
    org_of = {e.endpoint_id: e.org_id for e in plan.endpoints}
    return [prepare_endpoint(p, org_of[p.endpoint_id], ratio, seed) for p in parts]


def save_endpoints(endpoints: Sequence[EndpointData], directory) -> list[str]:
    """Write one ``<endpoint>.npz`` per endpoint (train, test, scaler); returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = []
    for ep in endpoints:
        arrays = {"org_id": np.array(ep.org_id), "scaler_min": ep.scaler.minimum, "scaler_max": ep.scaler.maximum}
        for side, part in (("train", ep.train), ("test", ep.test)):
            arrays[f"{side}_x"] = part.features
            arrays[f"{side}_y"] = part.labels
            arrays[f"{side}_c"] = part.attack_classes.astype(str)
            arrays[f"{side}_id"] = part.row_ids
        path = os.path.join(directory, f"{ep.endpoint_id}.npz")
        np.savez(path, **arrays)
        paths.append(path)
    return paths


def load_endpoints(directory) -> list[EndpointData]:
    names = sorted(f for f in os.listdir(directory) if f.endswith(".npz"))
    if not names:
        raise DataError(f"no cached partitions in {directory}; run `hbfl ingest` first")
    out = []
    for name in names:
        ep_id = name[:-4]
        with np.load(os.path.join(directory, name), allow_pickle=False) as z:
            sides = {
                side: DatasetPartition(z[f"{side}_x"], z[f"{side}_y"], z[f"{side}_c"].astype(object), ep_id, z[f"{side}_id"])
                for side in ("train", "test")
            }
            scaler = ScalerState(z["scaler_min"], z["scaler_max"])
            out.append(EndpointData(ep_id, str(z["org_id"]), sides["train"], sides["test"], scaler))
    return out


@dataclass(frozen=True)
class SyntheticSpec:
    """Gaussian clusters, one per class tag."""

    counts: Mapping[str, int]
    means: Mapping[str, Sequence[float]]
    sigmas: Mapping[str, float] = field(default_factory=dict)
    clip: float | None = None

    @property
    def dim(self) -> int:
        return len(next(iter(self.means.values())))


def netflow_like_synthetic_spec(
    separation: float = 4.0,
    dim: int = 16,
    benign: int = 13500,
    per_attack: int = 2000,
    attack_sigma: float = 0.5,
    shared: float = 0.6,
    clip: float | None = 2.5,
) -> SyntheticSpec:
    """Five-class stand-in for the NetFlow data, distances in benign-sigma units.

    Every attack centre sits at least ``separation`` from the benign centre.
    DDoS is shifted along axes 0-3 and DoS shares those axes plus a small
    offset on axis 4, so knowledge transfers between them. Reconnaissance
    (axes 5-8, positive) and Theft (axes 9-12, negative) each have private
    axes; a fraction ``shared`` of their displacement lies on a common
    trait (axes 13-15). Their centres stay far apart, so a model that never
    saw one of them has no evidence about it. The default 6.75:1
    benign-to-class ratio matches 135,037 benign rows against a 20,000-row
    attack cap. Clipping to a fixed box keeps per-endpoint min-max ranges
    comparable.
    """
    if dim < 16:
        raise ArgumentError("synthetic layout needs dim >= 16")
    if not 0 <= shared < 1:
        raise ArgumentError(f"shared must be in [0, 1), got {shared}")
    step = separation / 2.0  # four shifted axes -> Euclidean distance = separation
    zero = np.zeros(dim)
    ddos = zero.copy(); ddos[0:4] = step
    dos = ddos.copy(); dos[4] = 0.75 * step
    own = np.sqrt(1.0 - shared**2)
    common = shared * separation / np.sqrt(3.0)
    recon = zero.copy(); recon[5:9] = own * step; recon[13:16] = common
    theft = zero.copy(); theft[9:13] = -own * step; theft[13:16] = common
    means = {"Benign": zero, "DDoS": ddos, "DoS": dos, "Reconnaissance": recon, "Theft": theft}
    counts = {c: (benign if c == BENIGN else per_attack) for c in CLASS_TAGS}
    sigmas = {c: (1.0 if c == BENIGN else attack_sigma) for c in CLASS_TAGS}
    return SyntheticSpec(counts=counts, means={k: tuple(v) for k, v in means.items()}, sigmas=sigmas, clip=clip)


def generate_synthetic(spec: SyntheticSpec, seed: int = 0) -> RawDataset:
    if not spec.counts:
        raise ArgumentError("synthetic spec lists no classes")
    for c, n in spec.counts.items():
        if int(n) <= 0:
            raise ArgumentError(f"count for {c!r} must be positive, got {n}")
        if c not in spec.means:
            raise ArgumentError(f"no mean vector for {c!r}")
    dim = spec.dim
    rng = np.random.default_rng(seed)
    blocks, tags = [], []
    for c in sorted(spec.counts):
        mu = np.asarray(spec.means[c], dtype=np.float64)
        if mu.shape != (dim,):
            raise ArgumentError(f"mean for {c!r} has dimension {mu.shape}, expected {dim}")
        n = int(spec.counts[c])
        x = mu + spec.sigmas.get(c, 1.0) * rng.standard_normal((n, dim))
        blocks.append(x)
        tags.extend([c] * n)
    x = np.vstack(blocks)
    if spec.clip is not None:
        x = np.clip(x, -spec.clip, spec.clip)
    tags = np.asarray(tags, dtype=object)
    shuffle = rng.permutation(len(tags))
    x, tags = x[shuffle], tags[shuffle]
    frame = pd.DataFrame(x, columns=[f"f{i}" for i in range(dim)])
    frame["Label"] = (tags != BENIGN).astype(np.int8)
    frame["Attack"] = tags
    return RawDataset(frame)


def synthetic_schema(dim: int) -> CsvSchema:
    """Layout of a synthetic dataset written to CSV, for reading it back through the loader."""
    return CsvSchema(columns=tuple(f"f{i}" for i in range(dim)), name="synthetic")
