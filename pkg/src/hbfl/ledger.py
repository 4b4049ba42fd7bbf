"""Simulated permissioned ledger: identities, signed transactions, hash-chained blocks.

Canonical encoding: every field is a 4-byte big-endian length followed by
its bytes; integers are 8-byte big-endian; metadata is compact JSON with
sorted keys. Block hash = SHA-256 of the full encoded block, and the
transaction root is a sequential fold ``r_i = H(r_{i-1} || H(tx_i))``
starting from 32 zero bytes.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import struct
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Sequence

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import AccessError, AuthenticityError, RegistrationError, SealError

ZERO_HASH = bytes(32)
CHAIN_MAGIC = b"HBFLCHN1"


class Role(str, Enum):
    ADMIN = "Admin"
    PARTICIPANT = "Participant"


class TxKind(str, Enum):
    WEIGHT_UPDATE = "WeightUpdate"
    WORKFLOW_EVENT = "WorkflowEvent"
    REGISTRATION = "Registration"


ACCESS_POLICY: dict[Role, frozenset[TxKind]] = {
    Role.ADMIN: frozenset(TxKind),
    Role.PARTICIPANT: frozenset({TxKind.WEIGHT_UPDATE}),
}


def digest(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def _field(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


def _int(v: int) -> bytes:
    return struct.pack(">q", v)


def _json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.buf):
            raise ValueError("truncated record")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def field(self) -> bytes:
        (n,) = struct.unpack(">I", self.take(4))
        return self.take(n)

    def int(self) -> int:
        return struct.unpack(">q", self.take(8))[0]

    def done(self) -> bool:
        return self.pos == len(self.buf)


def derive_private_key(seed: int, org_id: str) -> Ed25519PrivateKey:
    """Deterministic key material for simulation runs; not for real use."""
    return Ed25519PrivateKey.from_private_bytes(digest(f"hbfl-key|{seed}|{org_id}".encode()))


def public_bytes(key: Ed25519PrivateKey | Ed25519PublicKey) -> bytes:
    if isinstance(key, Ed25519PrivateKey):
        key = key.public_key()
    return key.public_bytes(Encoding.Raw, PublicFormat.Raw)


def _verify(pub: bytes, sig: bytes, msg: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(pub).verify(sig, msg)
        return True
    except (InvalidSignature, ValueError):
        return False


@dataclass(frozen=True)
class OrgIdentity:
    org_id: str
    public_key: bytes
    role: Role
    certificate: bytes

    def binding(self) -> bytes:
        return certificate_message(self.org_id, self.public_key, self.role)

    def verify_certificate(self, admin_public_key: bytes) -> bool:
        return _verify(admin_public_key, self.certificate, self.binding())

    def to_payload(self) -> bytes:
        return _json({
            "org_id": self.org_id,
            "public_key": self.public_key.hex(),
            "role": self.role.value,
            "certificate": self.certificate.hex(),
        })

    @classmethod
    def from_payload(cls, payload: bytes) -> "OrgIdentity":
        d = json.loads(payload)
        return cls(d["org_id"], bytes.fromhex(d["public_key"]), Role(d["role"]), bytes.fromhex(d["certificate"]))


def certificate_message(org_id: str, public_key: bytes, role: Role) -> bytes:
    return b"cert" + _field(org_id.encode()) + _field(public_key) + _field(role.value.encode())


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    sender: str
    meta: dict
    payload: bytes
    payload_digest: bytes
    prev_context: bytes
    timestamp: int
    signature: bytes

    @staticmethod
    def signing_message(kind: TxKind, sender: str, meta: dict, payload_digest: bytes, prev_context: bytes, timestamp: int) -> bytes:
        return b"tx" + b"".join((
            _field(kind.value.encode()),
            _field(sender.encode()),
            _field(_json(meta)),
            _field(payload_digest),
            _field(prev_context),
            _int(timestamp),
        ))

    @classmethod
    def create(cls, kind: TxKind, sender: str, meta: dict, payload: bytes,
               prev_context: bytes, timestamp: int, key: Ed25519PrivateKey) -> "Transaction":
        kind = TxKind(kind)
        pd = digest(payload)
        msg = cls.signing_message(kind, sender, meta, pd, prev_context, timestamp)
        return cls(kind, sender, dict(meta), payload, pd, prev_context, timestamp, key.sign(msg))

    def message(self) -> bytes:
        return self.signing_message(self.kind, self.sender, self.meta, self.payload_digest, self.prev_context, self.timestamp)

    def encode(self) -> bytes:
        return b"".join((
            _field(self.kind.value.encode()),
            _field(self.sender.encode()),
            _field(_json(self.meta)),
            _field(self.payload),
            _field(self.payload_digest),
            _field(self.prev_context),
            _int(self.timestamp),
            _field(self.signature),
        ))

    @classmethod
    def decode(cls, buf: bytes) -> "Transaction":
        r = _Reader(buf)
        kind = TxKind(r.field().decode())
        sender = r.field().decode()
        meta_raw = r.field()
        meta = json.loads(meta_raw)
        if not isinstance(meta, dict) or _json(meta) != meta_raw:
            raise ValueError("non-canonical metadata")
        tx = cls(kind, sender, meta, r.field(), r.field(), r.field(), r.int(), r.field())
        if not r.done():
            raise ValueError("trailing bytes in transaction")
        return tx

    @property
    def tx_id(self) -> bytes:
        return digest(self.encode())


def tx_root(txs: Sequence[Transaction]) -> bytes:
    r = ZERO_HASH
    for tx in txs:
        r = digest(r + digest(tx.encode()))
    return r


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: bytes
    txs: tuple[Transaction, ...]
    root: bytes
    timestamp: int
    sealer: str
    signature: bytes

    @staticmethod
    def header_message(height: int, prev_hash: bytes, root: bytes, timestamp: int, sealer: str, n_tx: int) -> bytes:
        return b"blk" + _int(height) + _field(prev_hash) + _field(root) + _int(timestamp) + _field(sealer.encode()) + _int(n_tx)

    def message(self) -> bytes:
        return self.header_message(self.height, self.prev_hash, self.root, self.timestamp, self.sealer, len(self.txs))

    def encode(self) -> bytes:
        parts = [
            _int(self.height), _field(self.prev_hash), _field(self.root), _int(self.timestamp),
            _field(self.sealer.encode()), _field(self.signature), _int(len(self.txs)),
        ]
        parts.extend(_field(tx.encode()) for tx in self.txs)
        return b"".join(parts)

    @classmethod
    def decode(cls, buf: bytes) -> "Block":
        r = _Reader(buf)
        height = r.int()
        prev_hash = r.field()
        root = r.field()
        ts = r.int()
        sealer = r.field().decode()
        sig = r.field()
        n = r.int()
        if n < 0 or n > len(buf):
            raise ValueError("bad transaction count")
        txs = tuple(Transaction.decode(r.field()) for _ in range(n))
        if not r.done():
            raise ValueError("trailing bytes in block")
        return cls(height, prev_hash, txs, root, ts, sealer, sig)

    @property
    def hash(self) -> bytes:
        return digest(self.encode())


@dataclass(frozen=True)
class Ok:
    blocks: int = 0

    def __bool__(self):
        return True


@dataclass(frozen=True)
class Corrupt:
    height: int
    reason: str

    def __bool__(self):
        return False


@dataclass(frozen=True)
class AuditRecord:
    height: int
    tx_index: int
    tx_id: str
    sender: str
    kind: str
    digest: str
    timestamp: int
    meta: dict

    def to_dict(self) -> dict:
        return {
            "height": self.height, "tx_index": self.tx_index, "tx_id": self.tx_id,
            "sender": self.sender, "kind": self.kind, "digest": self.digest,
            "timestamp": self.timestamp, "meta": self.meta,
        }


class LogicalClock:
    def __init__(self, start: int = 0):
        self._it = itertools.count(start)

    def __call__(self) -> int:
        return next(self._it)


def verify_blocks(blocks: Sequence[Block | bytes], admin_public_key: bytes | None = None) -> Ok | Corrupt:
    """Recheck every link, root, signature, certificate and access rule."""
    identities: dict[str, OrgIdentity] = {}
    admin_key = admin_public_key
    prev = ZERO_HASH
    for h, item in enumerate(blocks):
        if isinstance(item, Block):
            blk = item
            raw = blk.encode()
        else:
            raw = bytes(item)
            try:
                blk = Block.decode(raw)
            except (ValueError, UnicodeDecodeError, struct.error, KeyError, TypeError) as exc:
                return Corrupt(h, f"malformed block: {exc}")
        if blk.height != h:
            return Corrupt(h, f"height {blk.height} out of sequence")
        if blk.prev_hash != prev:
            return Corrupt(h, "prev_hash mismatch")
        if tx_root(blk.txs) != blk.root:
            return Corrupt(h, "root mismatch")
        for i, tx in enumerate(blk.txs):
            if digest(tx.payload) != tx.payload_digest:
                return Corrupt(h, f"tx {i}: payload digest mismatch")
            if tx.prev_context != prev:
                return Corrupt(h, f"tx {i}: context does not match chain position")
            if tx.kind is TxKind.REGISTRATION:
                try:
                    ident = OrgIdentity.from_payload(tx.payload)
                except (ValueError, KeyError, TypeError) as exc:
                    return Corrupt(h, f"tx {i}: malformed registration: {exc}")
                if admin_key is None and h == 0 and i == 0 and ident.role is Role.ADMIN:
                    admin_key = ident.public_key
                if admin_key is None or not ident.verify_certificate(admin_key):
                    return Corrupt(h, f"tx {i}: certificate does not verify")
                if ident.org_id in identities:
                    return Corrupt(h, f"tx {i}: duplicate registration of {ident.org_id}")
                if tx.sender not in identities and not (h == 0 and i == 0 and ident.org_id == tx.sender):
                    return Corrupt(h, f"tx {i}: registration from unknown sender")
                signer = identities.get(tx.sender, ident)
                if not _verify(signer.public_key, tx.signature, tx.message()):
                    return Corrupt(h, f"tx {i}: bad signature")
                if tx.kind not in ACCESS_POLICY[signer.role]:
                    return Corrupt(h, f"tx {i}: {signer.role.value} may not submit {tx.kind.value}")
                identities[ident.org_id] = ident
                continue
            ident = identities.get(tx.sender)
            if ident is None:
                return Corrupt(h, f"tx {i}: unknown sender {tx.sender!r}")
            if not _verify(ident.public_key, tx.signature, tx.message()):
                return Corrupt(h, f"tx {i}: bad signature")
            if tx.kind not in ACCESS_POLICY[ident.role]:
                return Corrupt(h, f"tx {i}: {ident.role.value} may not submit {tx.kind.value}")
        sealer = identities.get(blk.sealer)
        if sealer is None or sealer.role is not Role.ADMIN:
            return Corrupt(h, "sealer is not an admin")
        if not _verify(sealer.public_key, blk.signature, blk.message()):
            return Corrupt(h, "bad sealer signature")
        prev = digest(raw)
    return Ok(len(blocks))


def encode_chain(blocks: Iterable[Block]) -> bytes:
    return CHAIN_MAGIC + b"".join(struct.pack(">Q", len(e)) + e for e in (b.encode() for b in blocks))


def split_chain(buf: bytes) -> list[bytes]:
    """Raw block encodings from a persisted chain; raises ValueError when the framing is broken."""
    if buf[: len(CHAIN_MAGIC)] != CHAIN_MAGIC:
        raise ValueError("not a chain file")
    pos = len(CHAIN_MAGIC)
    out = []
    while pos < len(buf):
        if pos + 8 > len(buf):
            raise ValueError("truncated length prefix")
        (n,) = struct.unpack(">Q", buf[pos : pos + 8])
        pos += 8
        if pos + n > len(buf):
            raise ValueError("truncated block")
        out.append(buf[pos : pos + n])
        pos += n
    return out


def verify_chain_bytes(buf: bytes, admin_public_key: bytes | None = None) -> Ok | Corrupt:
    try:
        blobs = split_chain(buf)
    except ValueError as exc:
        return Corrupt(0, f"malformed chain file: {exc}")
    return verify_blocks(blobs, admin_public_key)


class Ledger:
    """Single-sealer permissioned chain; the admin identity is the reducer."""

    def __init__(self, admin_id: str = "reducer", *, seed: int = 0,
                 clock: Callable[[], int] | None = None, allow_empty_blocks: bool = False):
        self.admin_id = admin_id
        self.seed = seed
        self.clock = clock or LogicalClock()
        self.allow_empty_blocks = allow_empty_blocks
        self.blocks: list[Block] = []
        self.queue: list[Transaction] = []
        self.identities: dict[str, OrgIdentity] = {}
        self.denials: list[dict] = []
        self._lock = threading.RLock()
        self._admin_key = derive_private_key(seed, admin_id)
        pub = public_bytes(self._admin_key)
        ident = OrgIdentity(admin_id, pub, Role.ADMIN, self._admin_key.sign(certificate_message(admin_id, pub, Role.ADMIN)))
        self.identities[admin_id] = ident
        self.queue.append(self._admin_tx(TxKind.REGISTRATION, {"org": admin_id}, ident.to_payload()))

    @property
    def admin_public_key(self) -> bytes:
        return public_bytes(self._admin_key)

    @property
    def head_hash(self) -> bytes:
        return self.blocks[-1].hash if self.blocks else ZERO_HASH

    def key_for(self, org_id: str) -> Ed25519PrivateKey:
        """Simulation convenience: the deterministic key an org would hold."""
        return derive_private_key(self.seed, org_id)

    def _admin_tx(self, kind: TxKind, meta: dict, payload: bytes) -> Transaction:
        return Transaction.create(kind, self.admin_id, meta, payload, self.head_hash, self.clock(), self._admin_key)

    def new_transaction(self, kind: TxKind, sender: str, meta: dict, payload: bytes,
                        key: Ed25519PrivateKey | None = None) -> Transaction:
        if key is None:
            key = self._admin_key if sender == self.admin_id else self.key_for(sender)
        with self._lock:
            return Transaction.create(TxKind(kind), sender, meta, payload, self.head_hash, self.clock(), key)

    def register_org(self, org_id: str, public_key: bytes, *, caller: str | None = None,
                     role: Role = Role.PARTICIPANT) -> OrgIdentity:
        caller = self.admin_id if caller is None else caller
        with self._lock:
            who = self.identities.get(caller)
            if who is None or who.role is not Role.ADMIN:
                self._deny(caller, TxKind.REGISTRATION, "registration requires the admin role")
                raise AccessError(f"{caller!r} may not register identities")
            if org_id in self.identities:
                raise RegistrationError(f"org {org_id!r} is already registered")
            cert = self._admin_key.sign(certificate_message(org_id, public_key, role))
            ident = OrgIdentity(org_id, public_key, role, cert)
            self.identities[org_id] = ident
            self.queue.append(self._admin_tx(TxKind.REGISTRATION, {"org": org_id}, ident.to_payload()))
            return ident

    def _deny(self, sender: str, kind, reason: str) -> None:
        self.denials.append({"time": self.clock(), "sender": sender, "kind": str(getattr(kind, "value", kind)), "reason": reason})

    def submit_transaction(self, tx: Transaction) -> bytes:
        with self._lock:
            ident = self.identities.get(tx.sender)
            if ident is None:
                self._deny(tx.sender, tx.kind, "unregistered sender")
                raise AccessError(f"sender {tx.sender!r} is not registered")
            if tx.kind not in ACCESS_POLICY[ident.role]:
                self._deny(tx.sender, tx.kind, "kind not permitted")
                raise AccessError(f"{ident.role.value} {tx.sender!r} may not submit {tx.kind.value}")
            if digest(tx.payload) != tx.payload_digest:
                self._deny(tx.sender, tx.kind, "payload digest mismatch")
                raise AuthenticityError("payload digest does not match payload")
            if not _verify(ident.public_key, tx.signature, tx.message()):
                self._deny(tx.sender, tx.kind, "bad signature")
                raise AuthenticityError(f"signature does not verify under {tx.sender!r}'s key")
            if tx.prev_context != self.head_hash:
                self._deny(tx.sender, tx.kind, "stale context")
                raise AuthenticityError("transaction context is not the current chain head")
            self.queue.append(tx)
            return tx.tx_id

    def seal_block(self) -> Block:
        with self._lock:
            if not self.queue and not self.allow_empty_blocks:
                raise SealError("no queued transactions")
            txs = tuple(self.queue)
            height = len(self.blocks)
            prev = self.head_hash
            root = tx_root(txs)
            ts = self.clock()
            sig = self._admin_key.sign(Block.header_message(height, prev, root, ts, self.admin_id, len(txs)))
            blk = Block(height, prev, txs, root, ts, self.admin_id, sig)
            self.blocks.append(blk)
            self.queue.clear()
            return blk

    def verify_chain(self) -> Ok | Corrupt:
        with self._lock:
            return verify_blocks(list(self.blocks), self.admin_public_key)

    def records(self) -> list[AuditRecord]:
        out = []
        for blk in self.blocks:
            for i, tx in enumerate(blk.txs):
                out.append(AuditRecord(blk.height, i, tx.tx_id.hex(), tx.sender, tx.kind.value,
                                       tx.payload_digest.hex(), tx.timestamp, dict(tx.meta)))
        return out

    def query_audit(self, *, caller: str | None = None, org: str | None = None, task: str | None = None,
                    round: int | None = None, kind: TxKind | str | None = None,
                    offset: int = 0, limit: int | None = None) -> list[AuditRecord]:
        """Sealed records in chain order.

        Participants may read their own records and the global parameter
        records (task ``b`` weight updates); any wider filter is refused.
        """
        caller = self.admin_id if caller is None else caller
        kind = TxKind(kind) if kind is not None else None
        ident = self.identities.get(caller)
        if ident is None:
            raise AccessError(f"{caller!r} is not registered")
        if ident.role is Role.PARTICIPANT:
            own = org == caller
            global_params = kind is TxKind.WEIGHT_UPDATE and task == "b"
            if not (own or global_params):
                raise AccessError(f"{caller!r} may only read its own records and global parameters")
        out = []
        for rec in self.records():
            if org is not None and rec.sender != org:
                continue
            if task is not None and rec.meta.get("task") != task:
                continue
            if round is not None and rec.meta.get("round") != round:
                continue
            if kind is not None and rec.kind != kind.value:
                continue
            out.append(rec)
        end = None if limit is None else offset + limit
        return out[offset:end]

    def save(self, path) -> None:
        with self._lock, open(path, "wb") as fh:
            fh.write(encode_chain(self.blocks))

    def export_audit(self, path) -> int:
        recs = self.records()
        with open(path, "w") as fh:
            for rec in recs:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        return len(recs)


def load_chain(path) -> list[Block]:
    with open(path, "rb") as fh:
        return [Block.decode(b) for b in split_chain(fh.read())]
