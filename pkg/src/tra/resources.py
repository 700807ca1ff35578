"""Transactional resource managers.

Two managed resource kinds participate in two-phase commit: a versioned
key-value store with optimistic validation, and a message queue with
send-at-commit staging. Both keep a small local log (PREPARED/DONE records)
so a prepared transaction survives a crash of the manager, and both follow
the same participant skeleton: Active workspace -> prepare votes and stages
-> commit applies / rollback reverts.

UnmanagedResource marks endpoints that cannot join transactions at all; the
coordinator refuses to enlist them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import LogCorruptError, ResourceCrashed, StoreLimitError, TxnStateError
from .sim import Tracer
from .txn import TransactionContext, Vote
from .wal import LogWriter, read_records

MAX_KEY_LEN = 256
MAX_VALUE_BYTES = 64 * 1024

_TOMBSTONE = object()


@dataclass(frozen=True)
class UnmanagedResource:
    """A resource with no transactional contract (plain legacy endpoint).

    Registered with the coordinator only so that enlisting it fails with a
    clear error instead of a missing-id one.
    """

    endpoint_id: str

    @property
    def rm_id(self) -> str:
        return self.endpoint_id


class ResourceManager:
    """Participant skeleton: guards, the local log, prepared bookkeeping.

    Subclasses implement the state-specific hooks. The in-memory `_data`-like
    structures of subclasses stand in for the durable committed image; a
    crash only wipes workspace and prepared memory, which recover() rebuilds
    from the log.
    """

    def __init__(
        self,
        rm_id: str,
        log_path: str,
        tracer: Tracer | None = None,
        prepare_delay: int = 0,
    ) -> None:
        if not rm_id:
            raise ValueError("rm_id must be non-empty")
        self.rm_id = rm_id
        self.log_path = log_path
        self.tracer = tracer if tracer is not None else Tracer()
        self.prepare_delay = prepare_delay
        self.crashed = False
        self._coordinator = None
        self._writer = LogWriter(log_path)
        self._prepared: dict[int, dict] = {}
        self._done: set[int] = set()

    # -- wiring ---------------------------------------------------------

    def bind(self, coordinator) -> None:
        self._coordinator = coordinator

    def _guard(self) -> None:
        if self.crashed:
            raise ResourceCrashed(f"{self.rm_id} is crashed")

    def _touch(self, ctx: TransactionContext) -> None:
        """First contact with a transaction enlists this manager."""
        self._guard()
        if self._coordinator is not None:
            self._coordinator.enlist(ctx, self.rm_id)
        else:
            ctx.require_active(f"{self.rm_id} access")

    # -- participant contract -------------------------------------------

    def prepare(self, txn_id: int) -> Vote:
        self._guard()
        if txn_id in self._done or txn_id in self._prepared:
            raise TxnStateError(f"{self.rm_id}: txn {txn_id} already prepared or finished")
        if self.prepare_delay:
            self.tracer.clock.advance(self.prepare_delay)
        payload = self._validate_and_stage(txn_id)
        if payload is None:
            self.tracer.emit("rm_vote", rm=self.rm_id, txn=txn_id, vote=Vote.NO.value)
            return Vote.NO
        blob = json.dumps(payload, sort_keys=True).encode("utf-8").hex()
        self._writer.append("PREPARED", txn_id, blob)
        self._prepared[txn_id] = payload
        self.tracer.emit("rm_vote", rm=self.rm_id, txn=txn_id, vote=Vote.YES.value)
        return Vote.YES

    def commit(self, txn_id: int) -> None:
        self._guard()
        if txn_id in self._done:
            return  # phase-2 retry after recovery
        if txn_id not in self._prepared:
            raise TxnStateError(f"{self.rm_id}: commit of txn {txn_id} without prepare")
        self._apply(txn_id, self._prepared.pop(txn_id))
        self._writer.append("DONE", txn_id)
        self._done.add(txn_id)
        self.tracer.emit("rm_commit", rm=self.rm_id, txn=txn_id)

    def rollback(self, txn_id: int) -> None:
        self._guard()
        if txn_id in self._done:
            return
        if txn_id in self._prepared:
            self._unstage(txn_id, self._prepared.pop(txn_id))
            self._writer.append("DONE", txn_id)
            self._done.add(txn_id)
        elif self._has_workspace(txn_id):
            self._discard(txn_id)
        # else: nothing staged here for this txn; rollback is idempotent
        self.tracer.emit("rm_rollback", rm=self.rm_id, txn=txn_id)

    def crash(self) -> None:
        """Lose all volatile state. The log file and committed image stay."""
        if self.crashed:
            return
        self._discard_all_workspaces()
        self._prepared.clear()
        self._done.clear()
        self._lose_memory()
        self._writer.close()
        self.crashed = True
        self.tracer.emit("crash", who=self.rm_id)

    def close(self) -> None:
        """Release the log file handle (end of a simulated run)."""
        self._writer.close()

    def recover(self) -> None:
        """Rebuild prepared state from the local log. No-op if never crashed."""
        if not self.crashed:
            return
        self.crashed = False
        self._writer = LogWriter(self.log_path)
        self._prepared = {}
        self._done = set()
        for rec in read_records(self.log_path):
            if rec[0] == "PREPARED" and len(rec) == 3:
                txn_id = int(rec[1])
                self._prepared[txn_id] = json.loads(bytes.fromhex(rec[2]).decode("utf-8"))
            elif rec[0] == "DONE" and len(rec) == 2:
                txn_id = int(rec[1])
                self._done.add(txn_id)
                self._prepared.pop(txn_id, None)
            else:
                raise LogCorruptError(f"{self.log_path}: bad record {rec!r}")
        for txn_id, payload in self._prepared.items():
            self._restage(txn_id, payload)
        self.tracer.emit("recover", who=self.rm_id, prepared=len(self._prepared))

    # -- subclass hooks --------------------------------------------------

    def _validate_and_stage(self, txn_id: int) -> dict | None:
        raise NotImplementedError

    def _apply(self, txn_id: int, payload: dict) -> None:
        raise NotImplementedError

    def _unstage(self, txn_id: int, payload: dict) -> None:
        raise NotImplementedError

    def _restage(self, txn_id: int, payload: dict) -> None:
        raise NotImplementedError

    def _has_workspace(self, txn_id: int) -> bool:
        raise NotImplementedError

    def _discard(self, txn_id: int) -> None:
        raise NotImplementedError

    def _discard_all_workspaces(self) -> None:
        raise NotImplementedError

    def _lose_memory(self) -> None:
        raise NotImplementedError


def _check_key(key: str) -> None:
    if not isinstance(key, str) or not key:
        raise StoreLimitError("keys must be non-empty strings")
    if len(key) > MAX_KEY_LEN:
        raise StoreLimitError(f"key longer than {MAX_KEY_LEN} characters")


def _check_value(value: str) -> None:
    if not isinstance(value, str):
        raise StoreLimitError("values must be strings")
    if len(value.encode("utf-8")) > MAX_VALUE_BYTES:
        raise StoreLimitError(f"value larger than {MAX_VALUE_BYTES} bytes")


class _StoreWork:
    """Per-transaction workspace: first-observed read versions plus buffered
    writes (value or tombstone)."""

    __slots__ = ("reads", "writes")

    def __init__(self) -> None:
        self.reads: dict[str, int] = {}
        self.writes: dict[str, object] = {}


class ManagedStore(ResourceManager):
    """Versioned key-value store with optimistic validation.

    Reads record the version they observed; writes buffer in the workspace.
    Prepare validates every recorded read against the current version, takes
    commit locks on the write set, and additionally refuses when a read key
    is locked by another prepared transaction (without that check two
    read-write transactions with disjoint write sets could both pass
    validation and produce a non-serializable result).
    """

    kind = "store"

    def __init__(self, rm_id, log_path, tracer=None, prepare_delay=0):
        super().__init__(rm_id, log_path, tracer, prepare_delay)
        self._data: dict[str, str] = {}
        self._versions: dict[str, int] = {}
        self._locks: dict[str, int] = {}
        self._work: dict[int, _StoreWork] = {}

    def seed(self, initial: dict[str, str]) -> None:
        """Install committed state directly (scenario setup, no transaction)."""
        for k, v in initial.items():
            _check_key(k)
            _check_value(v)
            self._data[k] = v

    # -- transactional operations ----------------------------------------

    def _work_for(self, ctx: TransactionContext) -> _StoreWork:
        self._touch(ctx)
        if ctx.id not in self._work:
            self._work[ctx.id] = _StoreWork()
        return self._work[ctx.id]

    def get(self, ctx: TransactionContext, key: str) -> str | None:
        _check_key(key)
        ws = self._work_for(ctx)
        if key in ws.writes:
            buffered = ws.writes[key]
            return None if buffered is _TOMBSTONE else buffered  # type: ignore[return-value]
        ws.reads.setdefault(key, self._versions.get(key, 0))
        return self._data.get(key)

    def put(self, ctx: TransactionContext, key: str, value: str) -> None:
        _check_key(key)
        _check_value(value)
        ws = self._work_for(ctx)
        ws.writes[key] = value

    def delete(self, ctx: TransactionContext, key: str) -> None:
        _check_key(key)
        ws = self._work_for(ctx)
        ws.writes[key] = _TOMBSTONE

    # -- inspection -------------------------------------------------------

    def committed_value(self, key: str) -> str | None:
        return self._data.get(key)

    def committed_snapshot(self) -> dict[str, str]:
        return dict(self._data)

    def version(self, key: str) -> int:
        return self._versions.get(key, 0)

    # -- participant hooks -------------------------------------------------

    def _validate_and_stage(self, txn_id: int) -> dict | None:
        ws = self._work.pop(txn_id, _StoreWork())
        for key, seen in ws.reads.items():
            if self._versions.get(key, 0) != seen:
                return None
            owner = self._locks.get(key)
            if owner is not None and owner != txn_id:
                return None
        for key in ws.writes:
            owner = self._locks.get(key)
            if owner is not None and owner != txn_id:
                return None
        for key in ws.writes:
            self._locks[key] = txn_id
        writes = {}
        for key in sorted(ws.writes):
            v = ws.writes[key]
            writes[key] = ["del"] if v is _TOMBSTONE else ["put", v]
        return {"writes": writes}

    def _apply(self, txn_id: int, payload: dict) -> None:
        for key, op in payload["writes"].items():
            if op[0] == "del":
                self._data.pop(key, None)
            else:
                self._data[key] = op[1]
            self._versions[key] = self._versions.get(key, 0) + 1
        self._release_locks(txn_id, payload)

    def _unstage(self, txn_id: int, payload: dict) -> None:
        self._release_locks(txn_id, payload)

    def _restage(self, txn_id: int, payload: dict) -> None:
        for key in payload["writes"]:
            self._locks[key] = txn_id

    def _release_locks(self, txn_id: int, payload: dict) -> None:
        for key in payload["writes"]:
            if self._locks.get(key) == txn_id:
                del self._locks[key]

    def _has_workspace(self, txn_id: int) -> bool:
        return txn_id in self._work

    def _discard(self, txn_id: int) -> None:
        self._work.pop(txn_id, None)

    def _discard_all_workspaces(self) -> None:
        self._work.clear()

    def _lose_memory(self) -> None:
        self._locks.clear()


class _QueueWork:
    __slots__ = ("sends", "receives", "first_seq")

    def __init__(self, first_seq: int) -> None:
        self.sends: list[str] = []
        self.receives: list[str] = []
        self.first_seq = first_seq


class TxnQueue(ResourceManager):
    """FIFO message queue with transactional send and receive.

    Sends stage in the workspace and only reach the committed queue at
    commit. Receives provisionally remove the head; rollback or a crash puts
    a transaction's receives back at the front in their original relative
    order (earliest receiver closest to the head when several transactions
    unwind at once).
    """

    kind = "queue"

    def __init__(self, rm_id, log_path, tracer=None, prepare_delay=0):
        super().__init__(rm_id, log_path, tracer, prepare_delay)
        self._messages: list[str] = []
        self._work: dict[int, _QueueWork] = {}
        self._seq = 0
        # instrumentation for the conservation invariant, not rm state
        self.initial_depth = 0
        self.committed_sends = 0
        self.committed_receives = 0

    def seed(self, messages: list[str]) -> None:
        for m in messages:
            _check_value(m)
        self._messages.extend(messages)
        self.initial_depth = len(self._messages)

    def _work_for(self, ctx: TransactionContext) -> _QueueWork:
        self._touch(ctx)
        if ctx.id not in self._work:
            self._seq += 1
            self._work[ctx.id] = _QueueWork(self._seq)
        return self._work[ctx.id]

    def send(self, ctx: TransactionContext, message: str) -> None:
        _check_value(message)
        if not message:
            raise StoreLimitError("messages must be non-empty")
        ws = self._work_for(ctx)
        ws.sends.append(message)
        self.tracer.emit("send", rm=self.rm_id, txn=ctx.id, staged=True)

    def receive(self, ctx: TransactionContext) -> str | None:
        """Provisionally take the head message; None when the committed queue
        is empty. A transaction never sees its own staged sends."""
        ws = self._work_for(ctx)
        if not self._messages:
            self.tracer.emit("receive", rm=self.rm_id, txn=ctx.id, empty=True)
            return None
        msg = self._messages.pop(0)
        ws.receives.append(msg)
        self.tracer.emit("receive", rm=self.rm_id, txn=ctx.id, empty=False)
        return msg

    # -- inspection ---------------------------------------------------------

    def peek(self) -> tuple[str, ...]:
        """Committed-visible contents, head first."""
        return tuple(self._messages)

    def depth(self) -> int:
        return len(self._messages)

    def conservation_holds(self) -> bool:
        return (
            self.initial_depth + self.committed_sends - self.committed_receives
            == len(self._messages)
        )

    # -- participant hooks ----------------------------------------------------

    def _validate_and_stage(self, txn_id: int) -> dict | None:
        ws = self._work.pop(txn_id, None)
        if ws is None:
            ws = _QueueWork(0)
        return {"sends": ws.sends, "receives": ws.receives}

    def _apply(self, txn_id: int, payload: dict) -> None:
        self._messages.extend(payload["sends"])
        self.committed_sends += len(payload["sends"])
        self.committed_receives += len(payload["receives"])

    def _unstage(self, txn_id: int, payload: dict) -> None:
        self._messages[0:0] = payload["receives"]

    def _restage(self, txn_id: int, payload: dict) -> None:
        # Prepared receives are already absent from the committed list and
        # recorded in the payload; nothing to re-hold.
        pass

    def _has_workspace(self, txn_id: int) -> bool:
        return txn_id in self._work

    def _discard(self, txn_id: int) -> None:
        ws = self._work.pop(txn_id, None)
        if ws is not None:
            self._messages[0:0] = ws.receives

    def _discard_all_workspaces(self) -> None:
        # Later receivers reinsert first so the earliest receive lands back
        # at the very front.
        for txn_id in sorted(self._work, key=lambda t: self._work[t].first_seq, reverse=True):
            self._discard(txn_id)

    def _lose_memory(self) -> None:
        pass
