"""Durable, append-only transaction log of tool calls.

Every tool invocation for a run becomes a :class:`ToolCallRecord`. The log is
persisted as JSON lines: an ``append`` entry when a call is recorded, then one
``transition`` entry per status change. Nothing is ever rewritten in place, so
replaying the file rebuilds the in-memory sequence exactly. A torn final line
(crash mid-write) is detected on replay and dropped.

Status lifecycle::

    PENDING -> COMPLETED -> COMPENSATED
            \\            \\-> COMPENSATION_FAILED
             \\-> FAILED
"""

from __future__ import annotations

import copy
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Iterator

from rac.clock import Clock, RealClock

logger = logging.getLogger(__name__)


class Status(str, Enum):
    PENDING = "PENDING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    COMPENSATED = "COMPENSATED"
    COMPENSATION_FAILED = "COMPENSATION_FAILED"


LEGAL_TRANSITIONS: frozenset[tuple[Status, Status]] = frozenset(
    {
        (Status.PENDING, Status.COMPLETED),
        (Status.PENDING, Status.FAILED),
        (Status.COMPLETED, Status.COMPENSATED),
        (Status.COMPLETED, Status.COMPENSATION_FAILED),
    }
)

RESULT_STATUSES = frozenset({Status.COMPLETED, Status.COMPENSATED, Status.COMPENSATION_FAILED})
ERROR_STATUSES = frozenset({Status.FAILED, Status.COMPENSATION_FAILED})


class LogError(Exception):
    """Base class for transaction log errors."""


class LogStorageError(LogError):
    """The backing file could not be written or read. The run must abort."""


class LogCorruptedError(LogError):
    """The backing file holds an entry that cannot be replayed."""


class IllegalTransitionError(LogError, ValueError):
    """A status change outside the legal lifecycle was requested."""


class UnknownRecordError(LogError, KeyError):
    pass


@dataclass(frozen=True)
class Timestamps:
    start: int
    finish: int | None = None

    def to_dict(self) -> dict[str, int | None]:
        return {"start": self.start, "finish": self.finish}


@dataclass(frozen=True)
class ToolCallRecord:
    record_id: int
    run_id: str
    tool_name: str
    params: dict[str, Any]
    status: Status = Status.PENDING
    result: Any = None
    error: str | None = None
    timestamps: Timestamps = field(default_factory=lambda: Timestamps(0))
    attempt: int = 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "run_id": self.run_id,
            "tool_name": self.tool_name,
            "params": self.params,
            "result": self.result,
            "status": self.status.value,
            "error": self.error,
            "timestamps": self.timestamps.to_dict(),
            "attempt": self.attempt,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ToolCallRecord:
        ts = data.get("timestamps") or {}
        return cls(
            record_id=int(data["record_id"]),
            run_id=str(data["run_id"]),
            tool_name=str(data["tool_name"]),
            params=data["params"],
            status=Status(data["status"]),
            result=data.get("result"),
            error=data.get("error"),
            timestamps=Timestamps(int(ts.get("start", 0)), ts.get("finish")),
            attempt=int(data.get("attempt", 1)),
        )


def dumps(doc: Any) -> str:
    """Canonical JSON used for every persisted line (stable across runs)."""
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _structured_copy(value: Any, what: str) -> Any:
    try:
        return json.loads(dumps(value))
    except (TypeError, ValueError) as exc:
        raise TypeError(f"{what} must be JSON-structured data: {exc}") from exc


def check_transition(current: Status, new: Status) -> None:
    if (current, new) not in LEGAL_TRANSITIONS:
        raise IllegalTransitionError(f"illegal status transition {current.value} -> {new.value}")


def iter_entries(path: str | os.PathLike[str]) -> Iterator[dict[str, Any]]:
    """Yield the decoded entries of a log file, dropping a torn final line."""
    for entry, _ in _scan(Path(path)):
        yield entry


def _scan(path: Path) -> Iterator[tuple[dict[str, Any], int]]:
    # yields (entry, byte offset just past the entry's newline)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        return
    except OSError as exc:
        raise LogStorageError(f"cannot read log {path}: {exc}") from exc
    offset = 0
    lines = raw.split(b"\n")
    for i, line in enumerate(lines):
        last = i == len(lines) - 1
        if last:
            if line:
                logger.warning("discarding torn final line in %s (%d bytes)", path, len(line))
            return
        offset += len(line) + 1
        if not line.strip():
            continue
        try:
            entry = json.loads(line)
        except json.JSONDecodeError as exc:
            # only the final line may be torn; a complete bad line is corruption
            raise LogCorruptedError(f"{path}: undecodable entry at line {i + 1}: {exc}") from exc
        yield entry, offset


class TransactionLog:
    """The transaction log of one agent run.

    Args:
        run_id: identifier of the run.
        storage_path: JSON-lines backing file. Replayed if it already exists.
        clock: source of the start/finish timestamps.
        durable: fsync after each write. Turning it off only flushes to the
            OS, which is fine for simulation batches.
    """

    def __init__(
        self,
        run_id: str,
        storage_path: str | os.PathLike[str],
        *,
        clock: Clock | None = None,
        durable: bool = True,
    ) -> None:
        self.run_id = run_id
        self.storage_path = Path(storage_path)
        self.clock = clock or RealClock()
        self.durable = durable
        self.on_append: list[Callable[[ToolCallRecord], None]] = []
        self._records: list[ToolCallRecord] = []
        self._index: dict[int, int] = {}
        self._lock = threading.Lock()
        self._fh = None
        self._replay()
        try:
            self.storage_path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.storage_path, "ab")
        except OSError as exc:
            raise LogStorageError(f"cannot open log {self.storage_path}: {exc}") from exc

    @classmethod
    def open(cls, storage_path: str | os.PathLike[str], **kwargs: Any) -> TransactionLog:
        """Reopen an existing log, taking the run id from its first entry."""
        first = next(iter_entries(storage_path), None)
        if first is None:
            raise LogCorruptedError(f"{storage_path}: no entries to replay")
        return cls(first["run_id"], storage_path, **kwargs)

    # -- replay -----------------------------------------------------------

    def _replay(self) -> None:
        good_end = 0
        for entry, end in _scan(self.storage_path):
            kind = entry.get("kind")
            if kind == "append":
                rec = ToolCallRecord.from_dict(entry)
                if rec.run_id != self.run_id:
                    raise LogCorruptedError(
                        f"{self.storage_path}: entry for run {rec.run_id!r} in log of {self.run_id!r}"
                    )
                if self._records and rec.record_id <= self._records[-1].record_id:
                    raise LogCorruptedError(f"{self.storage_path}: record_id {rec.record_id} not increasing")
                self._index[rec.record_id] = len(self._records)
                self._records.append(rec)
            elif kind == "transition":
                rid = int(entry["record_id"])
                if rid not in self._index:
                    raise LogCorruptedError(f"{self.storage_path}: transition for unknown record {rid}")
                cur = self._records[self._index[rid]]
                new_status = Status(entry["status"])
                try:
                    check_transition(cur.status, new_status)
                except IllegalTransitionError as exc:
                    raise LogCorruptedError(f"{self.storage_path}: record {rid}: {exc}") from exc
                ts = entry.get("timestamps") or {}
                self._records[self._index[rid]] = replace(
                    cur,
                    status=new_status,
                    result=entry.get("result"),
                    error=entry.get("error"),
                    timestamps=Timestamps(int(ts.get("start", cur.timestamps.start)), ts.get("finish")),
                )
            else:
                raise LogCorruptedError(f"{self.storage_path}: unknown entry kind {kind!r}")
            good_end = end
        if self.storage_path.exists() and self.storage_path.stat().st_size > good_end:
            # drop the torn tail so new entries start on a clean line
            try:
                os.truncate(self.storage_path, good_end)
            except OSError as exc:
                raise LogStorageError(f"cannot truncate torn tail of {self.storage_path}: {exc}") from exc

    # -- writing ----------------------------------------------------------

    def _write(self, doc: dict[str, Any]) -> None:
        if self._fh is None:
            raise LogStorageError(f"log {self.storage_path} is closed")
        try:
            self._fh.write(dumps(doc).encode("utf-8") + b"\n")
            self._fh.flush()
            if self.durable:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            raise LogStorageError(f"write to {self.storage_path} failed: {exc}") from exc

    def append(self, tool_name: str, params: dict[str, Any], *, attempt: int = 1) -> ToolCallRecord:
        """Record a new PENDING call. Returns only once the entry is on disk."""
        if not isinstance(params, dict):
            raise TypeError(f"params must be a mapping, got {type(params).__name__}")
        if attempt < 1:
            raise ValueError("attempt must be >= 1")
        params = _structured_copy(params, "params")
        with self._lock:
            rid = self._records[-1].record_id + 1 if self._records else 1
            rec = ToolCallRecord(
                record_id=rid,
                run_id=self.run_id,
                tool_name=tool_name,
                params=params,
                timestamps=Timestamps(self.clock.now_ms()),
                attempt=attempt,
            )
            self._write({"kind": "append", **rec.to_dict()})
            self._index[rid] = len(self._records)
            self._records.append(rec)
        for hook in list(self.on_append):
            hook(rec)
        return rec

    def transition(
        self,
        record_id: int,
        new_status: Status,
        *,
        result: Any = None,
        error: str | None = None,
    ) -> ToolCallRecord:
        new_status = Status(new_status)
        with self._lock:
            cur = self.get(record_id)
            check_transition(cur.status, new_status)
            if new_status in ERROR_STATUSES and not error:
                raise IllegalTransitionError(f"{new_status.value} requires an error message")
            if new_status not in ERROR_STATUSES and error is not None:
                raise IllegalTransitionError(f"{new_status.value} cannot carry an error")
            if new_status == Status.COMPLETED:
                result = _structured_copy(result, "result")
            elif new_status in RESULT_STATUSES:
                if result is not None:
                    raise IllegalTransitionError("the forward result is fixed once COMPLETED")
                result = cur.result
            elif result is not None:
                raise IllegalTransitionError(f"{new_status.value} cannot carry a result")
            finish = self.clock.now_ms() if cur.status == Status.PENDING else cur.timestamps.finish
            ts = Timestamps(cur.timestamps.start, finish)
            self._write(
                {
                    "kind": "transition",
                    "record_id": record_id,
                    "status": new_status.value,
                    "result": result,
                    "error": error,
                    "timestamps": ts.to_dict(),
                }
            )
            rec = replace(cur, status=new_status, result=result, error=error, timestamps=ts)
            self._records[self._index[record_id]] = rec
        return rec

    # -- reading ----------------------------------------------------------

    def get(self, record_id: int) -> ToolCallRecord:
        try:
            return self._records[self._index[record_id]]
        except KeyError:
            raise UnknownRecordError(record_id) from None

    def get_all(self) -> tuple[ToolCallRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self) -> TransactionLog:
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()

    def snapshot(self) -> list[dict[str, Any]]:
        """Deep-copied dict form of every record, for reports and comparisons."""
        return [copy.deepcopy(r.to_dict()) for r in self.get_all()]


class LogDirectory:
    """One log file per run under a common directory."""

    suffix = ".log.jsonl"

    def __init__(self, root: str | os.PathLike[str], *, clock: Clock | None = None, durable: bool = True) -> None:
        self.root = Path(root)
        self.clock = clock
        self.durable = durable

    def path_for(self, run_id: str) -> Path:
        return self.root / f"{run_id}{self.suffix}"

    def open_run(self, run_id: str) -> TransactionLog:
        return TransactionLog(run_id, self.path_for(run_id), clock=self.clock, durable=self.durable)

    def get_all(self, run_id: str) -> tuple[ToolCallRecord, ...]:
        path = self.path_for(run_id)
        if not path.exists():
            return ()
        records: dict[int, ToolCallRecord] = {}
        for entry in iter_entries(path):
            if entry["kind"] == "append":
                records[int(entry["record_id"])] = ToolCallRecord.from_dict(entry)
            else:
                rid = int(entry["record_id"])
                ts = entry.get("timestamps") or {}
                records[rid] = replace(
                    records[rid],
                    status=Status(entry["status"]),
                    result=entry.get("result"),
                    error=entry.get("error"),
                    timestamps=Timestamps(int(ts.get("start", 0)), ts.get("finish")),
                )
        return tuple(records.values())


def status_histories(path: str | os.PathLike[str]) -> dict[int, list[Status]]:
    """Per-record sequence of statuses as written to the file."""
    out: dict[int, list[Status]] = {}
    for entry in iter_entries(path):
        out.setdefault(int(entry["record_id"]), []).append(Status(entry["status"]))
    return out
