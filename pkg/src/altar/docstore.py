"""Embedded, journal-backed document store.

Each collection persists as one newline-delimited canonical-JSON journal
(`<dir>/<collection>.jsonl`). Every acknowledged write is appended and
fsynced before the call returns; opening a store replays the journals.
A torn final line (partial write from a crash) is discarded silently,
anything else that fails to parse is corruption. A single writer owns
the directory via flock(2) on the LOCK file, which the kernel releases
even after SIGKILL.

Stored documents are treated as immutable values: updates replace the
whole document, and queries snapshot the collection under the lock, so
readers always see a consistent state.
"""

from __future__ import annotations

import errno
import fcntl
import os
import threading
from pathlib import Path

from . import canonical
from .model import RunStatus, validate_tree

COLLECTIONS = ("runs", "metrics", "annotations", "files", "counters")

MAX_DOC_DEPTH = 64  # documents wrap depth-32 configs in envelope levels
MAX_QUERY_LIMIT = 1000

FILTER_OPERATORS = frozenset(
    {"$eq", "$ne", "$gt", "$gte", "$lt", "$lte", "$in", "$contains", "$exists"}
)


class StoreError(Exception):
    pass


class CorruptJournal(StoreError):
    pass


class LockHeld(StoreError):
    pass


class NotFound(StoreError):
    pass


class ImmutableRecord(StoreError):
    pass


class LimitExceeded(StoreError):
    pass


class InvalidFilter(StoreError):
    pass


class StorageFull(StoreError):
    pass


def _wrap_oserror(exc: OSError) -> StoreError:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    return StoreError(str(exc))


# ---------------------------------------------------------------------------
# Filter evaluation


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _is_scalar(value) -> bool:
    return value is None or isinstance(value, (bool, int, float, str))


def scalar_eq(a, b) -> bool:
    """Equality on scalar nodes. Numbers compare numerically across
    int/float; bool is its own kind; cross-type comparison is false."""
    if a is None or b is None:
        return a is None and b is None
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool) and a == b
    if _is_number(a) and _is_number(b):
        return a == b
    if isinstance(a, str) and isinstance(b, str):
        return a == b
    return False


def resolve_path(doc, path: str) -> tuple[bool, object]:
    """Walk a dotted path through maps and lists (numeric segments index
    lists). Returns (found, value); null values count as found."""
    node = doc
    for segment in path.split("."):
        if isinstance(node, dict):
            if segment not in node:
                return False, None
            node = node[segment]
        elif isinstance(node, list):
            if not segment.isdigit():
                return False, None
            index = int(segment)
            if index >= len(node):
                return False, None
            node = node[index]
        else:
            return False, None
    return True, node


def validate_filter(filt) -> None:
    """Check a filter against the operator-object rules; raises InvalidFilter."""
    if not isinstance(filt, dict):
        raise InvalidFilter("filter must be a map of path -> condition")
    for path, cond in filt.items():
        if not isinstance(path, str) or not path:
            raise InvalidFilter("filter paths must be non-empty strings")
        if isinstance(cond, dict):
            if not cond:
                raise InvalidFilter(f"{path}: empty operator object")
            for op, operand in cond.items():
                if op not in FILTER_OPERATORS:
                    raise InvalidFilter(f"{path}: unknown operator {op!r}")
                if op == "$in":
                    if not isinstance(operand, list) or not all(
                        _is_scalar(v) for v in operand
                    ):
                        raise InvalidFilter(f"{path}: $in takes a list of scalars")
                elif op == "$exists":
                    if not isinstance(operand, bool):
                        raise InvalidFilter(f"{path}: $exists takes a bool")
                elif op == "$contains":
                    if not isinstance(operand, str):
                        raise InvalidFilter(f"{path}: $contains takes a string")
                elif not _is_scalar(operand):
                    raise InvalidFilter(f"{path}: {op} takes a scalar")
        elif not _is_scalar(cond):
            raise InvalidFilter(f"{path}: bare condition must be a scalar")


def _op_matches(op: str, operand, found: bool, value) -> bool:
    if op == "$exists":
        return found is operand
    if not found:
        return False
    if op == "$eq":
        return scalar_eq(value, operand)
    if op == "$ne":
        return not scalar_eq(value, operand)
    if op in ("$gt", "$gte", "$lt", "$lte"):
        if _is_number(value) and _is_number(operand):
            pass
        elif isinstance(value, str) and isinstance(operand, str):
            pass
        else:
            return False
        if op == "$gt":
            return value > operand
        if op == "$gte":
            return value >= operand
        if op == "$lt":
            return value < operand
        return value <= operand
    if op == "$in":
        return any(scalar_eq(value, item) for item in operand)
    if op == "$contains":
        return isinstance(value, str) and operand in value
    raise InvalidFilter(f"unknown operator {op!r}")


def matches(filt: dict, doc) -> bool:
    """True when the document satisfies every (path, condition) entry.

    Equality is scalar equality; ordering applies only number-to-number
    or string-to-string; `$contains` is a case-sensitive substring test
    on strings; a missing path fails every condition except
    `$exists: false`.
    """
    for path, cond in filt.items():
        found, value = resolve_path(doc, path)
        if isinstance(cond, dict):
            if not all(
                _op_matches(op, operand, found, value) for op, operand in cond.items()
            ):
                return False
        else:
            if not (found and scalar_eq(value, cond)):
                return False
    return True


# ---------------------------------------------------------------------------
# Sort ordering

_RANK_NULL, _RANK_BOOL, _RANK_NUMBER, _RANK_STRING, _RANK_LIST, _RANK_MAP = range(6)


def order_key(value):
    """Total order across node types: null < bool < number < string <
    list < map; containers compare elementwise/by sorted items."""
    if value is None:
        return (_RANK_NULL, 0)
    if isinstance(value, bool):
        return (_RANK_BOOL, int(value))
    if _is_number(value):
        return (_RANK_NUMBER, value)
    if isinstance(value, str):
        return (_RANK_STRING, value)
    if isinstance(value, list):
        return (_RANK_LIST, tuple(order_key(v) for v in value))
    return (_RANK_MAP, tuple((k, order_key(v)) for k, v in sorted(value.items())))


def _sort_key(doc, path: str):
    # Absent values order before any present value (ascending).
    found, value = resolve_path(doc, path)
    if not found:
        return (0,)
    return (1,) + order_key(value)


# ---------------------------------------------------------------------------
# Store


class DocStore:
    """Handle on one store directory. Thread-safe; one writer at a time."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.RLock()
        self._collections: dict[str, dict[int, dict]] = {}
        self._seq: dict[str, int] = {}
        self._next_id: dict[str, int] = {}
        self._handles: dict[str, object] = {}
        self._counter_ids: dict[str, int] = {}
        self._closed = False

        self._lock_path = self.directory / "LOCK"
        self._lock_file = open(self._lock_path, "a+")
        try:
            fcntl.flock(self._lock_file.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._lock_file.close()
            raise LockHeld(f"another process owns {self.directory}")

        try:
            for name in COLLECTIONS:
                self._replay(name)
                self._handles[name] = open(self._journal_path(name), "ab")
            for doc_id, doc in self._collections["counters"].items():
                self._counter_ids[doc["name"]] = doc_id
        except BaseException:
            self._release()
            raise

    @classmethod
    def open(cls, directory) -> "DocStore":
        return cls(directory)

    # -- lifecycle ----------------------------------------------------------

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            for handle in self._handles.values():
                handle.close()
            self._handles.clear()
            self._release()

    def _release(self) -> None:
        try:
            fcntl.flock(self._lock_file.fileno(), fcntl.LOCK_UN)
        finally:
            self._lock_file.close()

    def __enter__(self) -> "DocStore":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- journal ------------------------------------------------------------

    def _journal_path(self, name: str) -> Path:
        return self.directory / f"{name}.jsonl"

    def _replay(self, name: str) -> None:
        records: dict[int, dict] = {}
        seq = 0
        path = self._journal_path(name)
        if path.exists():
            data = path.read_bytes()
            lines = data.split(b"\n")
            # Records are single lines written atomically with a trailing
            # newline, so bytes after the last newline are a torn write.
            lines.pop()
            for index, line in enumerate(lines):
                try:
                    record = canonical.loads(line)
                    seq_n = record["seq"]
                    op = record["op"]
                    doc_id = record["id"]
                    doc = record["doc"]
                    if not isinstance(seq_n, int) or seq_n <= seq:
                        raise ValueError("seq not strictly increasing")
                    if op == "insert":
                        if doc_id in records:
                            raise ValueError(f"duplicate insert id {doc_id}")
                        records[doc_id] = doc
                    elif op == "update":
                        if doc_id not in records:
                            raise ValueError(f"update of unknown id {doc_id}")
                        records[doc_id] = doc
                    elif op == "delete":
                        if doc_id not in records:
                            raise ValueError(f"delete of unknown id {doc_id}")
                        del records[doc_id]
                    else:
                        raise ValueError(f"unknown op {op!r}")
                except (ValueError, KeyError, TypeError) as exc:
                    raise CorruptJournal(
                        f"{path.name}:{index + 1}: {exc}"
                    ) from exc
                seq = seq_n
        self._collections[name] = records
        self._seq[name] = seq
        self._next_id[name] = max(records, default=0) + 1

    def _append(self, name: str, op: str, doc_id: int, doc) -> None:
        record = {
            "seq": self._seq[name] + 1,
            "op": op,
            "id": doc_id,
            "doc": doc,
        }
        line = canonical.dumps_bytes(record) + b"\n"
        handle = self._handles[name]
        try:
            handle.write(line)
            handle.flush()
            os.fsync(handle.fileno())
        except OSError as exc:
            raise _wrap_oserror(exc) from exc
        self._seq[name] += 1

    def _check_collection(self, name: str) -> None:
        if name not in self._collections:
            raise StoreError(f"unknown collection {name!r}")
        if self._closed:
            raise StoreError("store is closed")

    # -- CRUD ---------------------------------------------------------------

    def insert(self, collection: str, doc: dict, *, doc_id: int | None = None) -> int:
        self._check_collection(collection)
        doc = validate_tree(doc, max_depth=MAX_DOC_DEPTH)
        with self._lock:
            if doc_id is None:
                doc_id = self._next_id[collection]
            elif doc_id in self._collections[collection]:
                raise StoreError(f"{collection}: id {doc_id} already exists")
            self._append(collection, "insert", doc_id, doc)
            self._collections[collection][doc_id] = doc
            self._next_id[collection] = max(self._next_id[collection], doc_id + 1)
            return doc_id

    def get(self, collection: str, doc_id: int) -> dict:
        self._check_collection(collection)
        with self._lock:
            try:
                doc = self._collections[collection][doc_id]
            except KeyError:
                raise NotFound(f"{collection}: no document {doc_id}") from None
        return canonical.loads(canonical.dumps(doc))

    def update(self, collection: str, doc_id: int, doc: dict) -> None:
        self._check_collection(collection)
        doc = validate_tree(doc, max_depth=MAX_DOC_DEPTH)
        with self._lock:
            current = self._collections[collection].get(doc_id)
            if current is None:
                raise NotFound(f"{collection}: no document {doc_id}")
            self._check_mutable(collection, current)
            self._append(collection, "update", doc_id, doc)
            self._collections[collection][doc_id] = doc

    def delete(self, collection: str, doc_id: int) -> None:
        self._check_collection(collection)
        with self._lock:
            current = self._collections[collection].get(doc_id)
            if current is None:
                raise NotFound(f"{collection}: no document {doc_id}")
            self._check_mutable(collection, current)
            self._append(collection, "delete", doc_id, None)
            del self._collections[collection][doc_id]

    @staticmethod
    def _check_mutable(collection: str, doc: dict) -> None:
        if collection != "runs":
            return
        status = doc.get("status")
        if status in (s.value for s in RunStatus) and status != RunStatus.RUNNING.value:
            raise ImmutableRecord(f"run is {status}; terminal records are frozen")

    # -- counters -----------------------------------------------------------

    def allocate_counter(self, name: str) -> int:
        """Increment a named counter, durably, and return the new value."""
        with self._lock:
            doc_id = self._counter_ids.get(name)
            if doc_id is None:
                value = 1
                doc_id = self.insert("counters", {"name": name, "value": value})
                self._counter_ids[name] = doc_id
            else:
                value = self._collections["counters"][doc_id]["value"] + 1
                self.update("counters", doc_id, {"name": name, "value": value})
            return value

    def allocate_run_id(self) -> int:
        return self.allocate_counter("run_id")

    # -- query --------------------------------------------------------------

    def query(
        self,
        collection: str,
        filt: dict | None = None,
        sort: list[tuple[str, str]] | None = None,
        skip: int = 0,
        limit: int = MAX_QUERY_LIMIT,
    ) -> tuple[int, list[dict]]:
        """Filter, sort, and paginate one collection.

        Returns (total_matched, page). The sort is stable; missing sort
        values order before present ones ascending, and ties always
        break by id ascending. `limit` is capped at 1000.
        """
        self._check_collection(collection)
        if limit > MAX_QUERY_LIMIT:
            raise LimitExceeded(f"limit {limit} exceeds {MAX_QUERY_LIMIT}")
        if skip < 0 or limit < 0:
            raise StoreError("skip and limit must be non-negative")
        filt = filt or {}
        validate_filter(filt)
        for path, direction in sort or []:
            if direction not in ("asc", "desc"):
                raise StoreError(f"sort direction must be asc|desc, got {direction!r}")
            del path
        with self._lock:
            snapshot = sorted(self._collections[collection].items())
        matched = [(doc_id, doc) for doc_id, doc in snapshot if matches(filt, doc)]
        for path, direction in reversed(sort or []):
            matched.sort(
                key=lambda item: _sort_key(item[1], path),
                reverse=direction == "desc",
            )
        page = matched[skip : skip + limit]
        return len(matched), [canonical.loads(canonical.dumps(doc)) for _, doc in page]

    def find(self, collection: str, filt: dict | None = None) -> list[tuple[int, dict]]:
        """Unpaginated filter returning (doc_id, doc) pairs, id ascending."""
        self._check_collection(collection)
        filt = filt or {}
        validate_filter(filt)
        with self._lock:
            snapshot = sorted(self._collections[collection].items())
        return [
            (doc_id, canonical.loads(canonical.dumps(doc)))
            for doc_id, doc in snapshot
            if matches(filt, doc)
        ]

    def ids(self, collection: str) -> list[int]:
        self._check_collection(collection)
        with self._lock:
            return sorted(self._collections[collection])

    # -- compaction ----------------------------------------------------------

    def compact(self) -> None:
        """Rewrite every journal to one insert per live record."""
        with self._lock:
            for name in COLLECTIONS:
                tmp_path = self._journal_path(name).with_suffix(".jsonl.tmp")
                records = self._collections[name]
                try:
                    with open(tmp_path, "wb") as tmp:
                        for seq, doc_id in enumerate(sorted(records), start=1):
                            record = {
                                "seq": seq,
                                "op": "insert",
                                "id": doc_id,
                                "doc": records[doc_id],
                            }
                            tmp.write(canonical.dumps_bytes(record) + b"\n")
                        tmp.flush()
                        os.fsync(tmp.fileno())
                    self._handles[name].close()
                    os.replace(tmp_path, self._journal_path(name))
                    self._sync_dir()
                    self._handles[name] = open(self._journal_path(name), "ab")
                    self._seq[name] = len(records)
                except OSError as exc:
                    raise _wrap_oserror(exc) from exc

    def _sync_dir(self) -> None:
        fd = os.open(self.directory, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)
