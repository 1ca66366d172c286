"""Run data model: configuration validation, path flattening, the
run-status state machine, host capture, and the record types shared by
the store, the service, and the clients.

A configuration is an arbitrary tree of JSON-compatible nodes. The only
rules are the ones the rest of the system depends on: map keys must be
addressable by the dotted-path query scheme (non-empty, no ".", no "$"
prefix), numbers must survive a canonical-JSON round trip (finite
floats, 64-bit ints), and nesting is bounded.
"""

from __future__ import annotations

import platform
import socket
from dataclasses import dataclass, field
from enum import Enum

from . import canonical

MAX_CONFIG_DEPTH = 32
INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class ConfigError(ValueError):
    """Base class for configuration/document validation failures."""


class KeyInvalid(ConfigError):
    pass


class DepthExceeded(ConfigError):
    pass


class NonFiniteNumber(ConfigError):
    pass


class UnsupportedNode(ConfigError):
    """Value is not a storable node (wrong type, out-of-range int, bad text)."""


class IllegalTransition(Exception):
    """Attempted status change on a terminal run."""


def _check_text(value: str, where: str) -> None:
    try:
        value.encode("utf-8")
    except UnicodeEncodeError as exc:
        raise UnsupportedNode(f"{where}: not valid UTF-8 text") from exc


def validate_tree(raw, *, max_depth: int = MAX_CONFIG_DEPTH):
    """Validate a document tree and return a normalized deep copy.

    The input is never mutated. Raises KeyInvalid, DepthExceeded,
    NonFiniteNumber, or UnsupportedNode.
    """
    return _copy_node(raw, 1, max_depth, "<root>")


def _copy_node(node, depth: int, max_depth: int, path: str):
    if node is None:
        return None
    if isinstance(node, bool):
        return node
    if isinstance(node, int):
        if not INT64_MIN <= node <= INT64_MAX:
            raise UnsupportedNode(f"{path}: integer out of 64-bit range")
        return node
    if isinstance(node, float):
        if node != node or node in (float("inf"), float("-inf")):
            raise NonFiniteNumber(f"{path}: non-finite float")
        return node
    if isinstance(node, str):
        _check_text(node, path)
        return node
    if isinstance(node, list):
        if depth > max_depth:
            raise DepthExceeded(f"{path}: nesting deeper than {max_depth}")
        return [
            _copy_node(item, depth + 1, max_depth, f"{path}.{i}")
            for i, item in enumerate(node)
        ]
    if isinstance(node, dict):
        if depth > max_depth:
            raise DepthExceeded(f"{path}: nesting deeper than {max_depth}")
        out = {}
        for key, value in node.items():
            if not isinstance(key, str) or not key:
                raise KeyInvalid(f"{path}: map keys must be non-empty strings")
            if "." in key:
                raise KeyInvalid(f"{path}: key {key!r} contains '.'")
            if key.startswith("$"):
                raise KeyInvalid(f"{path}: key {key!r} starts with '$'")
            _check_text(key, path)
            out[key] = _copy_node(value, depth + 1, max_depth, f"{path}.{key}")
        return out
    raise UnsupportedNode(f"{path}: {type(node).__name__} is not a storable node")


def validate_config(raw) -> dict:
    """Validate an experimental-parameter tree (root must be a map)."""
    if not isinstance(raw, dict):
        raise UnsupportedNode("<root>: configuration root must be a map")
    return _copy_node(raw, 1, MAX_CONFIG_DEPTH, "<root>")


def flatten_paths(config: dict) -> list[tuple[str, object]]:
    """Enumerate every scalar leaf as (dotted path, value).

    List elements are addressed as `<path>.<index>`. The result is
    sorted lexicographically by path and paths are unique.
    """
    out: list[tuple[str, object]] = []

    def walk(node, prefix: str) -> None:
        if isinstance(node, dict):
            for key in sorted(node):
                walk(node[key], f"{prefix}.{key}" if prefix else key)
        elif isinstance(node, list):
            for i, item in enumerate(node):
                walk(item, f"{prefix}.{i}" if prefix else str(i))
        else:
            out.append((prefix, node))

    walk(config, "")
    out.sort(key=lambda pair: pair[0])
    return out


class RunStatus(str, Enum):
    RUNNING = "RUNNING"
    COMPLETED = "COMPLETED"
    FAILED = "FAILED"
    INTERRUPTED = "INTERRUPTED"


TERMINAL_STATUSES = frozenset(
    {RunStatus.COMPLETED, RunStatus.FAILED, RunStatus.INTERRUPTED}
)

_EVENTS = {
    "complete": RunStatus.COMPLETED,
    "fail": RunStatus.FAILED,
    "interrupt": RunStatus.INTERRUPTED,
}


def transition(current: RunStatus, event: str) -> RunStatus:
    """Apply a lifecycle event. Terminal states admit no transition."""
    if event not in _EVENTS:
        raise ValueError(f"unknown event {event!r}")
    if current != RunStatus.RUNNING:
        raise IllegalTransition(f"run is {current.value}; records are frozen")
    return _EVENTS[event]


@dataclass(frozen=True)
class HostInfo:
    hostname: str
    os_name: str
    os_version: str
    runtime_version: str
    captured_at: str

    def to_doc(self) -> dict:
        return {
            "hostname": self.hostname,
            "os_name": self.os_name,
            "os_version": self.os_version,
            "runtime_version": self.runtime_version,
            "captured_at": self.captured_at,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "HostInfo":
        return cls(
            hostname=doc["hostname"],
            os_name=doc["os_name"],
            os_version=doc["os_version"],
            runtime_version=doc["runtime_version"],
            captured_at=doc["captured_at"],
        )


def capture_host(captured_at: str | None = None) -> HostInfo:
    """Snapshot the local machine. Fields that cannot be determined
    come back as "unknown"; no network access is involved."""

    def grab(fn) -> str:
        try:
            value = fn()
        except Exception:
            return "unknown"
        return value if value else "unknown"

    return HostInfo(
        hostname=grab(socket.gethostname),
        os_name=grab(platform.system),
        os_version=grab(platform.release),
        runtime_version=grab(platform.python_version),
        captured_at=captured_at or canonical.now_ts(),
    )


@dataclass(frozen=True)
class ArtifactRef:
    name: str
    kind: str  # "INLINE" | "BLOB"
    size_bytes: int
    content_hash: str
    media_type: str
    blob_uid: str | None = None

    def to_doc(self) -> dict:
        doc = {
            "name": self.name,
            "kind": self.kind,
            "size_bytes": self.size_bytes,
            "content_hash": self.content_hash,
            "media_type": self.media_type,
        }
        if self.blob_uid is not None:
            doc["blob_uid"] = self.blob_uid
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "ArtifactRef":
        return cls(
            name=doc["name"],
            kind=doc["kind"],
            size_bytes=doc["size_bytes"],
            content_hash=doc["content_hash"],
            media_type=doc["media_type"],
            blob_uid=doc.get("blob_uid"),
        )


@dataclass
class RunRecord:
    """One experiment execution.

    Timestamps are RFC 3339 strings so a record round-trips through its
    JSON document byte-for-byte. The document nests the experiment name
    as `experiment.name` because that is the dotted query path the rest
    of the system addresses it by.
    """

    run_id: int
    experiment_name: str
    config: dict
    host: HostInfo
    status: RunStatus
    start_time: str
    heartbeat: str
    stop_time: str | None = None
    result: object = None
    captured_out: str = ""
    artifacts: list[ArtifactRef] = field(default_factory=list)
    metric_names: list[str] = field(default_factory=list)
    ingest_fingerprint: str | None = None
    sources: list[tuple[str, str]] | None = None

    def to_doc(self) -> dict:
        doc = {
            "run_id": self.run_id,
            "experiment": {"name": self.experiment_name},
            "config": self.config,
            "host": self.host.to_doc(),
            "status": self.status.value,
            "start_time": self.start_time,
            "heartbeat": self.heartbeat,
            "captured_out": self.captured_out,
            "artifacts": [ref.to_doc() for ref in self.artifacts],
            "metric_names": list(self.metric_names),
        }
        if self.stop_time is not None:
            doc["stop_time"] = self.stop_time
        if self.result is not None:
            doc["result"] = self.result
        if self.ingest_fingerprint is not None:
            doc["ingest_fingerprint"] = self.ingest_fingerprint
        if self.sources is not None:
            doc["sources"] = [[path, digest] for path, digest in self.sources]
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "RunRecord":
        sources = doc.get("sources")
        return cls(
            run_id=doc["run_id"],
            experiment_name=doc["experiment"]["name"],
            config=doc["config"],
            host=HostInfo.from_doc(doc["host"]),
            status=RunStatus(doc["status"]),
            start_time=doc["start_time"],
            heartbeat=doc["heartbeat"],
            stop_time=doc.get("stop_time"),
            result=doc.get("result"),
            captured_out=doc.get("captured_out", ""),
            artifacts=[ArtifactRef.from_doc(a) for a in doc.get("artifacts", [])],
            metric_names=list(doc.get("metric_names", [])),
            ingest_fingerprint=doc.get("ingest_fingerprint"),
            sources=None if sources is None else [(p, h) for p, h in sources],
        )


@dataclass
class MetricSeries:
    run_id: int
    name: str
    steps: list[float] = field(default_factory=list)
    values: list[float] = field(default_factory=list)
    timestamps: list[str] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "run_id": self.run_id,
            "name": self.name,
            "steps": list(self.steps),
            "values": list(self.values),
            "timestamps": list(self.timestamps),
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "MetricSeries":
        return cls(
            run_id=doc["run_id"],
            name=doc["name"],
            steps=list(doc["steps"]),
            values=list(doc["values"]),
            timestamps=list(doc["timestamps"]),
        )


@dataclass
class Annotation:
    annotation_id: int
    run_id: int
    author: str
    created_at: str
    tags: list[str] = field(default_factory=list)
    note: str = ""

    def to_doc(self) -> dict:
        return {
            "annotation_id": self.annotation_id,
            "run_id": self.run_id,
            "author": self.author,
            "created_at": self.created_at,
            "tags": list(self.tags),
            "note": self.note,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "Annotation":
        return cls(
            annotation_id=doc["annotation_id"],
            run_id=doc["run_id"],
            author=doc["author"],
            created_at=doc["created_at"],
            tags=list(doc["tags"]),
            note=doc["note"],
        )
