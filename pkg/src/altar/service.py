"""HTTP service exposing the run database.

One process owns a data directory (`<data_dir>/db` journals,
`<data_dir>/blobs` objects) and serves the JSON API under `/api/`:
run lifecycle, metric logging, artifact upload with size-based routing
(small payloads inline in the database, large ones to the blob store),
querying, and downloads. Responses are canonical JSON. An optional
static bearer token guards `/api/`; a static directory can be mounted
at `/` for the web viewer.
"""

from __future__ import annotations

import argparse
import base64
import hashlib
import hmac
import json
import math
import os
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable

from fastapi import FastAPI, Request, Response
from fastapi.staticfiles import StaticFiles

from . import blobstore, canonical, docstore, model

DEFAULT_LISTEN = "127.0.0.1:8674"
DEFAULT_THRESHOLD_BYTES = 26_214_400  # payloads over 25 MiB go to blob storage
DEFAULT_STALE_SECS = 120
DEFAULT_CAPTURED_OUT_CAP = 1_048_576
TRUNCATION_MARKER = "\n[output truncated]"

_SORT_DIRECTIONS = ("asc", "desc")


@dataclass
class ServiceConfig:
    listen_address: str = DEFAULT_LISTEN
    data_dir: str = "altar-data"
    large_file_threshold_bytes: int = DEFAULT_THRESHOLD_BYTES
    auth_token: str | None = None
    heartbeat_stale_secs: int = DEFAULT_STALE_SECS
    captured_out_cap_bytes: int = DEFAULT_CAPTURED_OUT_CAP
    static_dir: str | None = None
    clock: Callable[[], datetime] = field(default=canonical.utc_now)

    def __post_init__(self):
        if self.large_file_threshold_bytes <= 0:
            raise ValueError("threshold must be positive")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        self.status = status
        self.code = code
        self.message = message
        super().__init__(f"{status} {code}: {message}")


def _json_response(payload, status: int = 200) -> Response:
    return Response(
        content=canonical.dumps(payload),
        status_code=status,
        media_type="application/json",
    )


def _error_response(status: int, code: str, message: str) -> Response:
    return _json_response({"error": code, "detail": message}, status)


async def _read_json(request: Request):
    raw = await request.body()
    try:
        return json.loads(raw)
    except ValueError:
        raise ApiError(400, "BadRequest", "request body is not valid JSON") from None


def _require_map(body) -> dict:
    if not isinstance(body, dict):
        raise ApiError(400, "BadRequest", "request body must be a JSON object")
    return body


def _check_artifact_name(name: str) -> None:
    if not name or len(name) > 512:
        raise ApiError(400, "BadRequest", "artifact name must be 1-512 characters")
    if name.startswith("/") or "\\" in name or "\x00" in name:
        raise ApiError(400, "BadRequest", "artifact name must be a relative path")
    parts = name.split("/")
    if any(part in ("", ".", "..") for part in parts):
        raise ApiError(400, "BadRequest", "artifact name must not contain . or .. segments")


def _finite_number(value) -> bool:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        return False
    return math.isfinite(value)


class RunService:
    """Request-handling core, shared by every endpoint."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        data_dir = Path(config.data_dir)
        data_dir.mkdir(parents=True, exist_ok=True)
        self.store = docstore.DocStore.open(data_dir / "db")
        self.blobs = blobstore.BlobStore.open(data_dir / "blobs")
        # Serializes read-modify-write cycles on run documents.
        self.write_lock = threading.Lock()

    def close(self) -> None:
        self.store.close()

    def now(self) -> str:
        return canonical.format_ts(self.config.clock())

    # -- run helpers -------------------------------------------------------

    def load_run(self, run_id: int) -> dict:
        try:
            return self.store.get("runs", run_id)
        except docstore.NotFound:
            raise ApiError(404, "NotFound", f"no run {run_id}") from None

    def require_running(self, doc: dict) -> None:
        if doc["status"] != model.RunStatus.RUNNING.value:
            raise ApiError(
                409, "ImmutableRecord", f"run is {doc['status']}; terminal records are frozen"
            )

    def decorate(self, doc: dict) -> dict:
        """Attach the derived staleness flag to a run document."""
        stale = False
        if doc.get("status") == model.RunStatus.RUNNING.value:
            age = self.config.clock() - canonical.parse_ts(doc["heartbeat"])
            stale = age.total_seconds() > self.config.heartbeat_stale_secs
        out = dict(doc)
        out["stale"] = stale
        return out

    # -- operations ----------------------------------------------------------

    def create_run(self, body: dict) -> dict:
        name = body.get("experiment_name")
        if not isinstance(name, str) or not name:
            raise ApiError(400, "BadRequest", "experiment_name must be a non-empty string")
        config = model.validate_config(body.get("config", {}))

        if "host" in body:
            raw_host = body["host"]
            if not isinstance(raw_host, dict):
                raise ApiError(400, "BadRequest", "host must be an object")
            host = model.HostInfo(
                hostname=str(raw_host.get("hostname", "unknown")),
                os_name=str(raw_host.get("os_name", "unknown")),
                os_version=str(raw_host.get("os_version", "unknown")),
                runtime_version=str(raw_host.get("runtime_version", "unknown")),
                captured_at=str(raw_host.get("captured_at", self.now())),
            )
        else:
            host = model.capture_host(captured_at=self.now())

        sources = None
        if body.get("sources") is not None:
            raw_sources = body["sources"]
            ok = isinstance(raw_sources, list) and all(
                isinstance(pair, list)
                and len(pair) == 2
                and all(isinstance(part, str) for part in pair)
                for pair in raw_sources
            )
            if not ok:
                raise ApiError(400, "BadRequest", "sources must be [path, sha256] pairs")
            sources = [(pair[0], pair[1]) for pair in raw_sources]

        fingerprint = body.get("ingest_fingerprint")
        if fingerprint is not None and not isinstance(fingerprint, str):
            raise ApiError(400, "BadRequest", "ingest_fingerprint must be a string")

        with self.write_lock:
            run_id = self.store.allocate_run_id()
            now = self.now()
            record = model.RunRecord(
                run_id=run_id,
                experiment_name=name,
                config=config,
                host=host,
                status=model.RunStatus.RUNNING,
                start_time=now,
                heartbeat=now,
                ingest_fingerprint=fingerprint,
                sources=sources,
            )
            self.store.insert("runs", record.to_doc(), doc_id=run_id)
        return {"run_id": run_id}

    def log_metrics(self, run_id: int, body) -> dict:
        if not isinstance(body, list):
            raise ApiError(400, "BadRequest", "body must be a list of metric entries")
        entries = []
        for entry in body:
            if not isinstance(entry, dict):
                raise ApiError(400, "BadRequest", "each metric entry must be an object")
            name = entry.get("name")
            if not isinstance(name, str) or not name:
                raise ApiError(400, "BadRequest", "metric name must be a non-empty string")
            if not _finite_number(entry.get("step")):
                raise ApiError(400, "BadRequest", "metric step must be a finite number")
            if not _finite_number(entry.get("value")):
                raise ApiError(400, "BadRequest", "metric value must be a finite number")
            timestamp = entry.get("timestamp")
            if timestamp is not None:
                if not isinstance(timestamp, str):
                    raise ApiError(400, "BadRequest", "timestamp must be a string")
                try:
                    canonical.parse_ts(timestamp)
                except ValueError:
                    raise ApiError(400, "BadRequest", f"bad timestamp {timestamp!r}") from None
            entries.append((name, entry["step"], entry["value"], timestamp))

        with self.write_lock:
            run = self.load_run(run_id)
            self.require_running(run)
            now = self.now()

            series: dict[str, tuple[int | None, dict]] = {}
            for doc_id, doc in self.store.find("metrics", {"run_id": run_id}):
                series[doc["name"]] = (doc_id, doc)

            # Validate the whole batch before touching storage.
            last_steps = {
                name: doc["steps"][-1] if doc["steps"] else None
                for name, (_, doc) in series.items()
            }
            for name, step, _, _ in entries:
                last = last_steps.get(name)
                if last is not None and step <= last:
                    raise ApiError(
                        422,
                        "NonMonotonicStep",
                        f"{name}: step {step} not greater than {last}",
                    )
                last_steps[name] = step

            for name, step, value, timestamp in entries:
                if name in series:
                    doc_id, doc = series[name]
                else:
                    doc_id, doc = None, {
                        "run_id": run_id,
                        "name": name,
                        "steps": [],
                        "values": [],
                        "timestamps": [],
                    }
                doc["steps"].append(step)
                doc["values"].append(value)
                doc["timestamps"].append(timestamp or now)
                series[name] = (doc_id, doc)

            for name, (doc_id, doc) in series.items():
                if doc_id is None:
                    new_id = self.store.insert("metrics", doc)
                    series[name] = (new_id, doc)
                else:
                    self.store.update("metrics", doc_id, doc)

            metric_names = list(run["metric_names"])
            for name, _, _, _ in entries:
                if name not in metric_names:
                    metric_names.append(name)
            run["metric_names"] = metric_names
            run["heartbeat"] = now
            self.store.update("runs", run_id, run)
        return {"accepted": len(entries)}

    def add_artifact(self, run_id: int, name: str, media_type: str, data: bytes) -> dict:
        _check_artifact_name(name)
        with self.write_lock:
            run = self.load_run(run_id)
            self.require_running(run)
            if any(a["name"] == name for a in run["artifacts"]):
                raise ApiError(409, "DuplicateArtifact", f"artifact {name!r} already attached")

            size = len(data)
            content_hash = hashlib.sha256(data).hexdigest()
            now = self.now()
            if size > self.config.large_file_threshold_bytes:
                uid = self.blobs.put(
                    data,
                    run_id=run_id,
                    experiment_name=run["experiment"]["name"],
                    config_snapshot=run["config"],
                    original_filename=name,
                    created_at=now,
                )
                ref = model.ArtifactRef(
                    name=name,
                    kind="BLOB",
                    size_bytes=size,
                    content_hash=content_hash,
                    media_type=media_type,
                    blob_uid=uid,
                )
            else:
                encoded = base64.b64encode(data).decode("ascii")
                entry = {"name": name, "media_type": media_type, "data_b64": encoded}
                try:
                    files_doc = self.store.get("files", run_id)
                    files_doc["inline"].append(entry)
                    self.store.update("files", run_id, files_doc)
                except docstore.NotFound:
                    self.store.insert(
                        "files", {"run_id": run_id, "inline": [entry]}, doc_id=run_id
                    )
                ref = model.ArtifactRef(
                    name=name,
                    kind="INLINE",
                    size_bytes=size,
                    content_hash=content_hash,
                    media_type=media_type,
                )

            run["artifacts"].append(ref.to_doc())
            run["heartbeat"] = now
            self.store.update("runs", run_id, run)
        return ref.to_doc()

    def finish_run(self, run_id: int, body: dict) -> dict:
        event = body.get("event")
        if event not in ("complete", "fail", "interrupt"):
            raise ApiError(400, "BadRequest", "event must be complete|fail|interrupt")
        captured_out = body.get("captured_out", "")
        if not isinstance(captured_out, str):
            raise ApiError(400, "BadRequest", "captured_out must be a string")

        with self.write_lock:
            run = self.load_run(run_id)
            try:
                status = model.transition(model.RunStatus(run["status"]), event)
            except model.IllegalTransition as exc:
                raise ApiError(409, "IllegalTransition", str(exc)) from None

            cap = self.config.captured_out_cap_bytes
            encoded = captured_out.encode("utf-8")
            if len(encoded) > cap:
                captured_out = (
                    encoded[:cap].decode("utf-8", errors="ignore") + TRUNCATION_MARKER
                )

            run["status"] = status.value
            run["stop_time"] = self.now()
            if "result" in body:
                run["result"] = model.validate_tree(body["result"])
            run["captured_out"] = captured_out
            self.store.update("runs", run_id, run)
        return self.decorate(run)

    def heartbeat(self, run_id: int) -> dict:
        with self.write_lock:
            run = self.load_run(run_id)
            self.require_running(run)
            run["heartbeat"] = self.now()
            self.store.update("runs", run_id, run)
        return {"heartbeat": run["heartbeat"]}

    def query_runs(self, params) -> dict:
        filt = {}
        if params.get("filter"):
            try:
                filt = json.loads(params["filter"])
            except ValueError:
                raise ApiError(400, "InvalidFilter", "filter is not valid JSON") from None
        sort = []
        if params.get("sort"):
            for part in params["sort"].split(","):
                path, _, direction = part.partition(":")
                direction = direction or "asc"
                if not path or direction not in _SORT_DIRECTIONS:
                    raise ApiError(400, "BadRequest", f"bad sort term {part!r}")
                sort.append((path, direction))
        try:
            skip = int(params.get("skip", 0))
            limit = int(params.get("limit", docstore.MAX_QUERY_LIMIT))
        except ValueError:
            raise ApiError(400, "BadRequest", "skip and limit must be integers") from None
        total, docs = self.store.query("runs", filt, sort, skip, limit)
        return {"total": total, "runs": [self.decorate(doc) for doc in docs]}

    def get_metric(self, run_id: int, name: str) -> dict:
        self.load_run(run_id)
        found = self.store.find("metrics", {"run_id": run_id, "name": name})
        if not found:
            raise ApiError(404, "NotFound", f"run {run_id} has no metric {name!r}")
        return found[0][1]

    def download_artifact(self, run_id: int, name: str) -> tuple[bytes, str]:
        run = self.load_run(run_id)
        ref = next((a for a in run["artifacts"] if a["name"] == name), None)
        if ref is None:
            raise ApiError(404, "NotFound", f"run {run_id} has no artifact {name!r}")
        if ref["kind"] == "BLOB":
            data, _ = self.blobs.get(ref["blob_uid"], verify=True)
            return data, ref["media_type"]
        files_doc = self.store.get("files", run_id)
        entry = next(e for e in files_doc["inline"] if e["name"] == name)
        return base64.b64decode(entry["data_b64"]), ref["media_type"]

    def download_blob(self, uid: str) -> bytes:
        if len(uid) != 64 or any(c not in "0123456789abcdef" for c in uid):
            raise ApiError(400, "BadRequest", "blob uid must be 64 hex characters")
        data, _ = self.blobs.get(uid, verify=True)
        return data

    def list_experiments(self) -> list[dict]:
        counts: dict[str, int] = {}
        for _, doc in self.store.find("runs"):
            name = doc["experiment"]["name"]
            counts[name] = counts.get(name, 0) + 1
        return [
            {"name": name, "run_count": counts[name]} for name in sorted(counts)
        ]

    def annotate(self, run_id: int, body: dict) -> dict:
        self.load_run(run_id)
        author = body.get("author")
        if not isinstance(author, str) or not author:
            raise ApiError(400, "BadRequest", "author must be a non-empty string")
        tags = body.get("tags", [])
        if not isinstance(tags, list) or not all(isinstance(t, str) for t in tags):
            raise ApiError(400, "BadRequest", "tags must be a list of strings")
        note = body.get("note", "")
        if not isinstance(note, str):
            raise ApiError(400, "BadRequest", "note must be a string")
        with self.write_lock:
            annotation_id = self.store.allocate_counter("annotation_id")
            record = model.Annotation(
                annotation_id=annotation_id,
                run_id=run_id,
                author=author,
                created_at=self.now(),
                tags=tags,
                note=note,
            )
            self.store.insert("annotations", record.to_doc(), doc_id=annotation_id)
        return record.to_doc()

    def list_annotations(self, run_id: int) -> list[dict]:
        self.load_run(run_id)
        return [doc for _, doc in self.store.find("annotations", {"run_id": run_id})]


def create_app(config: ServiceConfig) -> FastAPI:
    service = RunService(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        yield
        service.close()

    app = FastAPI(openapi_url=None, docs_url=None, redoc_url=None, lifespan=lifespan)
    app.state.service = service

    @app.exception_handler(ApiError)
    async def on_api_error(request, exc: ApiError):
        return _error_response(exc.status, exc.code, exc.message)

    @app.exception_handler(model.ConfigError)
    async def on_config_error(request, exc: model.ConfigError):
        return _error_response(400, type(exc).__name__, str(exc))

    @app.exception_handler(docstore.NotFound)
    async def on_store_not_found(request, exc):
        return _error_response(404, "NotFound", str(exc))

    @app.exception_handler(docstore.ImmutableRecord)
    async def on_immutable(request, exc):
        return _error_response(409, "ImmutableRecord", str(exc))

    @app.exception_handler(docstore.InvalidFilter)
    async def on_invalid_filter(request, exc):
        return _error_response(400, "InvalidFilter", str(exc))

    @app.exception_handler(docstore.LimitExceeded)
    async def on_limit(request, exc):
        return _error_response(400, "LimitExceeded", str(exc))

    @app.exception_handler(docstore.StorageFull)
    async def on_store_full(request, exc):
        return _error_response(507, "StorageFull", str(exc))

    @app.exception_handler(blobstore.StorageFull)
    async def on_blob_full(request, exc):
        return _error_response(507, "StorageFull", str(exc))

    @app.exception_handler(blobstore.NotFound)
    async def on_blob_not_found(request, exc):
        return _error_response(404, "NotFound", str(exc))

    @app.exception_handler(blobstore.HashMismatch)
    async def on_hash_mismatch(request, exc):
        return _error_response(500, "HashMismatch", str(exc))

    @app.middleware("http")
    async def check_auth(request: Request, call_next):
        token = service.config.auth_token
        if token and request.url.path.startswith("/api/"):
            supplied = request.headers.get("authorization", "")
            expected = f"Bearer {token}"
            if not hmac.compare_digest(supplied.encode(), expected.encode()):
                return _error_response(401, "Unauthorized", "missing or bad bearer token")
        return await call_next(request)

    @app.post("/api/runs")
    async def create_run(request: Request):
        body = _require_map(await _read_json(request))
        return _json_response(service.create_run(body))

    @app.get("/api/runs")
    async def query_runs(request: Request):
        return _json_response(service.query_runs(request.query_params))

    @app.get("/api/experiments")
    async def list_experiments():
        return _json_response(service.list_experiments())

    @app.get("/api/runs/{run_id}")
    async def get_run(run_id: int):
        return _json_response(service.decorate(service.load_run(run_id)))

    @app.post("/api/runs/{run_id}/metrics")
    async def log_metrics(run_id: int, request: Request):
        body = await _read_json(request)
        return _json_response(service.log_metrics(run_id, body))

    @app.get("/api/runs/{run_id}/metrics/{name}")
    async def get_metric(run_id: int, name: str):
        return _json_response(service.get_metric(run_id, name))

    @app.post("/api/runs/{run_id}/artifacts")
    async def add_artifact(run_id: int, request: Request):
        form = await request.form()
        upload = form.get("bytes")
        if upload is None or isinstance(upload, str):
            raise ApiError(400, "BadRequest", "multipart field 'bytes' must be a file")
        name = form.get("name") or upload.filename
        if not isinstance(name, str) or not name:
            raise ApiError(400, "BadRequest", "artifact name is required")
        media_type = form.get("media_type") or "application/octet-stream"
        data = await upload.read()
        return _json_response(service.add_artifact(run_id, name, str(media_type), data))

    @app.get("/api/runs/{run_id}/artifacts/{name:path}")
    async def download_artifact(run_id: int, name: str):
        data, media_type = service.download_artifact(run_id, name)
        return Response(content=data, media_type=media_type)

    @app.post("/api/runs/{run_id}/finish")
    async def finish_run(run_id: int, request: Request):
        body = _require_map(await _read_json(request))
        return _json_response(service.finish_run(run_id, body))

    @app.post("/api/runs/{run_id}/heartbeat")
    async def heartbeat(run_id: int):
        return _json_response(service.heartbeat(run_id))

    @app.get("/api/blobs/{uid}")
    async def download_blob(uid: str):
        return Response(
            content=service.download_blob(uid), media_type="application/octet-stream"
        )

    @app.post("/api/runs/{run_id}/annotations")
    async def annotate(run_id: int, request: Request):
        body = _require_map(await _read_json(request))
        return _json_response(service.annotate(run_id, body))

    @app.get("/api/runs/{run_id}/annotations")
    async def list_annotations(run_id: int):
        return _json_response(service.list_annotations(run_id))

    if config.static_dir:
        app.mount("/", StaticFiles(directory=config.static_dir, html=True), name="ui")

    return app


def parse_listen(address: str) -> tuple[str, int]:
    host, _, port = address.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"listen address must be host:port, got {address!r}")
    return host, int(port)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="altar-server", description="Experiment record service"
    )
    parser.add_argument("--listen", default=DEFAULT_LISTEN, help="host:port to bind")
    parser.add_argument("--data-dir", default="altar-data", help="storage directory")
    parser.add_argument(
        "--threshold-bytes",
        type=int,
        default=DEFAULT_THRESHOLD_BYTES,
        help="payloads larger than this go to blob storage",
    )
    parser.add_argument("--token", default=None, help="require this bearer token on /api/")
    parser.add_argument("--static-dir", default=None, help="serve this directory at /")
    args = parser.parse_args(argv)

    token = os.environ.get("ALTAR_TOKEN", args.token)
    config = ServiceConfig(
        listen_address=args.listen,
        data_dir=args.data_dir,
        large_file_threshold_bytes=args.threshold_bytes,
        auth_token=token,
        static_dir=args.static_dir,
    )
    host, port = parse_listen(config.listen_address)

    import uvicorn

    uvicorn.run(create_app(config), host=host, port=port, log_level="warning")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
