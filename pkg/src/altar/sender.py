"""Folder-ingestion client.

Turns an experiment folder that was saved locally into one run on the
server: `config.json` at the folder root becomes the run config, CSVs
under `metrics/` become metric series, and every regular file in the
folder is uploaded as an artifact named by its relative path (the
server routes each by size). A SHA-256 fingerprint over the folder's
(path, content-hash) pairs makes re-ingestion idempotent: a folder
that already produced a COMPLETED run is skipped.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import mimetypes
import sys
from dataclasses import dataclass, field
from pathlib import Path

import requests

from . import canonical, model

REQUEST_TIMEOUT = 60


class SenderError(Exception):
    pass


class EmptyFolder(SenderError):
    pass


class ConfigParseError(SenderError):
    pass


class MetricCsvMalformed(SenderError):
    pass


class ServerUnreachable(SenderError):
    pass


class UploadFailed(SenderError):
    pass


@dataclass
class IngestPlan:
    folder: Path
    experiment_name: str
    config: dict
    metric_files: list[str]  # relative paths under metrics/
    data_files: list[tuple[str, int]]  # everything else: (relative path, size)
    fingerprint: str
    file_hashes: list[tuple[str, str]] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "folder": str(self.folder),
            "experiment_name": self.experiment_name,
            "config": self.config,
            "metric_files": list(self.metric_files),
            "data_files": [[path, size] for path, size in self.data_files],
            "fingerprint": self.fingerprint,
            "files": [[path, digest] for path, digest in self.file_hashes],
        }


def _hash_file(path: Path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(1 << 20)
            if not chunk:
                break
            hasher.update(chunk)
    return hasher.hexdigest()


def folder_fingerprint(file_hashes: list[tuple[str, str]]) -> str:
    """SHA-256 over the sorted (relative path, content hash) pairs, so
    identical content anywhere yields an identical fingerprint."""
    entries = sorted(file_hashes)
    payload = canonical.dumps_bytes([[path, digest] for path, digest in entries])
    return hashlib.sha256(payload).hexdigest()


def scan_folder(folder, experiment_name: str) -> IngestPlan:
    """Inventory a folder into an IngestPlan; reads every regular file."""
    folder = Path(folder)
    if not folder.is_dir():
        raise EmptyFolder(f"{folder} is not a directory")

    all_files = sorted(
        p.relative_to(folder).as_posix()
        for p in folder.rglob("*")
        if p.is_file() and not p.is_symlink()
    )
    if not all_files:
        raise EmptyFolder(f"{folder} contains no files")

    config: dict = {}
    if "config.json" in all_files:
        try:
            raw = json.loads((folder / "config.json").read_text("utf-8"))
            config = model.validate_config(raw)
        except (ValueError, OSError) as exc:
            raise ConfigParseError(f"config.json: {exc}") from exc

    metric_files = [
        rel
        for rel in all_files
        if rel.startswith("metrics/") and rel.endswith(".csv") and rel.count("/") == 1
    ]
    special = set(metric_files) | {"config.json"}
    data_files = [
        (rel, (folder / rel).stat().st_size) for rel in all_files if rel not in special
    ]

    file_hashes = [(rel, _hash_file(folder / rel)) for rel in all_files]
    return IngestPlan(
        folder=folder,
        experiment_name=experiment_name,
        config=config,
        metric_files=metric_files,
        data_files=data_files,
        fingerprint=folder_fingerprint(file_hashes),
        file_hashes=file_hashes,
    )


def parse_metric_csv(path: Path) -> list[dict]:
    """Read a `step,value[,timestamp]` CSV into metric entries.

    The header row is mandatory, steps must be strictly increasing
    numbers, and values must be numbers.
    """
    name = path.stem
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = [cell.strip() for cell in next(reader)]
        except StopIteration:
            raise MetricCsvMalformed(f"{path.name}: empty file") from None
        if header not in (["step", "value"], ["step", "value", "timestamp"]):
            raise MetricCsvMalformed(
                f"{path.name}: header must be step,value[,timestamp], got {header}"
            )
        has_timestamp = len(header) == 3

        entries: list[dict] = []
        last_step: float | None = None
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise MetricCsvMalformed(f"{path.name}:{line_no}: wrong column count")
            try:
                step = float(row[0])
                value = float(row[1])
            except ValueError:
                raise MetricCsvMalformed(
                    f"{path.name}:{line_no}: step and value must be numbers"
                ) from None
            if step != step or step in (float("inf"), float("-inf")):
                raise MetricCsvMalformed(f"{path.name}:{line_no}: non-finite step")
            if value != value or value in (float("inf"), float("-inf")):
                raise MetricCsvMalformed(f"{path.name}:{line_no}: non-finite value")
            if last_step is not None and step <= last_step:
                raise MetricCsvMalformed(
                    f"{path.name}:{line_no}: step {row[0]} not greater than {last_step}"
                )
            last_step = step
            entry = {"name": name, "step": step, "value": value}
            if has_timestamp and row[2].strip():
                entry["timestamp"] = row[2].strip()
            entries.append(entry)
    return entries


class _Client:
    def __init__(self, server_url: str, token: str | None):
        self.base = server_url.rstrip("/")
        self.session = requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def request(self, method: str, path: str, **kwargs):
        try:
            response = self.session.request(
                method, f"{self.base}{path}", timeout=REQUEST_TIMEOUT, **kwargs
            )
        except requests.RequestException as exc:
            raise ServerUnreachable(f"{self.base}: {exc}") from exc
        return response

    def checked(self, method: str, path: str, **kwargs):
        response = self.request(method, path, **kwargs)
        if response.status_code >= 300:
            raise UploadFailed(f"{method} {path} -> {response.status_code}: {response.text}")
        return response.json()


def ingest(plan: IngestPlan, server_url: str, token: str | None = None) -> dict:
    """Upload a scanned folder as one run.

    Returns {"run_id": n} on upload or {"skipped": existing_run_id}
    when a COMPLETED run with this folder fingerprint already exists.
    Any failure after run creation finishes the run as FAILED so
    nothing is left RUNNING.
    """
    client = _Client(server_url, token)

    found = client.checked(
        "GET",
        "/api/runs",
        params={
            "filter": json.dumps(
                {"ingest_fingerprint": plan.fingerprint, "status": "COMPLETED"}
            ),
            "limit": "1",
        },
    )
    if found["total"] > 0:
        return {"skipped": found["runs"][0]["run_id"]}

    # Parse every CSV before creating anything, so a malformed folder
    # leaves no run behind at all.
    metric_batches = [
        parse_metric_csv(plan.folder / rel) for rel in plan.metric_files
    ]

    created = client.checked(
        "POST",
        "/api/runs",
        data=canonical.dumps(
            {
                "experiment_name": plan.experiment_name,
                "config": plan.config,
                "ingest_fingerprint": plan.fingerprint,
            }
        ).encode("utf-8"),
        headers={"Content-Type": "application/json"},
    )
    run_id = created["run_id"]

    try:
        for entries in metric_batches:
            if entries:
                client.checked(
                    "POST",
                    f"/api/runs/{run_id}/metrics",
                    data=canonical.dumps(entries).encode("utf-8"),
                    headers={"Content-Type": "application/json"},
                )
        for rel, _ in plan.file_hashes:
            data = (plan.folder / rel).read_bytes()
            media_type = mimetypes.guess_type(rel)[0] or "application/octet-stream"
            client.checked(
                "POST",
                f"/api/runs/{run_id}/artifacts",
                data={"name": rel, "media_type": media_type},
                files={"bytes": (rel, data, media_type)},
            )
        client.checked(
            "POST",
            f"/api/runs/{run_id}/finish",
            data=canonical.dumps({"event": "complete"}).encode("utf-8"),
            headers={"Content-Type": "application/json"},
        )
    except Exception as exc:
        # Whatever went wrong, do not leave the run RUNNING.
        note = f"ingest of {plan.folder} failed: {exc}"
        try:
            client.request(
                "POST",
                f"/api/runs/{run_id}/finish",
                data=canonical.dumps(
                    {"event": "fail", "captured_out": note}
                ).encode("utf-8"),
                headers={"Content-Type": "application/json"},
            )
        except SenderError:
            pass
        if isinstance(exc, SenderError):
            raise
        raise UploadFailed(note) from exc
    return {"run_id": run_id}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="altar-send", description="Upload an experiment folder as a run"
    )
    parser.add_argument("folder", help="experiment folder to ingest")
    parser.add_argument("--name", required=True, help="experiment name")
    parser.add_argument("--server", required=True, help="server base URL")
    parser.add_argument("--token", default=None, help="bearer token")
    parser.add_argument(
        "--dry-run", action="store_true", help="print the ingest plan and exit"
    )
    args = parser.parse_args(argv)

    try:
        plan = scan_folder(args.folder, args.name)
        if args.dry_run:
            print(canonical.dumps(plan.to_doc()))
            return 0
        result = ingest(plan, args.server, args.token)
    except SenderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(canonical.dumps(result))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
