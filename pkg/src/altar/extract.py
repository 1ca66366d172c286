"""Query-and-export toolchain.

`altar-extract query` fetches runs matching a textual filter and
writes them as JSON lines or a flat CSV whose columns are the dotted
config paths, so spreadsheet columns line up with query paths.
`altar-extract bundle` exports runs, their metric series, artifacts,
and annotations as plain files plus a checksummed manifest, and
`altar-extract verify` re-hashes a bundle to prove nothing changed.

Filters that the server cannot evaluate (`or`, `not`) are applied
client-side over a full fetch; results are identical either way.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
from pathlib import Path

import requests

from . import canonical, filterlang, model

DEFAULT_SERVER = "http://127.0.0.1:8674"
PAGE_SIZE = 1000

FIXED_COLUMNS = ("run_id", "experiment_name", "status", "start_time", "result")


class ExtractError(Exception):
    pass


class ServerUnreachable(ExtractError):
    pass


class IoFailure(ExtractError):
    pass


class ChecksumMismatch(ExtractError):
    pass


class _Client:
    def __init__(self, server_url: str, token: str | None):
        self.base = server_url.rstrip("/")
        self.session = requests.Session()
        if token:
            self.session.headers["Authorization"] = f"Bearer {token}"

    def get_json(self, path: str, params=None):
        try:
            response = self.session.get(f"{self.base}{path}", params=params, timeout=60)
        except requests.RequestException as exc:
            raise ServerUnreachable(f"{self.base}: {exc}") from exc
        if response.status_code >= 300:
            raise ExtractError(f"GET {path} -> {response.status_code}: {response.text}")
        return response.json()

    def get_bytes(self, path: str) -> bytes:
        try:
            response = self.session.get(f"{self.base}{path}", timeout=300)
        except requests.RequestException as exc:
            raise ServerUnreachable(f"{self.base}: {exc}") from exc
        if response.status_code >= 300:
            raise ExtractError(f"GET {path} -> {response.status_code}")
        return response.content


def fetch_runs(client: _Client, filter_text: str) -> list[dict]:
    """Fetch all runs matching the filter, paging through the API.

    Whitespace-only filter text selects every run. Compilable filters
    run on the server; the rest fetch everything and filter here.
    """
    residual = None
    params: dict[str, str] = {}
    if filter_text.strip():
        ast = filterlang.parse(filter_text)
        compiled = filterlang.compile_filter(ast)
        if isinstance(compiled, filterlang.ResidualPredicate):
            residual = compiled
        else:
            params["filter"] = json.dumps(compiled)

    runs: list[dict] = []
    skip = 0
    while True:
        page = client.get_json(
            "/api/runs", params={**params, "skip": str(skip), "limit": str(PAGE_SIZE)}
        )
        runs.extend(page["runs"])
        skip += len(page["runs"])
        if skip >= page["total"] or not page["runs"]:
            break
    if residual is not None:
        runs = [doc for doc in runs if residual(doc)]
    return runs


# ---------------------------------------------------------------------------
# Tabular export


def _csv_cell(value) -> str:
    if isinstance(value, str):
        return value
    return canonical.dumps(value)


def runs_to_csv_rows(runs: list[dict]) -> tuple[list[str], list[list[str]]]:
    """Flatten runs to (header, rows); columns are the union of
    `config.<path>` across runs plus the fixed identity columns,
    sorted; absent values render empty."""
    config_paths: set[str] = set()
    flattened: list[dict] = []
    for doc in runs:
        paths = {
            f"config.{path}": value
            for path, value in model.flatten_paths(doc.get("config", {}))
        }
        config_paths.update(paths)
        flattened.append(paths)

    header = sorted(config_paths | set(FIXED_COLUMNS))
    rows = []
    for doc, paths in zip(runs, flattened):
        row = []
        for column in header:
            if column == "experiment_name":
                row.append(_csv_cell(doc["experiment"]["name"]))
            elif column in FIXED_COLUMNS:
                value = doc.get(column)
                row.append("" if value is None else _csv_cell(value))
            elif column in paths:
                row.append(_csv_cell(paths[column]))
            else:
                row.append("")
        rows.append(row)
    return header, rows


def export_runs(runs: list[dict], fmt: str, out) -> int:
    """Write runs to a stream as jsonl or csv; returns the run count."""
    if fmt == "jsonl":
        for doc in runs:
            out.write(canonical.dumps(doc) + "\n")
    elif fmt == "csv":
        header, rows = runs_to_csv_rows(runs)
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    else:
        raise ExtractError(f"unknown format {fmt!r}")
    return len(runs)


# ---------------------------------------------------------------------------
# Bundles


def _safe_relpath(name: str) -> str:
    parts = name.split("/")
    if name.startswith("/") or "\\" in name or any(p in ("", ".", "..") for p in parts):
        raise IoFailure(f"unsafe path in bundle: {name!r}")
    return name


def _write_file(root: Path, rel: str, data: bytes, listing: list[dict]) -> None:
    path = root / _safe_relpath(rel)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)
    listing.append(
        {
            "path": rel,
            "size_bytes": len(data),
            "sha256": hashlib.sha256(data).hexdigest(),
        }
    )


def export_bundle(client: _Client, filter_text: str, out_dir) -> Path:
    """Export matching runs as a publication bundle and verify it.

    Layout: runs.jsonl, metrics/<run_id>/<name>.csv,
    artifacts/<run_id>/<name>, annotations.jsonl, manifest.json. The
    manifest lists every file with size and SHA-256; the bundle is
    re-verified from disk before this returns.
    """
    root = Path(out_dir)
    if root.exists() and any(root.iterdir()):
        raise IoFailure(f"{root} exists and is not empty")
    root.mkdir(parents=True, exist_ok=True)

    runs = fetch_runs(client, filter_text)
    listing: list[dict] = []

    runs_payload = "".join(canonical.dumps(doc) + "\n" for doc in runs)
    _write_file(root, "runs.jsonl", runs_payload.encode("utf-8"), listing)

    annotations: list[dict] = []
    for doc in runs:
        run_id = doc["run_id"]
        for name in doc.get("metric_names", []):
            series = client.get_json(f"/api/runs/{run_id}/metrics/{name}")
            buffer = ["step,value,timestamp"]
            for step, value, timestamp in zip(
                series["steps"], series["values"], series["timestamps"]
            ):
                buffer.append(
                    f"{canonical.dumps(step)},{canonical.dumps(value)},{timestamp}"
                )
            payload = ("\n".join(buffer) + "\n").encode("utf-8")
            _write_file(root, f"metrics/{run_id}/{name}.csv", payload, listing)
        for ref in doc.get("artifacts", []):
            data = client.get_bytes(f"/api/runs/{run_id}/artifacts/{ref['name']}")
            _write_file(root, f"artifacts/{run_id}/{ref['name']}", data, listing)
        annotations.extend(client.get_json(f"/api/runs/{run_id}/annotations"))

    notes_payload = "".join(canonical.dumps(a) + "\n" for a in annotations)
    _write_file(root, "annotations.jsonl", notes_payload.encode("utf-8"), listing)

    from . import __version__

    manifest = {
        "tool_version": __version__,
        "exported_at": canonical.now_ts(),
        "files": sorted(listing, key=lambda item: item["path"]),
    }
    (root / "manifest.json").write_bytes(canonical.dumps_bytes(manifest) + b"\n")

    verify_bundle(root)
    return root / "manifest.json"


def verify_bundle(bundle_dir) -> int:
    """Re-hash every file listed in manifest.json; raises
    ChecksumMismatch naming the first file that changed or vanished.
    Returns the number of files checked."""
    root = Path(bundle_dir)
    manifest_path = root / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except FileNotFoundError:
        raise ChecksumMismatch(f"{manifest_path}: missing manifest") from None
    except ValueError as exc:
        raise ChecksumMismatch(f"{manifest_path}: unreadable: {exc}") from exc

    for entry in manifest["files"]:
        rel = entry["path"]
        path = root / _safe_relpath(rel)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            raise ChecksumMismatch(f"{rel}: file missing") from None
        digest = hashlib.sha256(data).hexdigest()
        if len(data) != entry["size_bytes"] or digest != entry["sha256"]:
            raise ChecksumMismatch(f"{rel}: content changed")
    return len(manifest["files"])


# ---------------------------------------------------------------------------
# CLI


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="altar-extract", description="Query and export experiment runs"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    query = sub.add_parser("query", help="export matching runs as jsonl or csv")
    query.add_argument("filter", help="filter expression; empty selects all")
    query.add_argument("--format", choices=("jsonl", "csv"), default="jsonl")
    query.add_argument("--out", default="-", help="output file, - for stdout")
    query.add_argument("--server", default=DEFAULT_SERVER)
    query.add_argument("--token", default=None)

    bundle = sub.add_parser("bundle", help="export a checksummed bundle")
    bundle.add_argument("filter", help="filter expression; empty selects all")
    bundle.add_argument("--out", required=True, help="bundle directory")
    bundle.add_argument("--server", default=DEFAULT_SERVER)
    bundle.add_argument("--token", default=None)

    verify = sub.add_parser("verify", help="re-hash a bundle against its manifest")
    verify.add_argument("bundle_dir")

    args = parser.parse_args(argv)

    try:
        if args.command == "query":
            client = _Client(args.server, args.token)
            runs = fetch_runs(client, args.filter)
            if args.out == "-":
                count = export_runs(runs, args.format, sys.stdout)
            else:
                with open(args.out, "w", encoding="utf-8", newline="") as out:
                    count = export_runs(runs, args.format, out)
            print(f"exported {count} runs", file=sys.stderr)
            return 0
        if args.command == "bundle":
            client = _Client(args.server, args.token)
            manifest_path = export_bundle(client, args.filter, args.out)
            print(str(manifest_path))
            return 0
        checked = verify_bundle(args.bundle_dir)
        print(f"ok: {checked} files verified")
        return 0
    except filterlang.FilterSyntaxError as exc:
        print(f"syntax error: {exc}", file=sys.stderr)
        return 2
    except ChecksumMismatch as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return 3
    except ExtractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
