"""Content-addressed blob storage for large artifact payloads.

A blob's uid is the lowercase SHA-256 hex of its bytes, stored at
`objects/<uid[:2]>/<uid>` next to a sidecar `<uid>.manifest.json`.
The manifest snapshots everything needed to interpret the file without
the database: size, creation time, and one owner entry per attaching
run carrying that run's experiment name, original filename, and full
config. Writes land in `tmp/` first and are renamed into place, so a
reader never sees a partial blob and identical payloads dedup to one
object with several owners.
"""

from __future__ import annotations

import errno
import hashlib
import io
import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

from . import canonical

_CHUNK_SIZE = 1 << 20


class BlobError(Exception):
    pass


class NotFound(BlobError):
    pass


class HashMismatch(BlobError):
    pass


class StorageFull(BlobError):
    pass


class IoFailure(BlobError):
    pass


def _wrap_oserror(exc: OSError) -> BlobError:
    if exc.errno == errno.ENOSPC:
        return StorageFull(str(exc))
    return IoFailure(str(exc))


@dataclass
class BlobOwner:
    run_id: int
    experiment_name: str
    original_filename: str
    config_snapshot: dict

    def to_doc(self) -> dict:
        return {
            "run_id": self.run_id,
            "experiment_name": self.experiment_name,
            "original_filename": self.original_filename,
            "config_snapshot": self.config_snapshot,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BlobOwner":
        return cls(
            run_id=doc["run_id"],
            experiment_name=doc["experiment_name"],
            original_filename=doc["original_filename"],
            config_snapshot=doc["config_snapshot"],
        )


@dataclass
class BlobManifest:
    uid: str
    size_bytes: int
    created_at: str
    owners: list[BlobOwner] = field(default_factory=list)

    def to_doc(self) -> dict:
        return {
            "uid": self.uid,
            "size_bytes": self.size_bytes,
            "created_at": self.created_at,
            "owners": [owner.to_doc() for owner in self.owners],
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "BlobManifest":
        return cls(
            uid=doc["uid"],
            size_bytes=doc["size_bytes"],
            created_at=doc["created_at"],
            owners=[BlobOwner.from_doc(o) for o in doc["owners"]],
        )


class BlobStore:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.objects_dir = self.directory / "objects"
        self.tmp_dir = self.directory / "tmp"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.tmp_dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        # Leftover temp files are failed writes from a previous process.
        for stale in self.tmp_dir.iterdir():
            try:
                stale.unlink()
            except OSError:
                pass

    @classmethod
    def open(cls, directory) -> "BlobStore":
        return cls(directory)

    # -- paths --------------------------------------------------------------

    def blob_path(self, uid: str) -> Path:
        return self.objects_dir / uid[:2] / uid

    def _manifest_path(self, uid: str) -> Path:
        return self.objects_dir / uid[:2] / f"{uid}.manifest.json"

    # -- operations -----------------------------------------------------------

    def put(
        self,
        stream,
        *,
        run_id: int,
        experiment_name: str,
        config_snapshot: dict,
        original_filename: str,
        created_at: str,
    ) -> str:
        """Stream bytes into the store and return their uid.

        The stream is hashed incrementally while spooling to tmp/, then
        renamed into place. Re-putting existing content discards the
        spooled copy and appends an owner entry to the manifest.
        """
        if isinstance(stream, (bytes, bytearray)):
            stream = io.BytesIO(bytes(stream))
        hasher = hashlib.sha256()
        size = 0
        tmp_path = self.tmp_dir / f"put.{os.getpid()}.{threading.get_ident()}.part"
        try:
            with open(tmp_path, "wb") as handle:
                while True:
                    chunk = stream.read(_CHUNK_SIZE)
                    if not chunk:
                        break
                    hasher.update(chunk)
                    size += len(chunk)
                    handle.write(chunk)
                handle.flush()
                os.fsync(handle.fileno())
            uid = hasher.hexdigest()
            owner = BlobOwner(
                run_id=run_id,
                experiment_name=experiment_name,
                original_filename=original_filename,
                config_snapshot=config_snapshot,
            )
            with self._lock:
                blob_path = self.blob_path(uid)
                blob_path.parent.mkdir(exist_ok=True)
                if blob_path.exists():
                    tmp_path.unlink()
                    manifest = self._read_manifest(uid)
                    if not any(
                        o.run_id == owner.run_id
                        and o.original_filename == owner.original_filename
                        for o in manifest.owners
                    ):
                        manifest.owners.append(owner)
                        self._write_manifest(manifest)
                else:
                    os.replace(tmp_path, blob_path)
                    manifest = BlobManifest(
                        uid=uid,
                        size_bytes=size,
                        created_at=created_at,
                        owners=[owner],
                    )
                    self._write_manifest(manifest)
                    self._sync_dir(blob_path.parent)
        except OSError as exc:
            try:
                tmp_path.unlink(missing_ok=True)
            except OSError:
                pass
            raise _wrap_oserror(exc) from exc
        return uid

    def get(self, uid: str, *, verify: bool = False) -> tuple[bytes, BlobManifest]:
        """Read a blob and its manifest; verify re-hashes the bytes."""
        try:
            data = self.blob_path(uid).read_bytes()
        except FileNotFoundError:
            raise NotFound(f"no blob {uid}") from None
        except OSError as exc:
            raise _wrap_oserror(exc) from exc
        if verify:
            actual = hashlib.sha256(data).hexdigest()
            if actual != uid:
                raise HashMismatch(f"blob {uid} hashes to {actual}")
        return data, self._read_manifest(uid)

    def exists(self, uid: str) -> bool:
        return self.blob_path(uid).exists()

    def stat(self, uid: str) -> BlobManifest:
        if not self.exists(uid):
            raise NotFound(f"no blob {uid}")
        return self._read_manifest(uid)

    def iter_uids(self) -> list[str]:
        uids = []
        for shard in sorted(self.objects_dir.iterdir()):
            if not shard.is_dir():
                continue
            for entry in sorted(shard.iterdir()):
                if entry.name.endswith(".manifest.json"):
                    continue
                uids.append(entry.name)
        return uids

    # -- manifests ------------------------------------------------------------

    def _read_manifest(self, uid: str) -> BlobManifest:
        path = self._manifest_path(uid)
        try:
            doc = json.loads(path.read_text("utf-8"))
            return BlobManifest.from_doc(doc)
        except FileNotFoundError:
            raise NotFound(f"no manifest for {uid}") from None
        except (ValueError, KeyError, TypeError) as exc:
            raise IoFailure(f"manifest for {uid} unreadable: {exc}") from exc

    def _write_manifest(self, manifest: BlobManifest) -> None:
        path = self._manifest_path(manifest.uid)
        tmp_path = self.tmp_dir / f"{manifest.uid}.{os.getpid()}.manifest.part"
        try:
            with open(tmp_path, "wb") as handle:
                handle.write(canonical.dumps_bytes(manifest.to_doc()) + b"\n")
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(tmp_path, path)
        except OSError as exc:
            raise _wrap_oserror(exc) from exc

    @staticmethod
    def _sync_dir(path: Path) -> None:
        fd = os.open(path, os.O_RDONLY)
        try:
            os.fsync(fd)
        finally:
            os.close(fd)


def scan_integrity(blob_store: BlobStore, doc_store) -> dict:
    """Cross-check blobs against run records.

    Returns {"orphan_blobs": [...], "dangling_refs": [...], "corrupt":
    [...]}: blobs no live run references, run references to missing
    blobs (as "run_id:uid"), and blobs whose bytes no longer match
    their uid. Report-only; nothing is repaired.
    """
    referenced: dict[str, list[int]] = {}
    _, run_docs = doc_store.query("runs")
    for doc in run_docs:
        for artifact in doc.get("artifacts", []):
            if artifact.get("kind") == "BLOB" and artifact.get("blob_uid"):
                referenced.setdefault(artifact["blob_uid"], []).append(doc["run_id"])

    stored = set(blob_store.iter_uids())
    orphan_blobs = sorted(stored - set(referenced))
    dangling_refs = sorted(
        f"{run_id}:{uid}"
        for uid, run_ids in referenced.items()
        if uid not in stored
        for run_id in run_ids
    )
    corrupt = []
    for uid in sorted(stored):
        try:
            blob_store.get(uid, verify=True)
        except HashMismatch:
            corrupt.append(uid)
        except NotFound:
            pass
    return {
        "orphan_blobs": orphan_blobs,
        "dangling_refs": dangling_refs,
        "corrupt": corrupt,
    }
