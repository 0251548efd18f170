"""Directory-backed persistent store with an asynchronous write queue.

Layout: ``<root>/<round>/<client>.<kind>`` holds the binary blob and
``<client>.<kind>.json`` a sidecar with the key, size and metadata.

Blob format (little-endian)::

    u64 n | n x f64 weights | u64 size_bytes | u32 m | m bytes canonical JSON metadata
"""

from __future__ import annotations

import json
import logging
import os
import queue
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BlobRecord, CacheKey, Kind, MetadataRecord

log = logging.getLogger(__name__)

_SUFFIX = {k.value: k for k in Kind}


class NotFound(KeyError):
    pass


@dataclass
class StoreStats:
    puts: int = 0
    gets: int = 0
    bytes_in: int = 0
    bytes_out: int = 0


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode()


def encode_blob(blob: BlobRecord) -> bytes:
    w = blob.weights.astype("<f8", copy=False)
    meta = canonical_json(blob.meta.to_dict())
    return b"".join((
        struct.pack("<Q", w.size),
        w.tobytes(),
        struct.pack("<QI", blob.size_bytes, len(meta)),
        meta,
    ))


def decode_blob(key: CacheKey, data: bytes) -> BlobRecord:
    (n,) = struct.unpack_from("<Q", data, 0)
    off = 8
    weights = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
    off += 8 * n
    size, m = struct.unpack_from("<QI", data, off)
    off += 12
    meta = MetadataRecord.from_dict(json.loads(data[off:off + m]))
    return BlobRecord(key, weights, size, meta)


class PersistentStore:
    """Cold-data repository for every ingested blob.

    ``put`` enqueues; a single background thread writes.  ``get`` sees queued
    writes immediately, ``flush`` waits until they are on disk.
    """

    def __init__(self, root, queue_depth: int = 1024):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._root_str = str(self.root)
        self._dirs: set[str] = set()
        self.stats = StoreStats()
        self._lock = threading.Lock()
        self._pending: dict[CacheKey, BlobRecord] = {}
        self._q: queue.Queue = queue.Queue(maxsize=queue_depth)
        self._error: BaseException | None = None
        self._closed = False
        self._writer = threading.Thread(target=self._drain, name="store-writer", daemon=True)
        self._writer.start()

    def _path_str(self, key: CacheKey) -> str:
        return os.path.join(self._root_str, str(key.round), f"{key.client}.{key.kind.value}")

    def path_for(self, key: CacheKey) -> Path:
        return self.root / str(key.round) / f"{key.client}.{key.kind.value}"

    def put(self, key: CacheKey, blob: BlobRecord) -> None:
        if blob.key != key:
            raise ValueError(f"blob key {blob.key} does not match {key}")
        self._raise_pending_error()
        with self._lock:
            self._pending[key] = blob
            self.stats.puts += 1
            self.stats.bytes_in += blob.size_bytes
        self._q.put((key, blob))  # blocks when the queue is full

    def get(self, key: CacheKey) -> BlobRecord:
        with self._lock:
            blob = self._pending.get(key)
        if blob is None:
            try:
                with open(self._path_str(key), "rb") as fh:
                    data = fh.read()
            except FileNotFoundError:
                raise NotFound(key) from None
            blob = decode_blob(key, data)
        with self._lock:
            self.stats.gets += 1
            self.stats.bytes_out += blob.size_bytes
        return blob

    def contains(self, key: CacheKey) -> bool:
        with self._lock:
            if key in self._pending:
                return True
        return os.path.exists(self._path_str(key))

    def list(self, round: int) -> set[CacheKey]:
        keys = set()
        d = self.root / str(round)
        if d.is_dir():
            for name in os.listdir(d):
                client, _, suffix = name.rpartition(".")
                if suffix in _SUFFIX and client:
                    keys.add(CacheKey(client, round, _SUFFIX[suffix]))
        with self._lock:
            keys.update(k for k in self._pending if k.round == round)
        return keys

    def flush(self) -> None:
        self._q.join()
        self._raise_pending_error()

    def close(self) -> None:
        if not self._closed:
            self.flush()
            self._closed = True
            self._q.put(None)
            self._writer.join()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _raise_pending_error(self):
        if self._error is not None:
            err, self._error = self._error, None
            raise OSError(f"persistent store write failed: {err}") from err

    def _write(self, key: CacheKey, blob: BlobRecord) -> None:
        # plain os calls: this runs once per ingested blob
        path = self._path_str(key)
        d = os.path.dirname(path)
        if d not in self._dirs:
            os.makedirs(d, exist_ok=True)
            self._dirs.add(d)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(encode_blob(blob))
        os.replace(tmp, path)
        sidecar = {"key": [key.client, key.round, key.kind.value], "size_bytes": blob.size_bytes,
                   "meta": blob.meta.to_dict()}
        with open(path + ".json", "wb") as fh:
            fh.write(canonical_json(sidecar))

    def _drain(self):
        while True:
            item = self._q.get()
            if item is None:
                self._q.task_done()
                return
            key, blob = item
            try:
                self._write(key, blob)
            except OSError as e:
                # the blob stays readable from _pending; the error surfaces on the next put/flush
                log.error("write of %s failed: %s", key, e)
                self._error = e
            else:
                with self._lock:
                    if self._pending.get(key) is blob:
                        del self._pending[key]
            finally:
                self._q.task_done()
