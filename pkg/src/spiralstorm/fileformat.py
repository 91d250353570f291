"""Single-file dataset container and run manifests.

A dataset file is::

    b"SSTORM\\x00\\x01"                 8-byte magic (format tag + version)
    uint64 little-endian                header length in bytes
    header                              UTF-8 JSON, sorted keys
    payload                             raw little-endian arrays, back to back

The header lists every array with its dtype, shape, byte offset and length,
plus the dataset kind, free-form attributes and provenance. A SHA-256 of the
payload is stored in the header and checked on read, so a round trip is
bit-exact or fails loudly.
"""
from __future__ import annotations

import hashlib
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MAGIC",
    "FORMAT_VERSION",
    "KINDS",
    "DatasetFile",
    "FormatError",
    "RunManifest",
    "file_digest",
    "config_hash",
]

MAGIC = b"SSTORM\x00\x01"
FORMAT_VERSION = 1
KINDS = ("images", "kspace", "trajectory", "laplacian")
_DTYPES = {"f8": "<f8", "c16": "<c16", "i8": "<i8", "b1": "|b1"}


class FormatError(ValueError):
    pass


def _canonical_dtype(a: np.ndarray) -> str:
    kind = a.dtype.kind
    if kind == "c":
        return "c16"
    if kind == "f":
        return "f8"
    if kind in "iu":
        return "i8"
    if kind == "b":
        return "b1"
    raise FormatError(f"unsupported array dtype {a.dtype}")


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def config_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON form of a (nested) config mapping."""
    text = json.dumps(_jsonable(config), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class DatasetFile:
    """Named arrays of one dataset kind plus attributes and provenance.

    Arrays are stored as float64, complex128 (pairs of float64), int64 or
    bool, all little-endian; other numeric dtypes are widened on write.
    """

    kind: str
    arrays: dict
    attrs: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise FormatError(f"unknown dataset kind {self.kind!r}; expected one of {KINDS}")

    def _encoded(self):
        entries, blobs, offset = [], [], 0
        for name in sorted(self.arrays):
            a = np.asarray(self.arrays[name])
            code = _canonical_dtype(a)
            raw = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
            entries.append({"name": name, "dtype": code, "shape": list(a.shape),
                            "offset": offset, "nbytes": len(raw)})
            blobs.append(raw)
            offset += len(raw)
        return entries, b"".join(blobs)

    def payload_digest(self) -> str:
        return hashlib.sha256(self._encoded()[1]).hexdigest()

    def to_bytes(self) -> bytes:
        entries, payload = self._encoded()
        header = {
            "format": "spiralstorm-dataset",
            "version": FORMAT_VERSION,
            "kind": self.kind,
            "endianness": "little",
            "arrays": entries,
            "payload_bytes": len(payload),
            "payload_sha256": hashlib.sha256(payload).hexdigest(),
            "attrs": _jsonable(self.attrs),
            "provenance": _jsonable(self.provenance),
        }
        text = json.dumps(header, sort_keys=True, indent=1).encode()
        return MAGIC + struct.pack("<Q", len(text)) + text + payload

    def write(self, path) -> str:
        """Write atomically; returns the SHA-256 of the whole file."""
        data = self.to_bytes()
        tmp = f"{path}.tmp"
        with open(tmp, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "DatasetFile":
        if len(data) < 16 or data[:8] != MAGIC:
            raise FormatError("not a spiralstorm dataset file (bad magic)")
        (hlen,) = struct.unpack("<Q", data[8:16])
        if 16 + hlen > len(data):
            raise FormatError("truncated header")
        try:
            header = json.loads(data[16:16 + hlen].decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt header: {exc}") from None
        if header.get("version") != FORMAT_VERSION:
            raise FormatError(f"unsupported format version {header.get('version')}")
        payload = data[16 + hlen:]
        if len(payload) != header["payload_bytes"]:
            raise FormatError(f"payload has {len(payload)} bytes, header says "
                              f"{header['payload_bytes']}")
        if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
            raise FormatError("payload digest mismatch (file corrupted)")
        arrays = {}
        for e in header["arrays"]:
            dtype = np.dtype(_DTYPES[e["dtype"]])
            count = int(np.prod(e["shape"], dtype=np.int64))
            if count * dtype.itemsize != e["nbytes"]:
                raise FormatError(f"array {e['name']!r}: shape and byte length disagree")
            raw = payload[e["offset"]:e["offset"] + e["nbytes"]]
            arrays[e["name"]] = np.frombuffer(raw, dtype=dtype).reshape(e["shape"]).copy()
        return cls(header["kind"], arrays, header.get("attrs", {}),
                   header.get("provenance", {}))

    @classmethod
    def read(cls, path, kind: str | None = None) -> "DatasetFile":
        with open(path, "rb") as fh:
            ds = cls.from_bytes(fh.read())
        if kind is not None and ds.kind != kind:
            raise FormatError(f"{path}: expected a {kind!r} dataset, found {ds.kind!r}")
        return ds


@dataclass
class RunManifest:
    """JSON record of one CLI run: config, files with digests, timings, metrics."""

    command: str
    config: dict = field(default_factory=dict)
    inputs: dict = field(default_factory=dict)    # path -> sha256
    outputs: dict = field(default_factory=dict)   # path -> sha256
    timings: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = file_digest(path)

    def add_output(self, path) -> None:
        self.outputs[str(path)] = file_digest(path)

    def to_dict(self) -> dict:
        return _jsonable({"command": self.command, "config": self.config,
                          "config_hash": config_hash(self.config),
                          "inputs": self.inputs, "outputs": self.outputs,
                          "timings": self.timings, "metrics": self.metrics,
                          "extra": self.extra})

    def write(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path) as fh:
            d = json.load(fh)
        return cls(d["command"], d.get("config", {}), d.get("inputs", {}),
                   d.get("outputs", {}), d.get("timings", {}), d.get("metrics", {}),
                   d.get("extra", {}))

    def verify(self, base_dir=None) -> list:
        """Return a list of problems: missing output files or digest mismatches."""
        problems = []
        for path, digest in self.outputs.items():
            full = path if base_dir is None or os.path.isabs(path) \
                else os.path.join(base_dir, path)
            if not os.path.exists(full):
                problems.append(f"missing: {path}")
            elif file_digest(full) != digest:
                problems.append(f"digest mismatch: {path}")
        return problems
