"""Shared plumbing: stable hashing, seeded RNG derivation, deterministic
array containers, and file provenance headers.

Everything here must be bit-reproducible across runs and platforms; no use
of Python's salted ``hash()`` or of wall-clock state.
"""

from __future__ import annotations

import hashlib
import json
import struct
from typing import Any

import numpy as np

CONTAINER_MAGIC = b"TXNLM1\n"


def stable_hash(*parts: str | int) -> int:
    """64-bit hash of the given parts, stable across runs and processes."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        token = str(part).encode("utf-8")
        h.update(struct.pack("<I", len(token)))
        h.update(token)
    return int.from_bytes(h.digest(), "little")


def derived_rng(master_seed: int, *parts: str | int) -> np.random.Generator:
    """Independent generator for a named stream under one master seed."""
    return np.random.default_rng(stable_hash(master_seed, *parts))


def split_fraction(account_id: str, salt: str) -> float:
    """Deterministic uniform-in-[0,1) value for hash-based splits."""
    return (stable_hash(salt, account_id) % (2**53)) / float(2**53)


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(obj: Any) -> str:
    """Short fingerprint of a JSON-serializable config, for provenance."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def provenance_line(cfg_hash: str, seed: int, comment: str = "#") -> str:
    """Header line embedded in text output files."""
    return f"{comment} config_hash={cfg_hash} seed={seed}\n"


def write_sidecar_meta(path: str, cfg_hash: str, seed: int, stage: str) -> None:
    """Provenance companion for files whose schema cannot carry a header."""
    meta = {"config_hash": cfg_hash, "seed": seed, "stage": stage}
    with open(path + ".meta.json", "w", encoding="utf-8") as fh:
        fh.write(canonical_json(meta) + "\n")


def save_container(path: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    """Write a deterministic binary container: JSON header + raw array bytes.

    Unlike ``np.savez`` (zip timestamps), the output is byte-identical for
    identical inputs. Arrays are stored little-endian, C-order, in the order
    of the ``arrays`` dict.
    """
    manifest = []
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        data = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.str.lstrip("<>|="),
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(data),
            }
        )
        blobs.append(data)
        offset += len(data)
    full_header = dict(header)
    full_header["arrays"] = manifest
    header_bytes = canonical_json(full_header).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CONTAINER_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for blob in blobs:
            fh.write(blob)


def load_container(path: str) -> tuple[dict, dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CONTAINER_MAGIC))
        if magic != CONTAINER_MAGIC:
            raise ValueError(f"{path}: not a txnlm container")
        (header_len,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header.pop("arrays"):
        raw = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype="<" + entry["dtype"]).reshape(entry["shape"])
        arrays[entry["name"]] = arr.copy()  # writable
    return header, arrays
