"""Versioned binary container for window shards.

Layout: magic, format version, a JSON manifest (dimensions, counts per split,
policy hash, seed), then fixed-layout records. All scalars little-endian; all
float arrays are float64. Byte output is deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataError
from .series import MultiResWindow

MAGIC = b"MRW1"
FORMAT_VERSION = 1

_SPLIT_CODES = {"": 0, "train": 1, "validation": 2, "test": 3}
_SPLIT_NAMES = {v: k for k, v in _SPLIT_CODES.items()}


def _counts_per_split(windows: list[MultiResWindow]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for w in windows:
        key = w.split or "unassigned"
        counts[key] = counts.get(key, 0) + 1
    return counts


def write_windows(
    path: str | Path,
    windows: list[MultiResWindow],
    policy_hash: str | None = None,
    seed: int | None = None,
    extra: dict | None = None,
) -> dict:
    """Write windows to a shard file; returns the manifest that was embedded."""
    if not windows:
        raise DataError("refusing to write an empty shard")
    C = windows[0].context_len
    H = windows[0].horizon_len
    K = windows[0].resolution_ratio
    for w in windows:
        if w.context_len != C or w.horizon_len != H or w.resolution_ratio != K:
            raise DataError("all windows in a shard must share C, H, and K")

    manifest = {
        "format_version": FORMAT_VERSION,
        "context_len": C,
        "horizon_len": H,
        "resolution_ratio": K,
        "count": len(windows),
        "counts_per_split": _counts_per_split(windows),
        "policy_hash": policy_hash,
        "seed": seed,
    }
    if extra:
        manifest["extra"] = extra
    manifest_bytes = json.dumps(manifest, sort_keys=True).encode("utf-8")

    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(manifest_bytes)))
        fh.write(manifest_bytes)
        for w in windows:
            id_bytes = w.id.encode("utf-8")
            fh.write(struct.pack("<I", len(id_bytes)))
            fh.write(id_bytes)
            fh.write(
                struct.pack(
                    "<BqqqI",
                    _SPLIT_CODES.get(w.split, 0),
                    w.horizon_end_index,
                    w.first_real_index,
                    w.horizon_start_epoch,
                    w.resolution_seconds,
                )
            )
            fh.write(np.ascontiguousarray(w.coarse, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(w.fine, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(w.horizon, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(w.coarse_mask, dtype=np.uint8).tobytes())
            fh.write(np.ascontiguousarray(w.fine_mask, dtype=np.uint8).tobytes())
    return manifest


def read_windows(path: str | Path) -> tuple[list[MultiResWindow], dict]:
    """Read a shard file; returns (windows, manifest)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a window shard (bad magic)")
    version, manifest_len = struct.unpack_from("<IQ", data, 4)
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported shard version {version}")
    off = 4 + 12
    manifest = json.loads(data[off : off + manifest_len].decode("utf-8"))
    off += manifest_len

    C = manifest["context_len"]
    H = manifest["horizon_len"]
    K = manifest["resolution_ratio"]
    windows: list[MultiResWindow] = []
    for _ in range(manifest["count"]):
        (id_len,) = struct.unpack_from("<I", data, off)
        off += 4
        wid = data[off : off + id_len].decode("utf-8")
        off += id_len
        split_code, h_end, first_real, h_epoch, res_sec = struct.unpack_from("<BqqqI", data, off)
        off += struct.calcsize("<BqqqI")

        def take_f64(n: int) -> np.ndarray:
            nonlocal off
            arr = np.frombuffer(data, dtype="<f8", count=n, offset=off).astype(np.float64)
            off += 8 * n
            return arr

        def take_u8(n: int) -> np.ndarray:
            nonlocal off
            arr = np.frombuffer(data, dtype=np.uint8, count=n, offset=off).copy()
            off += n
            return arr

        windows.append(
            MultiResWindow(
                coarse=take_f64(C),
                fine=take_f64(C),
                horizon=take_f64(H),
                coarse_mask=take_u8(C),
                fine_mask=take_u8(C),
                resolution_ratio=K,
                id=wid,
                split=_SPLIT_NAMES[split_code],
                horizon_end_index=h_end,
                first_real_index=first_real,
                horizon_start_epoch=h_epoch,
                resolution_seconds=res_sec,
            )
        )
    if off != len(data):
        raise DataError(f"{path}: {len(data) - off} trailing bytes after last record")
    return windows, manifest
