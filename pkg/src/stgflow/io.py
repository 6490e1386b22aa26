"""Deterministic on-disk formats: trajectory binary, norm CSV, manifests.

The trajectory container is a little-endian binary file:

    bytes 0..3    magic  b"STGF"
    int32         format version (1)
    int32         dim
    int32         n_max
    int32         steps          (fields hold steps + 1 snapshots)
    int32         stop_index
    float64       dt
    complex128[]  coefficients, C order, shape (steps+1, dim, N, ..., N)

No timestamps or absolute paths are written anywhere, so rerunning the
same configuration reproduces every output byte for byte.
"""

from __future__ import annotations

import csv
import json
import struct

import numpy as np

MAGIC = b"STGF"
VERSION = 1
_HEADER = "<4s5id"


def write_trajectory(path, fields, dim, n_max, dt, stop_index):
    fields = np.ascontiguousarray(np.asarray(fields, dtype="<c16"))
    steps = fields.shape[0] - 1
    with open(path, "wb") as f:
        f.write(struct.pack(_HEADER, MAGIC, VERSION, dim, n_max, steps, int(stop_index), dt))
        f.write(fields.tobytes())


def read_trajectory(path):
    with open(path, "rb") as f:
        head = f.read(struct.calcsize(_HEADER))
        magic, version, dim, n_max, steps, stop_index, dt = struct.unpack(_HEADER, head)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a trajectory file")
        if version != VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        N = 2 * (n_max + 1)
        shape = (steps + 1, dim) + (N,) * dim
        data = np.frombuffer(f.read(), dtype="<c16").reshape(shape)
    return {
        "fields": data,
        "dim": dim,
        "n_max": n_max,
        "steps": steps,
        "stop_index": stop_index,
        "dt": dt,
    }


def write_norms_csv(path, dt, w24, stop):
    """Per-sample W^{2,4} traces; one row per (sample, step)."""
    w24 = np.asarray(w24)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["sample", "step", "time", "w24_norm", "stopped"])
        for s in range(w24.shape[0]):
            for n in range(w24.shape[1]):
                w.writerow([s, n, f"{n * dt:.12g}", f"{w24[s, n]:.17g}", int(n >= stop[s])])


def write_json(path, payload):
    with open(path, "w") as f:
        json.dump(_jsonable(payload), f, indent=2, sort_keys=True)
        f.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x
