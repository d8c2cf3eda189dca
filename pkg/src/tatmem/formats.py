"""Binary field/trace files, PGM previews, energy CSV, JSON reports, manifests.

Field file: ``b"MTAT"``, u32 version, u32 nx, u32 ny, f64 payload (row-major,
``[iy, ix]``), u32 CRC32 of everything before it.  Trace file: ``b"MTRC"``,
u32 version, u32 nt+1, u32 n_boundary, f64 dt, f64 radius, f64 payload
(time-major), u32 CRC32.  All little-endian.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os
import struct
import zlib
from pathlib import Path

import numpy as np

from .forward import BoundaryTrace, EnergyTrace

FIELD_MAGIC = b"MTAT"
TRACE_MAGIC = b"MTRC"
VERSION = 1
_FIELD_HEAD = struct.Struct("<4sIII")
_TRACE_HEAD = struct.Struct("<4sIIIdd")
_CRC = struct.Struct("<I")
PGM_MAX = 65534  # even, so zero maps to the exact middle 32767
ENERGY_COLUMNS = ("step", "t", "E_box", "E_Omega", "E_Omega_c", "diss_damping", "diss_memory",
                  "extended_energy")


class FormatError(ValueError):
    pass


class HeaderError(FormatError):
    pass


class ChecksumError(FormatError):
    pass


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _pack(header: bytes, payload: np.ndarray) -> bytes:
    body = header + np.ascontiguousarray(payload, dtype="<f8").tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def _read_checked(path: Path, head: struct.Struct, magic: bytes, payload_count) -> tuple:
    path = Path(path)
    size = path.stat().st_size
    with path.open("rb") as fh:
        raw_head = fh.read(head.size)
        if len(raw_head) < head.size:
            raise ChecksumError(f"{path}: file truncated inside the header")
        fields = head.unpack(raw_head)
        if fields[0] != magic:
            raise HeaderError(f"{path}: bad magic {fields[0]!r}, expected {magic!r}")
        if fields[1] != VERSION:
            raise HeaderError(f"{path}: unsupported version {fields[1]}")
        count = payload_count(fields)
        expected = head.size + 8 * count + _CRC.size
        # size check happens before the payload is read
        if size < expected:
            raise ChecksumError(f"{path}: {size} bytes but the header declares {expected}; "
                                "file truncated or header dimensions wrong")
        if size > expected:
            raise HeaderError(f"{path}: {size} bytes but the header declares {expected}")
        payload = fh.read(8 * count)
        (crc,) = _CRC.unpack(fh.read(_CRC.size))
    if zlib.crc32(raw_head + payload) != crc:
        raise ChecksumError(f"{path}: checksum mismatch")
    return fields, np.frombuffer(payload, dtype="<f8").astype(float)


def write_field(path, field: np.ndarray, grid=None) -> Path:
    """Write a 2-D ``[iy, ix]`` array; `grid`, if given, must match its shape."""
    path = Path(path)
    field = np.asarray(field, dtype=float)
    if field.ndim != 2:
        raise FormatError("field must be two-dimensional")
    ny, nx = field.shape
    if grid is not None and grid.shape != field.shape:
        raise FormatError(f"field shape {field.shape} does not match grid {grid.shape}")
    _atomic_write(path, _pack(_FIELD_HEAD.pack(FIELD_MAGIC, VERSION, nx, ny), field))
    return path


def read_field(path) -> np.ndarray:
    fields, data = _read_checked(path, _FIELD_HEAD, FIELD_MAGIC, lambda f: f[2] * f[3])
    _, _, nx, ny = fields
    return data.reshape(ny, nx)


def write_trace(path, trace: BoundaryTrace) -> Path:
    path = Path(path)
    v = np.asarray(trace.values, dtype=float)
    head = _TRACE_HEAD.pack(TRACE_MAGIC, VERSION, v.shape[0], v.shape[1], trace.dt, trace.radius)
    _atomic_write(path, _pack(head, v))
    return path


def read_trace(path, kind: str = "raw") -> BoundaryTrace:
    """The file does not record the kind; callers state it (default raw)."""
    fields, data = _read_checked(path, _TRACE_HEAD, TRACE_MAGIC, lambda f: f[2] * f[3])
    _, _, n_t, n_b, dt, radius = fields
    return BoundaryTrace(data.reshape(n_t, n_b), dt, radius, kind)


def pgm_levels(field: np.ndarray, scaling: str = "symmetric") -> np.ndarray:
    """Integer gray levels in ``[0, 65534]``, image rows top to bottom."""
    f = np.asarray(field, dtype=float)
    if not np.all(np.isfinite(f)):
        raise FormatError("cannot export a field containing NaN or inf")
    half = PGM_MAX // 2
    if scaling == "symmetric":
        scale = float(np.abs(f).max())
        mag = np.zeros_like(f) if scale == 0 else np.rint(half * np.abs(f) / scale)
        levels = half + np.sign(f) * mag
    elif scaling == "minmax":
        lo, hi = float(f.min()), float(f.max())
        levels = np.full(f.shape, float(half)) if hi == lo else np.rint(PGM_MAX * (f - lo) / (hi - lo))
    else:
        raise FormatError(f"unknown scaling {scaling!r}; use symmetric or minmax")
    # row 0 of the array is the smallest y, which belongs at the bottom
    return levels[::-1].astype(np.uint16)


def export_pgm(field: np.ndarray, path, scaling: str = "symmetric", comment: str | None = None) -> Path:
    path = Path(path)
    img = pgm_levels(field, scaling)
    head = "P5\n"
    if comment:
        head += "".join(f"# {line}\n" for line in comment.splitlines())
    head += f"{img.shape[1]} {img.shape[0]}\n{PGM_MAX}\n"
    _atomic_write(path, head.encode("ascii") + img.astype(">u2").tobytes())
    return path


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise FormatError("not a binary PGM")
    w, h, maxval = (int(t) for t in tokens[1:])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(data[pos:], dtype=dtype, count=w * h).reshape(h, w)


def write_energy_csv(path, energy: EnergyTrace) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ENERGY_COLUMNS)
        for row in energy.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
    os.replace(tmp, path)
    return path


def read_energy_csv(path) -> dict:
    with Path(path).open(newline="") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != ENERGY_COLUMNS:
        raise FormatError(f"unexpected energy columns {rows[0]}")
    cols = np.array([[float(v) for v in r] for r in rows[1:]])
    return {name: cols[:, i] for i, name in enumerate(ENERGY_COLUMNS)}


def write_json(path, payload: dict, config_hash: str | None = None) -> Path:
    path = Path(path)
    body = dict(payload)
    if config_hash is not None:
        body["config_sha256"] = config_hash
    _atomic_write(path, (json.dumps(body, indent=2, sort_keys=True) + "\n").encode())
    return path


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def manifest_name(command: str) -> str:
    return f"manifest_{command.replace('-', '_')}.json"


def write_manifest(out_dir, config_hash: str, files, command: str) -> Path:
    """Provenance for every output: the config hash and each file's digest."""
    out_dir = Path(out_dir)
    entries = {Path(f).name: file_sha256(f) for f in sorted(files, key=lambda p: Path(p).name)}
    return write_json(out_dir / manifest_name(command),
                      {"command": command, "files": entries}, config_hash)
