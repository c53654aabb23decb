"""File formats: PBM masks, 16-bit PGM images, k-space binaries, b-vectors, CSV, summaries."""

from __future__ import annotations

import csv
import hashlib
import math
import struct
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "write_pbm",
    "read_pbm",
    "write_pgm16",
    "read_pgm16",
    "write_kspace",
    "read_kspace",
    "write_bvecs",
    "read_bvecs",
    "write_records_csv",
    "read_csv",
    "write_summary",
    "read_summary",
    "data_hash",
    "TELEMETRY_COLUMNS",
]

KSPACE_MAGIC = b"NLSD"
KSPACE_VERSION = 1
TELEMETRY_COLUMNS = ("iter", "step_norm", "weighted_step", "data_residual", "L", "lin_error", "wall_ms")


def _io_error(path, exc) -> OSError:
    return OSError(f"{path}: {exc}")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise _io_error(path, exc) from exc


def _write_bytes(path, payload: bytes):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise _io_error(path, exc) from exc


def _netpbm_header(raw: bytes, nfields: int):
    """Parse magic and ``nfields`` integers, skipping comments; return values and body offset."""
    tokens, pos = [], 0
    while len(tokens) < nfields + 1:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    return tokens[0], [int(t) for t in tokens[1:]], pos + 1


def write_pbm(path, mask: np.ndarray):
    """Binary (P4) bitmap; set bits are selected coefficients."""
    m = np.asarray(mask, dtype=bool)
    ny, nx = m.shape
    body = np.packbits(m, axis=1).tobytes()
    _write_bytes(path, f"P4\n{nx} {ny}\n".encode() + body)


def read_pbm(path) -> np.ndarray:
    raw = _read_bytes(path)
    magic, (nx, ny), off = _netpbm_header(raw, 2)
    if magic != b"P4":
        raise ValueError(f"{path}: not a binary PBM file")
    rowbytes = (nx + 7) // 8
    bits = np.frombuffer(raw, dtype=np.uint8, count=rowbytes * ny, offset=off)
    return np.unpackbits(bits.reshape(ny, rowbytes), axis=1)[:, :nx].astype(bool)


def write_pgm16(path, img: np.ndarray, vmin: float | None = None, vmax: float | None = None):
    """16-bit binary PGM with the affine range stored in ``<path>.range``.

    Returns ``(vmin, vmax)``.
    """
    a = np.asarray(img, dtype=float)
    vmin = float(a.min()) if vmin is None else float(vmin)
    vmax = float(a.max()) if vmax is None else float(vmax)
    span = vmax - vmin
    q = np.zeros(a.shape) if span == 0 else np.clip((a - vmin) / span, 0, 1) * 65535
    ny, nx = a.shape
    body = np.rint(q).astype(">u2").tobytes()
    _write_bytes(path, f"P5\n{nx} {ny}\n65535\n".encode() + body)
    _write_bytes(str(path) + ".range", f"min={vmin!r}\nmax={vmax!r}\n".encode())
    return vmin, vmax


def read_pgm16(path) -> np.ndarray:
    """Read a PGM written by :func:`write_pgm16`, undoing the affine map via the sidecar."""
    raw = _read_bytes(path)
    magic, (nx, ny, maxval), off = _netpbm_header(raw, 3)
    if magic != b"P5" or maxval != 65535:
        raise ValueError(f"{path}: not a 16-bit binary PGM")
    q = np.frombuffer(raw, dtype=">u2", count=nx * ny, offset=off).reshape(ny, nx)
    rng = {}
    rpath = Path(str(path) + ".range")
    if rpath.exists():
        for line in rpath.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                rng[k.strip()] = float(v)
    vmin, vmax = rng.get("min", 0.0), rng.get("max", 65535.0)
    return vmin + q.astype(float) / 65535 * (vmax - vmin)


def write_kspace(path, data: np.ndarray, nx: int, ny: int):
    """``NLSD`` header (magic, version, nx, ny as little-endian uint32) + interleaved float64."""
    z = np.asarray(data, dtype=complex).ravel()
    header = KSPACE_MAGIC + struct.pack("<III", KSPACE_VERSION, nx, ny)
    body = np.column_stack([z.real, z.imag]).astype("<f8").tobytes()
    _write_bytes(path, header + body)


def read_kspace(path):
    """Returns ``(data, nx, ny)``."""
    raw = _read_bytes(path)
    if raw[:4] != KSPACE_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, nx, ny = struct.unpack("<III", raw[4:16])
    if version != KSPACE_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    pairs = np.frombuffer(raw, dtype="<f8", offset=16).reshape(-1, 2)
    return pairs[:, 0] + 1j * pairs[:, 1], nx, ny


def write_bvecs(path, b: np.ndarray):
    lines = [" ".join(repr(float(c)) for c in row) for row in np.atleast_2d(b)]
    _write_bytes(path, ("\n".join(lines) + "\n").encode())


def read_bvecs(path) -> np.ndarray:
    rows = []
    for k, line in enumerate(_read_bytes(path).decode().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{k}: expected 'bx by bz', got {line!r}")
        rows.append([float(p) for p in parts])
    return np.array(rows, dtype=float).reshape(-1, 3)


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return repr(v)
    return "" if v is None else str(v)


def write_records_csv(path, records, columns=None, comment: str | None = None):
    """One row per record (dataclass or mapping); NaN written as an empty cell."""
    rows = [asdict(r) if is_dataclass(r) else dict(r) for r in records]
    if columns is None:
        columns = (
            TELEMETRY_COLUMNS
            if rows and set(TELEMETRY_COLUMNS) <= set(rows[0])
            else tuple(rows[0]) if rows else TELEMETRY_COLUMNS
        )
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            if comment:
                for line in comment.splitlines():
                    fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(columns)
            for row in rows:
                w.writerow([_fmt(row.get(c)) for c in columns])
    except OSError as exc:
        raise _io_error(path, exc) from exc


def read_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            lines = [ln for ln in fh if not ln.startswith("#")]
    except OSError as exc:
        raise _io_error(path, exc) from exc
    return list(csv.DictReader(lines))


def write_summary(path, items: dict):
    """``key: value`` lines; infinite PSNR-like values are capped at 999."""
    out = []
    for k, v in items.items():
        if isinstance(v, float) and math.isinf(v):
            v = 999.0 if v > 0 else -999.0
        out.append(f"{k}: {_fmt(v) if not isinstance(v, float) or not math.isnan(v) else 'nan'}")
    _write_bytes(path, ("\n".join(out) + "\n").encode())


def read_summary(path) -> dict:
    out = {}
    for line in _read_bytes(path).decode().splitlines():
        if ":" in line:
            k, v = line.split(":", 1)
            out[k.strip()] = v.strip()
    return out


def data_hash(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]
