"""On-disk formats: the binary ``W`` container and small CSV helpers.

Binary layout (little endian)::

    magic   4 bytes  b"BHNK"
    version uint32   1
    M, L, N uint32 x 3
    seed    uint64
    data    float64 pairs (re, im), row-major over the ML x N matrix
"""
from __future__ import annotations

import csv
import io
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"BHNK"
VERSION = 1
HEADER = struct.Struct("<4sIIIIQ")


def encode_matrix(W: np.ndarray, M: int, L: int, N: int, seed: int) -> bytes:
    W = np.asarray(W, dtype=complex)
    if W.shape != (M * L, N):
        raise ValueError(f"matrix shape {W.shape} does not match M*L x N = {(M * L, N)}")
    body = np.ascontiguousarray(W).view(np.float64).astype("<f8").tobytes()
    return HEADER.pack(MAGIC, VERSION, M, L, N, int(seed) & 0xFFFFFFFFFFFFFFFF) + body


def decode_matrix(data: bytes):
    """Return ``(W, M, L, N, seed)``."""
    if len(data) < HEADER.size:
        raise ValueError("truncated container header")
    magic, version, M, L, N, seed = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ValueError(f"unsupported container version {version}")
    expected = HEADER.size + 16 * M * L * N
    if len(data) != expected:
        raise ValueError(f"container has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=HEADER.size)
    W = flat.astype(np.float64).view(complex).reshape(M * L, N)
    return W, M, L, N, seed


def read_matrix(path):
    return decode_matrix(Path(path).read_bytes())


def atomic_write(path, payload) -> None:
    """Write bytes or text to ``path`` through a temporary file and rename."""
    path = Path(path)
    data = payload.encode() if isinstance(payload, str) else payload
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    return v


def matrix_to_csv(A: np.ndarray) -> str:
    """``row, col, re, im`` listing of every entry (0-based indices)."""
    A = np.asarray(A, dtype=complex)
    rows = ((i, j, A[i, j].real, A[i, j].imag) for i in range(A.shape[0]) for j in range(A.shape[1]))
    return csv_text(["row", "col", "re", "im"], rows)


def matrix_from_csv(text: str) -> np.ndarray:
    reader = csv.DictReader(io.StringIO(text))
    entries = [(int(r["row"]), int(r["col"]), float(r["re"]), float(r["im"])) for r in reader]
    n_rows = max(e[0] for e in entries) + 1
    n_cols = max(e[1] for e in entries) + 1
    A = np.zeros((n_rows, n_cols), dtype=complex)
    for i, j, re, im in entries:
        A[i, j] = complex(re, im)
    return A


def read_series_csv(path) -> np.ndarray:
    """Multichannel series: columns are channels, rows are time; ``re``/``im`` not split.

    Cells may be real numbers or Python-style complex literals (``1+2j``).
    A non-numeric first row is treated as a header.
    """
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if rows and not _numeric_row(rows[0]):
        rows = rows[1:]
    if not rows:
        raise ValueError(f"{path} contains no samples")
    return np.array([[complex(c.strip().replace("i", "j")) for c in r] for r in rows])


def _numeric_row(row) -> bool:
    try:
        [complex(c.strip().replace("i", "j")) for c in row]
    except ValueError:
        return False
    return True
