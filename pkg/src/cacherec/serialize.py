"""Plain-text persistence for matrices, vectors, and run provenance.

Matrices use a coordinate triplet layout: a header line ``# dims K K``
followed by one ``i j value`` line per stored (nonzero) entry, 0-based
indices. Vectors are one value per line. Values are printed with 17
significant decimal digits, which round-trips IEEE doubles bit-exactly.
"""

import hashlib
import json

import numpy as np

__all__ = [
    "save_matrix",
    "load_matrix",
    "save_vector",
    "load_vector",
    "write_provenance",
    "file_sha256",
]


def _open(dest, mode):
    if hasattr(dest, "write") or hasattr(dest, "read"):
        return dest, False
    return open(dest, mode, encoding="utf-8"), True


def save_matrix(dest, matrix) -> None:
    """Write a dense matrix in triplet form, skipping exact zeros."""
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2:
        raise ValueError("save_matrix expects a 2-d array")
    fh, own = _open(dest, "w")
    try:
        fh.write(f"# dims {m.shape[0]} {m.shape[1]}\n")
        rows, cols = np.nonzero(m)
        for i, j in zip(rows, cols):
            fh.write(f"{i} {j} {m[i, j]:.17g}\n")
    finally:
        if own:
            fh.close()


def load_matrix(src) -> np.ndarray:
    """Read a triplet-format matrix back into a dense float array."""
    fh, own = _open(src, "r")
    try:
        header = fh.readline().split()
        if len(header) != 4 or header[:2] != ["#", "dims"]:
            raise ValueError("matrix file must start with '# dims K K'")
        nrow, ncol = int(header[2]), int(header[3])
        out = np.zeros((nrow, ncol))
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'i j value'")
            i, j = int(parts[0]), int(parts[1])
            if not (0 <= i < nrow and 0 <= j < ncol):
                raise ValueError(f"line {lineno}: index ({i}, {j}) out of range")
            out[i, j] = float(parts[2])
        return out
    finally:
        if own:
            fh.close()


def save_vector(dest, vector) -> None:
    """Write a vector, one 17-significant-digit value per line."""
    v = np.asarray(vector, dtype=float)
    if v.ndim != 1:
        raise ValueError("save_vector expects a 1-d array")
    fh, own = _open(dest, "w")
    try:
        for x in v:
            fh.write(f"{x:.17g}\n")
    finally:
        if own:
            fh.close()


def load_vector(src) -> np.ndarray:
    """Read a one-value-per-line vector; '#' lines and blanks skipped."""
    fh, own = _open(src, "r")
    try:
        values = []
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            values.append(float(line))
        return np.asarray(values)
    finally:
        if own:
            fh.close()


def write_provenance(path, record: dict) -> None:
    """Dump a provenance record as stable, human-diffable JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def file_sha256(path) -> str:
    """Hex SHA-256 of a file's bytes."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
