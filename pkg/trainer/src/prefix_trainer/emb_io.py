"""EMB1 embedding file I/O.

Wire format: one ASCII header line ``EMB1 <n> <dim>``, then n rows of dim
little-endian float32 values, with row ids in a sidecar JSONL manifest named
``<file-name>.ids.jsonl`` of ``{"row": i, "id": ...}`` objects.  Writes are
atomic (temp file + rename).
"""

import json
import os
from pathlib import Path

import numpy as np

MAGIC = "EMB1"


class EmbFileError(Exception):
    pass


def ids_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids.jsonl")


def write_emb(path: str | Path, ids: list[str], rows: np.ndarray) -> None:
    path = Path(path)
    rows = np.ascontiguousarray(rows, dtype="<f4")
    if rows.ndim != 2 or rows.shape[0] != len(ids):
        raise EmbFileError(f"{len(ids)} ids for array of shape {rows.shape}")
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(f"{MAGIC} {rows.shape[0]} {rows.shape[1]}\n".encode("ascii"))
        fh.write(rows.tobytes())
    os.replace(tmp, path)
    tmp_ids = path.with_name(path.name + ".ids.tmp")
    with open(tmp_ids, "w", encoding="utf-8") as fh:
        for row, id in enumerate(ids):
            fh.write(json.dumps({"row": row, "id": id}, ensure_ascii=False) + "\n")
    os.replace(tmp_ids, ids_path(path))


def read_emb(path: str | Path) -> tuple[list[str], np.ndarray]:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        magic, n_str, dim_str = header.decode("ascii").rstrip("\n").split(" ")
        n, dim = int(n_str), int(dim_str)
    except (UnicodeDecodeError, ValueError):
        raise EmbFileError(f"{path}: malformed header {header!r}") from None
    if magic != MAGIC:
        raise EmbFileError(f"{path}: bad magic {magic!r}")
    if len(payload) != n * dim * 4:
        raise EmbFileError(f"{path}: payload does not match header {n}x{dim}")
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, dim).copy()
    by_row: dict[int, str] = {}
    with open(ids_path(path), "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                by_row[int(obj["row"])] = str(obj["id"])
    if sorted(by_row) != list(range(n)):
        raise EmbFileError(f"{path}: ids manifest does not cover rows 0..{n - 1}")
    return [by_row[i] for i in range(n)], rows
