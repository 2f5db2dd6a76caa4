"""Bit-exact embedding file format.

Layout: one ASCII header line ``EMB1 <n> <dim>``, then n rows of dim
little-endian 32-bit floats, raw.  Row ids live in a sidecar JSONL manifest
named ``<embedding-file-name>.ids.jsonl`` with one ``{"row": i, "id": ...}``
object per row.
"""

import json
from dataclasses import dataclass
from pathlib import Path
import numpy as np

MAGIC = "EMB1"


class EmbeddingFormatError(Exception):
    """Corrupted or inconsistent embedding file."""


@dataclass
class EmbeddingMatrix:
    ids: list[str]
    rows: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2:
            raise EmbeddingFormatError("rows must be a 2-d matrix")
        if len(self.ids) != self.rows.shape[0]:
            raise EmbeddingFormatError(
                f"{len(self.ids)} ids for {self.rows.shape[0]} rows"
            )
        if len(set(self.ids)) != len(self.ids):
            raise EmbeddingFormatError("duplicate ids")
        if not np.isfinite(self.rows).all():
            raise EmbeddingFormatError("non-finite embedding values")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, id: str) -> np.ndarray:
        return self.rows[self.ids.index(id)]

    def unit_normalized(self) -> "EmbeddingMatrix":
        norms = np.linalg.norm(self.rows, axis=1, keepdims=True)
        if (norms == 0).any():
            raise EmbeddingFormatError("zero-norm row cannot be normalized")
        return EmbeddingMatrix(list(self.ids), (self.rows / norms).astype(np.float32))


def ids_manifest_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".ids.jsonl")


def write_embeddings(path: str | Path, matrix: EmbeddingMatrix) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC} {len(matrix)} {matrix.dim}\n".encode("ascii"))
        fh.write(np.ascontiguousarray(matrix.rows, dtype="<f4").tobytes())
    with open(ids_manifest_path(path), "w", encoding="utf-8") as fh:
        for row, id in enumerate(matrix.ids):
            fh.write(json.dumps({"row": row, "id": id}, ensure_ascii=False) + "\n")


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        header = fh.readline()
        payload = fh.read()
    try:
        text = header.decode("ascii").rstrip("\n")
        magic, n_str, dim_str = text.split(" ")
        n, dim = int(n_str), int(dim_str)
    except (UnicodeDecodeError, ValueError):
        raise EmbeddingFormatError(f"{path}: malformed header {header!r}") from None
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}")
    if n < 0 or dim <= 0:
        raise EmbeddingFormatError(f"{path}: invalid dimensions {n}x{dim}")
    expected = n * dim * 4
    if len(payload) != expected:
        raise EmbeddingFormatError(
            f"{path}: payload is {len(payload)} bytes, header implies {expected}"
        )
    rows = np.frombuffer(payload, dtype="<f4").reshape(n, dim)

    manifest = ids_manifest_path(path)
    if not manifest.exists():
        raise EmbeddingFormatError(f"missing ids manifest {manifest}")
    ids: dict[int, str] = {}
    with open(manifest, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            ids[int(obj["row"])] = str(obj["id"])
    if sorted(ids) != list(range(n)):
        raise EmbeddingFormatError(
            f"{manifest}: ids do not cover rows 0..{n - 1} exactly"
        )
    return EmbeddingMatrix([ids[i] for i in range(n)], rows.copy())
