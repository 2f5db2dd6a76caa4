"""Append-only artifact store and corpus statistics.

Layout: a directory holding images.jsonl, ladders.jsonl, captions.jsonl and
a manifest.json with schema version, counts, per-file digests, and the run's
config snapshot.  Everything in the manifest derives from file content and
configuration, never wall-clock time, so identical runs produce identical
stores byte for byte.
"""

import csv
import hashlib
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .corpus import ImageRecord
from .forge import CreativeCaption
from .ladder import DEGREES, AssociationLadder

SCHEMA_VERSION = 1
FILES = ("images.jsonl", "ladders.jsonl", "captions.jsonl")


class StoreError(Exception):
    """Store directory is missing, locked, or inconsistent."""


@dataclass
class UniquenessResult:
    """Cross-image uniqueness of mined associations at one degree.

    ``average`` is None (undefined) when no word appears in at least two
    images; singleton words are excluded unless requested since their
    uniqueness is vacuously 100%.
    """

    degree: int
    average: float | None
    per_word: dict[str, float]


@dataclass
class CorpusStats:
    caption_counts: dict[str, dict[int, int]] = field(default_factory=dict)
    generated: int = 0
    admitted: int = 0
    dropped: int = 0
    images: int = 0
    ladders: int = 0
    uniqueness: dict[tuple[str, int], float | None] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "caption_counts": {
                split: {str(d): n for d, n in sorted(by_degree.items())}
                for split, by_degree in sorted(self.caption_counts.items())
            },
            "generated": self.generated,
            "admitted": self.admitted,
            "dropped": self.dropped,
            "images": self.images,
            "ladders": self.ladders,
            "uniqueness": {
                f"{split}/{degree}": value
                for (split, degree), value in sorted(self.uniqueness.items())
            },
        }


class DatasetStore:
    """Single-writer, many-reader artifact directory."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    @classmethod
    def create(cls, root: str | Path, config: dict | None = None) -> "DatasetStore":
        store = cls(root)
        store.root.mkdir(parents=True, exist_ok=True)
        for name in FILES:
            (store.root / name).touch()
        store.save_manifest(config or {})
        return store

    @classmethod
    def open(cls, root: str | Path) -> "DatasetStore":
        store = cls(root)
        if not (store.root / "manifest.json").exists():
            raise StoreError(f"{root} is not a dataset store (no manifest.json)")
        return store

    # -- paths ------------------------------------------------------------

    @property
    def images_path(self) -> Path:
        return self.root / "images.jsonl"

    @property
    def ladders_path(self) -> Path:
        return self.root / "ladders.jsonl"

    @property
    def captions_path(self) -> Path:
        return self.root / "captions.jsonl"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def reports_dir(self) -> Path:
        path = self.root / "reports"
        path.mkdir(exist_ok=True)
        return path

    # -- writes -----------------------------------------------------------

    def _append(self, path: Path, objs: Iterable[dict]) -> int:
        count = 0
        with self._lock, open(path, "a", encoding="utf-8") as fh:
            for obj in objs:
                fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
                count += 1
        return count

    def append_images(self, records: Iterable[ImageRecord]) -> int:
        return self._append(self.images_path, (r.to_json() for r in records))

    def append_ladders(self, ladders: Iterable[AssociationLadder]) -> int:
        return self._append(self.ladders_path, (l.to_json() for l in ladders))

    def append_captions(self, captions: Iterable[CreativeCaption]) -> int:
        return self._append(self.captions_path, (c.to_json() for c in captions))

    def replace_images(self, records: Sequence[ImageRecord]) -> None:
        with self._lock, open(self.images_path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")

    # -- reads ------------------------------------------------------------

    def _iter(self, path: Path) -> Iterator[dict]:
        if not path.exists():
            return
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    yield json.loads(line)

    def iter_images(self) -> Iterator[ImageRecord]:
        for obj in self._iter(self.images_path):
            yield ImageRecord.from_json(obj)

    def iter_ladders(self) -> Iterator[AssociationLadder]:
        for obj in self._iter(self.ladders_path):
            yield AssociationLadder.from_json(obj)

    def iter_captions(self) -> Iterator[CreativeCaption]:
        for obj in self._iter(self.captions_path):
            yield CreativeCaption.from_json(obj)

    # -- manifest and maintenance -----------------------------------------

    def _digest(self, path: Path) -> str:
        return hashlib.sha256(path.read_bytes()).hexdigest()

    def save_manifest(self, config: dict | None = None) -> dict:
        previous: dict = {}
        if self.manifest_path.exists():
            previous = json.loads(self.manifest_path.read_text(encoding="utf-8"))
        captions = list(self.iter_captions())
        admitted = sum(1 for c in captions if c.admitted)
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "config": config if config is not None else previous.get("config", {}),
            "counts": {
                "images": sum(1 for _ in self.iter_images()),
                "ladders": sum(1 for _ in self.iter_ladders()),
                "captions_generated": len(captions),
                "captions_admitted": admitted,
                "captions_dropped": len(captions) - admitted,
            },
            "digests": {
                name: self._digest(self.root / name)
                for name in FILES
                if (self.root / name).exists()
            },
        }
        self.manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return manifest

    def load_manifest(self) -> dict:
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def compact(self) -> dict:
        """Rewrite captions.jsonl with fatally-flagged captions dropped;
        returns the refreshed manifest (dropped counts are preserved there)."""
        captions = list(self.iter_captions())
        kept = [c for c in captions if c.admitted]
        with self._lock, open(self.captions_path, "w", encoding="utf-8") as fh:
            for caption in kept:
                fh.write(json.dumps(caption.to_json(), ensure_ascii=False) + "\n")
        manifest = self.save_manifest()
        manifest["counts"]["captions_generated"] = len(captions)
        manifest["counts"]["captions_dropped"] = len(captions) - len(kept)
        self.manifest_path.write_text(
            json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=False) + "\n",
            encoding="utf-8",
        )
        return manifest


# ---------------------------------------------------------------------------
# statistics


def uniqueness_by_degree(
    ladders: Iterable[AssociationLadder],
    degree: int,
    include_singletons: bool = False,
    count_distinct: bool = False,
) -> UniquenessResult:
    """Percentage of mined associations unique to one image, per salient word.

    For each word appearing in >= 2 images (singletons excluded by default),
    pool its association strings across images at this degree.  In occurrence
    mode an occurrence is unique iff its string appears in exactly one
    image's rung; in distinct mode each distinct string counts once.  The
    average is the unweighted mean over qualifying words, or None when no
    word qualifies.
    """
    degree = int(degree)
    # word -> image -> list of association strings at this degree
    by_word: dict[str, dict[str, list[str]]] = {}
    for ladder in ladders:
        word = ladder.element.surface
        by_word.setdefault(word, {}).setdefault(ladder.image_id, []).extend(
            ladder.associations(degree)
        )

    per_word: dict[str, float] = {}
    for word, images in by_word.items():
        if len(images) < 2 and not include_singletons:
            continue
        holders: dict[str, set[str]] = {}
        for image_id, entries in images.items():
            for entry in entries:
                holders.setdefault(entry, set()).add(image_id)
        if count_distinct:
            total = len(holders)
            unique = sum(1 for owners in holders.values() if len(owners) == 1)
        else:
            total = sum(len(entries) for entries in images.values())
            unique = sum(
                1
                for entries in images.values()
                for entry in entries
                if len(holders[entry]) == 1
            )
        per_word[word] = 100.0 * unique / total if total else 0.0

    average = sum(per_word.values()) / len(per_word) if per_word else None
    return UniquenessResult(degree, average, per_word)


def corpus_counts(store: DatasetStore) -> CorpusStats:
    """Exact caption counts by split and degree, plus generation bookkeeping.

    Conservation holds by construction: admitted + dropped = generated.
    """
    splits = {record.image_id: record.split for record in store.iter_images()}
    stats = CorpusStats(images=len(splits))
    stats.ladders = sum(1 for _ in store.iter_ladders())
    for caption in store.iter_captions():
        stats.generated += 1
        if not caption.admitted:
            stats.dropped += 1
            continue
        stats.admitted += 1
        split = splits.get(caption.image_id, "train")
        by_degree = stats.caption_counts.setdefault(split, {})
        by_degree[caption.degree] = by_degree.get(caption.degree, 0) + 1
    return stats


def uniqueness_grid(
    store: DatasetStore,
    include_singletons: bool = False,
    count_distinct: bool = False,
) -> dict[tuple[str, int], float | None]:
    """(split, degree) -> average uniqueness percentage."""
    splits = {record.image_id: record.split for record in store.iter_images()}
    ladders_by_split: dict[str, list[AssociationLadder]] = {}
    for ladder in store.iter_ladders():
        split = splits.get(ladder.image_id, "train")
        ladders_by_split.setdefault(split, []).append(ladder)
    grid: dict[tuple[str, int], float | None] = {}
    for split, ladders in sorted(ladders_by_split.items()):
        for degree in DEGREES:
            result = uniqueness_by_degree(
                ladders, int(degree), include_singletons, count_distinct
            )
            grid[(split, int(degree))] = result.average
    return grid


def write_uniqueness_csv(
    grid: dict[tuple[str, int], float | None], path: str | Path
) -> None:
    """Split x degree CSV grid of average uniqueness percentages."""
    splits = sorted({split for split, _ in grid})
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["split"] + [f"D{int(d)}" for d in DEGREES])
        for split in splits:
            row: list[str] = [split]
            for degree in DEGREES:
                value = grid.get((split, int(degree)))
                row.append("" if value is None else f"{value:.1f}")
            writer.writerow(row)


def is_undefined(value: float | None) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))
