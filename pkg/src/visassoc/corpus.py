"""Image-corpus ingestion from caption JSONL and COCO-style annotation manifests."""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

SPLITS = ("train", "validation", "test")


class CorpusError(Exception):
    """Manifest could not be loaded or violates a corpus invariant."""


class DuplicateImageIdError(CorpusError):
    def __init__(self, duplicates: Iterable[str]):
        self.duplicates = sorted(set(duplicates))
        super().__init__("duplicate image ids: " + ", ".join(self.duplicates))


@dataclass(frozen=True)
class ImageRecord:
    """One image with its short caption and, once generated, a detailed caption.

    ``alternates`` holds any reference captions beyond the first one; stages
    that fail permanently set ``skip_reason`` so later stages can skip the
    record instead of crashing.
    """

    image_id: str
    image_uri: str
    short_caption: str
    detailed_caption: str | None = None
    split: str = "train"
    alternates: tuple[str, ...] = ()
    skip_reason: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "short_caption", self.short_caption.strip())
        if not self.image_id:
            raise CorpusError("image_id must be non-empty")
        if not self.short_caption:
            raise CorpusError(f"record {self.image_id!r}: caption is empty")
        if self.split not in SPLITS:
            raise CorpusError(
                f"record {self.image_id!r}: unknown split {self.split!r}"
            )
        object.__setattr__(self, "alternates", tuple(self.alternates))

    def to_json(self) -> dict:
        obj = {
            "image_id": self.image_id,
            "image_uri": self.image_uri,
            "short_caption": self.short_caption,
            "split": self.split,
        }
        if self.detailed_caption is not None:
            obj["detailed_caption"] = self.detailed_caption
        if self.alternates:
            obj["alternates"] = list(self.alternates)
        if self.skip_reason is not None:
            obj["skip_reason"] = self.skip_reason
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ImageRecord":
        return cls(
            image_id=str(obj["image_id"]),
            image_uri=obj["image_uri"],
            short_caption=obj["short_caption"],
            detailed_caption=obj.get("detailed_caption"),
            split=obj.get("split", "train"),
            alternates=tuple(obj.get("alternates", ())),
            skip_reason=obj.get("skip_reason"),
        )


class Corpus:
    """Immutable, ordered collection of image records, unique by image_id."""

    def __init__(self, records: Iterable[ImageRecord]):
        self._records = tuple(records)
        by_id: dict[str, ImageRecord] = {}
        duplicates = []
        for record in self._records:
            if record.image_id in by_id:
                duplicates.append(record.image_id)
            else:
                by_id[record.image_id] = record
        if duplicates:
            raise DuplicateImageIdError(duplicates)
        self._by_id = by_id

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[ImageRecord]:
        return iter(self._records)

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._by_id

    def __eq__(self, other) -> bool:
        return isinstance(other, Corpus) and self._records == other._records

    def get(self, image_id: str) -> ImageRecord:
        try:
            return self._by_id[image_id]
        except KeyError:
            raise KeyError(f"no record with image_id {image_id!r}") from None

    @property
    def records(self) -> tuple[ImageRecord, ...]:
        return self._records

    def save_jsonl(self, path: str | Path) -> None:
        """Full-fidelity serialization; ``Corpus.load_jsonl`` round-trips it."""
        with open(path, "w", encoding="utf-8") as fh:
            for record in self._records:
                fh.write(json.dumps(record.to_json(), ensure_ascii=False) + "\n")

    @classmethod
    def load_jsonl(cls, path: str | Path) -> "Corpus":
        records = []
        for lineno, obj in _iter_jsonl(path):
            try:
                records.append(ImageRecord.from_json(obj))
            except KeyError as exc:
                raise CorpusError(f"{path}:{lineno}: missing key {exc}") from None
        if not records:
            raise CorpusError("empty corpus")
        return cls(records)


def _iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict]]:
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(
                    f"{path}:{lineno}:{exc.colno}: {exc.msg}"
                ) from None
            if not isinstance(obj, dict):
                raise CorpusError(f"{path}:{lineno}: expected a JSON object")
            yield lineno, obj


def _load_caption_jsonl(path: Path, default_split: str) -> Corpus:
    records = []
    for lineno, obj in _iter_jsonl(path):
        try:
            records.append(
                ImageRecord(
                    image_id=str(obj["image_id"]),
                    image_uri=obj["image_uri"],
                    short_caption=obj["caption"],
                    split=obj.get("split", default_split),
                )
            )
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing key {exc}") from None
    if not records:
        raise CorpusError("empty corpus")
    return Corpus(records)


def _load_coco_json(path: Path, default_split: str) -> Corpus:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(manifest, dict) or "images" not in manifest:
        raise CorpusError(f"{path}: not a COCO captions manifest (no images key)")

    captions: dict[str, list[str]] = {}
    for ann in manifest.get("annotations", ()):
        captions.setdefault(str(ann["image_id"]), []).append(ann["caption"])

    records = []
    seen: set[str] = set()
    duplicates = []
    for image in manifest["images"]:
        image_id = str(image["id"])
        if image_id in seen:
            duplicates.append(image_id)
            continue
        seen.add(image_id)
        refs = captions.get(image_id)
        if not refs:
            continue  # nothing to seed extraction with
        uri = image.get("coco_url") or image.get("file_name")
        if not uri:
            raise CorpusError(f"{path}: image {image_id} has no uri")
        records.append(
            ImageRecord(
                image_id=image_id,
                image_uri=uri,
                short_caption=refs[0],
                alternates=tuple(refs[1:]),
                split=default_split,
            )
        )
    if duplicates:
        raise DuplicateImageIdError(duplicates)
    if not records:
        raise CorpusError("empty corpus")
    return Corpus(records)


def load_corpus(
    manifest_path: str | Path,
    format: str,
    split: str = "train",
) -> Corpus:
    """Load a corpus manifest.

    ``caption_jsonl`` is one object per line with keys image_id, image_uri,
    caption and optionally split.  ``coco_json`` is the standard COCO captions
    layout; when an image carries several captions the first one in annotation
    order becomes the short caption and the rest are kept as alternates.
    """
    path = Path(manifest_path)
    if not path.exists():
        raise CorpusError(f"manifest not found: {path}")
    if format == "caption_jsonl":
        return _load_caption_jsonl(path, split)
    if format == "coco_json":
        return _load_coco_json(path, split)
    raise ValueError(f"unknown corpus format {format!r}")
