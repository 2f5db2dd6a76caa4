"""Training data: creative captions from a dataset store plus precomputed
image features in EMB1 format."""

import json
import random
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .emb_io import read_emb

FATAL_FLAGS = {"missing_required_word", "generation_failed"}


@dataclass(frozen=True)
class CaptionExample:
    image_id: str
    degree: int
    text: str
    features: np.ndarray  # image feature row, not yet projected

    def __eq__(self, other):
        return (
            isinstance(other, CaptionExample)
            and self.image_id == other.image_id
            and self.degree == other.degree
            and self.text == other.text
        )


def load_examples(
    captions_path: str | Path,
    features_path: str | Path,
    degrees: tuple[int, ...] | None = None,
) -> list[CaptionExample]:
    """Admitted captions joined to their image's feature row.

    Captions carrying a fatal flag or lacking a feature row are skipped.
    """
    ids, rows = read_emb(features_path)
    by_id = {id: rows[i] for i, id in enumerate(ids)}
    examples: list[CaptionExample] = []
    with open(captions_path, "r", encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            if set(obj.get("flags", ())) & FATAL_FLAGS:
                continue
            degree = int(obj["degree"])
            if degrees is not None and degree not in degrees:
                continue
            features = by_id.get(str(obj["image_id"]))
            if features is None:
                continue
            examples.append(
                CaptionExample(str(obj["image_id"]), degree, obj["caption"], features)
            )
    return examples


def split_examples(
    examples: list[CaptionExample], val_fraction: float = 0.2, seed: int = 0
) -> tuple[list[CaptionExample], list[CaptionExample]]:
    order = list(range(len(examples)))
    random.Random(seed).shuffle(order)
    n_val = max(1, int(round(val_fraction * len(examples)))) if examples else 0
    val_idx = set(order[:n_val])
    train = [e for i, e in enumerate(examples) if i not in val_idx]
    val = [e for i, e in enumerate(examples) if i in val_idx]
    return train, val


def batches(examples: list[CaptionExample], batch_size: int):
    for start in range(0, len(examples), batch_size):
        yield examples[start : start + batch_size]
