import json
import random

import numpy as np
import pytest

from prefix_trainer.emb_io import write_emb

WORDS = ["river", "stone", "cloud", "ember", "forest", "lantern", "echo", "harbor"]
IMAGE_DIM = 8


def build_toy_corpus(root, n_pairs=32, seed=0):
    """32 image-caption pairs whose image features cluster by degree, so a
    per-degree text prefix is exactly the learnable signal."""
    rng = np.random.default_rng(seed)
    rand = random.Random(seed)
    centers = rng.normal(size=(5, IMAGE_DIM)) * 3.0
    ids, rows, lines = [], [], []
    for i in range(n_pairs):
        degree = (i % 5) + 1
        image_id = f"toy{i:03d}"
        ids.append(image_id)
        rows.append(centers[degree - 1] + rng.normal(scale=0.3, size=IMAGE_DIM))
        caption = " ".join(rand.choice(WORDS) for _ in range(5))
        lines.append(
            {
                "image_id": image_id,
                "element": "scene",
                "association": caption.split()[0],
                "degree": degree,
                "caption": caption,
                "flags": [],
            }
        )
    features_path = root / "features.emb"
    captions_path = root / "captions.jsonl"
    write_emb(features_path, ids, np.asarray(rows, dtype=np.float32))
    captions_path.write_text(
        "".join(json.dumps(line) + "\n" for line in lines), encoding="utf-8"
    )
    return captions_path, features_path


@pytest.fixture
def toy_corpus(tmp_path):
    return build_toy_corpus(tmp_path)
