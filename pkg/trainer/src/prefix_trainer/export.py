"""Embedding export in the evaluation harness's EMB1 format.

Text embeddings carry the requested degree's prefix; image embeddings never
do (the image tower is untouched by prefix tuning).  Output rows are unit
normalized float32.
"""

from pathlib import Path

import numpy as np
import torch

from .emb_io import read_emb, write_emb
from .encoder import TinyDualEncoder
from .training import load_checkpoint


def _to_rows(z: torch.Tensor) -> np.ndarray:
    return z.detach().cpu().numpy().astype(np.float32)


def export_text_embeddings(
    checkpoint_dir: str | Path,
    texts: list[tuple[str, str]],
    degree: int,
    out_path: str | Path,
) -> Path:
    """Embed (id, text) pairs with the degree's learned prefix."""
    encoder, bank, _ = load_checkpoint(checkpoint_dir)
    ids = [id for id, _ in texts]
    token_ids = encoder.tokenizer.batch([text for _, text in texts])
    with torch.no_grad():
        z = encoder.encode_text(token_ids, bank.for_degree(degree))
    write_emb(out_path, ids, _to_rows(z))
    return Path(out_path)


def export_image_embeddings(
    checkpoint_dir: str | Path,
    features_path: str | Path,
    out_path: str | Path,
) -> Path:
    """Embed precomputed image feature rows; no prefix involved."""
    encoder, _, _ = load_checkpoint(checkpoint_dir)
    ids, rows = read_emb(features_path)
    with torch.no_grad():
        z = encoder.encode_image(torch.tensor(rows, dtype=torch.float32))
    write_emb(out_path, ids, _to_rows(z))
    return Path(out_path)


def base_text_embeddings(
    encoder: TinyDualEncoder, texts: list[tuple[str, str]]
) -> np.ndarray:
    """Frozen-backbone text embeddings with no prefix, for parity checks."""
    token_ids = encoder.tokenizer.batch([text for _, text in texts])
    with torch.no_grad():
        z = encoder.encode_text(token_ids)
    return _to_rows(z)
