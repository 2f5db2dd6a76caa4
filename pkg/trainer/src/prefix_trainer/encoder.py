"""Frozen dual encoder and the per-degree prefix bank.

The encoder is a deterministic, seeded stand-in for a pretrained contrastive
backbone: a token-embedding text tower with mean pooling and a linear image
tower, both projecting into a shared unit-normalized space.  All of its
parameters are frozen; only the prefix bank (5 x L x width virtual token
embeddings, prepended to the text tower at the embedding layer) trains.
"""

import hashlib
import zlib

import torch
from torch import nn

DEGREES = (1, 2, 3, 4, 5)
DEGREE_LABELS = {
    1: "near synonyms",
    2: "slight abstraction",
    3: "broader context",
    4: "conceptual association",
    5: "full abstraction",
}


class HashTokenizer:
    """Stable hashing tokenizer: token -> id in [1, vocab); 0 is padding."""

    def __init__(self, vocab_size: int = 512):
        self.vocab_size = vocab_size

    def encode(self, text: str) -> list[int]:
        return [
            1 + zlib.crc32(token.encode("utf-8")) % (self.vocab_size - 1)
            for token in text.lower().split()
        ]

    def batch(self, texts: list[str]) -> torch.Tensor:
        encoded = [self.encode(t) for t in texts]
        width = max((len(e) for e in encoded), default=1) or 1
        out = torch.zeros(len(texts), width, dtype=torch.long)
        for i, ids in enumerate(encoded):
            out[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
        return out


class TinyDualEncoder(nn.Module):
    """Seeded frozen backbone with a fixed logit scale."""

    def __init__(
        self,
        vocab_size: int = 512,
        width: int = 32,
        embed_dim: int = 16,
        image_dim: int = 8,
        seed: int = 0,
    ):
        super().__init__()
        self.config = {
            "vocab_size": vocab_size,
            "width": width,
            "embed_dim": embed_dim,
            "image_dim": image_dim,
            "seed": seed,
        }
        generator = torch.Generator().manual_seed(seed)
        self.token_embedding = nn.Parameter(
            torch.randn(vocab_size, width, generator=generator) * 0.5
        )
        self.text_proj = nn.Parameter(
            torch.randn(width, embed_dim, generator=generator) / width**0.5
        )
        self.image_proj = nn.Parameter(
            torch.randn(image_dim, embed_dim, generator=generator) / image_dim**0.5
        )
        self.register_buffer("logit_scale", torch.tensor(20.0))
        self.tokenizer = HashTokenizer(vocab_size)
        for parameter in self.parameters():
            parameter.requires_grad_(False)

    @property
    def width(self) -> int:
        return int(self.config["width"])

    def frozen_digest(self) -> str:
        """Content digest of every frozen parameter, for freeze assertions."""
        digest = hashlib.sha256()
        for name, parameter in sorted(self.named_parameters()):
            digest.update(name.encode())
            digest.update(parameter.detach().cpu().numpy().tobytes())
        digest.update(self.logit_scale.cpu().numpy().tobytes())
        return digest.hexdigest()

    def encode_text(
        self, token_ids: torch.Tensor, prefix: torch.Tensor | None = None
    ) -> torch.Tensor:
        """Unit-normalized text embeddings.

        ``prefix`` is (L, width) shared across the batch or (B, L, width)
        per-example; L may be zero, in which case the output equals the bare
        backbone's exactly.
        """
        embeddings = self.token_embedding[token_ids]  # (B, T, width)
        mask = (token_ids != 0).to(embeddings.dtype).unsqueeze(-1)  # (B, T, 1)
        if prefix is not None and prefix.shape[-2] > 0:
            if prefix.dim() == 2:
                prefix = prefix.unsqueeze(0).expand(embeddings.shape[0], -1, -1)
            embeddings = torch.cat([prefix, embeddings], dim=1)
            prefix_mask = torch.ones(
                embeddings.shape[0],
                prefix.shape[1],
                1,
                device=embeddings.device,
                dtype=embeddings.dtype,
            )
            mask = torch.cat([prefix_mask, mask], dim=1)
        pooled = (embeddings * mask).sum(dim=1) / mask.sum(dim=1).clamp(min=1.0)
        projected = pooled @ self.text_proj
        return nn.functional.normalize(projected, dim=-1)

    def encode_image(self, features: torch.Tensor) -> torch.Tensor:
        """Unit-normalized image embeddings from precomputed feature rows."""
        return nn.functional.normalize(features @ self.image_proj, dim=-1)


class PrefixBank(nn.Module):
    """Five learnable prefix sequences, one per abstraction degree.

    Initialized from the embedding of each degree's label words plus small
    seeded noise; the only trainable parameters in the system.
    """

    def __init__(self, encoder: TinyDualEncoder, length: int = 8, seed: int = 0):
        super().__init__()
        self.length = length
        generator = torch.Generator().manual_seed(seed + 1)
        init = torch.zeros(len(DEGREES), length, encoder.width)
        if length > 0:
            for row, degree in enumerate(DEGREES):
                ids = encoder.tokenizer.encode(DEGREE_LABELS[degree])
                label_embedding = encoder.token_embedding[
                    torch.tensor(ids, dtype=torch.long)
                ].mean(dim=0)
                noise = torch.randn(length, encoder.width, generator=generator) * 0.01
                init[row] = label_embedding.unsqueeze(0) + noise
        self.prefixes = nn.Parameter(init.detach().clone())

    def for_degree(self, degree: int) -> torch.Tensor:
        return self.prefixes[DEGREES.index(int(degree))]

    def for_degrees(self, degrees: torch.Tensor) -> torch.Tensor:
        index = torch.tensor([DEGREES.index(int(d)) for d in degrees])
        return self.prefixes[index]

    def trainable_parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters() if p.requires_grad)
