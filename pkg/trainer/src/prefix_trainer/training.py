"""Prefix training on the frozen encoder.

Symmetric contrastive loss over in-batch image-text pairs; the text side is
prepended with its caption's degree prefix at the embedding layer.  Only the
prefix bank receives gradient updates.  Validation loss is checked at a
fixed step cadence with early stopping, and the checkpoint kept is the one
with the lowest validation loss.  A non-finite loss aborts training and
falls back to the last finite checkpoint.
"""

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import torch

from .data import CaptionExample, batches, load_examples, split_examples
from .encoder import PrefixBank, TinyDualEncoder


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 1
    patience: int = 3
    batch_size: int = 32
    val_interval: int = 500
    prefix_length: int = 8
    val_fraction: float = 0.2
    seed: int = 0
    encoder: dict = field(
        default_factory=lambda: {
            "vocab_size": 512,
            "width": 32,
            "embed_dim": 16,
            "image_dim": 8,
            "seed": 0,
        }
    )


@dataclass
class TrainResult:
    init_val_loss: float
    best_val_loss: float
    steps: int
    diverged: bool
    stopped_early: bool
    checkpoint_dir: Path


def contrastive_loss(
    text_z: torch.Tensor, image_z: torch.Tensor, logit_scale: torch.Tensor
) -> torch.Tensor:
    """Symmetric InfoNCE over the in-batch pair matrix."""
    logits = logit_scale * text_z @ image_z.T
    targets = torch.arange(len(text_z), device=logits.device)
    loss_t = torch.nn.functional.cross_entropy(logits, targets)
    loss_i = torch.nn.functional.cross_entropy(logits.T, targets)
    return (loss_t + loss_i) / 2.0


def _batch_loss(
    encoder: TinyDualEncoder, bank: PrefixBank, batch: list[CaptionExample]
) -> torch.Tensor:
    dtype = encoder.token_embedding.dtype
    token_ids = encoder.tokenizer.batch([e.text for e in batch])
    prefixes = bank.for_degrees(torch.tensor([e.degree for e in batch]))
    text_z = encoder.encode_text(token_ids, prefixes.to(dtype))
    features = torch.tensor([e.features.tolist() for e in batch], dtype=dtype)
    image_z = encoder.encode_image(features)
    return contrastive_loss(text_z, image_z, encoder.logit_scale)


def evaluate(
    encoder: TinyDualEncoder,
    bank: PrefixBank,
    examples: list[CaptionExample],
    batch_size: int,
) -> float:
    if not examples:
        raise ValueError("empty validation slice")
    total = 0.0
    count = 0
    with torch.no_grad():
        for batch in batches(examples, batch_size):
            total += float(_batch_loss(encoder, bank, batch)) * len(batch)
            count += len(batch)
    return total / count


def train_from_store(
    captions_path: str | Path,
    features_path: str | Path,
    out_dir: str | Path,
    config: TrainConfig | None = None,
    degrees: tuple[int, ...] | None = None,
) -> TrainResult:
    config = config or TrainConfig()
    examples = load_examples(captions_path, features_path, degrees)
    if not examples:
        raise ValueError("no usable caption examples for the requested degrees")
    train_set, val_set = split_examples(examples, config.val_fraction, config.seed)
    return train(train_set, val_set, out_dir, config)


def train(
    train_set: list[CaptionExample],
    val_set: list[CaptionExample],
    out_dir: str | Path,
    config: TrainConfig,
) -> TrainResult:
    if not train_set:
        raise ValueError("empty training slice")
    torch.manual_seed(config.seed)
    encoder = TinyDualEncoder(**config.encoder)
    bank = PrefixBank(encoder, config.prefix_length, config.seed)
    optimizer = torch.optim.Adam(bank.parameters(), lr=config.learning_rate)

    init_val_loss = evaluate(encoder, bank, val_set, config.batch_size)
    best_val_loss = init_val_loss
    best_state = bank.prefixes.detach().clone()
    last_finite_state = best_state.clone()

    rng = random.Random(config.seed)
    steps = 0
    diverged = False
    stopped_early = False
    checks_without_improvement = 0
    # nothing to optimize with an empty prefix: evaluate and checkpoint only
    trainable = bank.prefixes.numel() > 0

    def check_validation() -> bool:
        """Returns True when patience is exhausted."""
        nonlocal best_val_loss, best_state, checks_without_improvement
        val_loss = evaluate(encoder, bank, val_set, config.batch_size)
        if val_loss < best_val_loss:
            best_val_loss = val_loss
            best_state = bank.prefixes.detach().clone()
            checks_without_improvement = 0
        else:
            checks_without_improvement += 1
        return checks_without_improvement >= config.patience

    for _ in range(config.epochs):
        if not trainable:
            break
        order = list(train_set)
        rng.shuffle(order)
        for batch in batches(order, config.batch_size):
            optimizer.zero_grad()
            loss = _batch_loss(encoder, bank, batch)
            if not torch.isfinite(loss):
                diverged = True
                break
            loss.backward()
            optimizer.step()
            if not torch.isfinite(bank.prefixes).all():
                diverged = True
                break
            last_finite_state = bank.prefixes.detach().clone()
            steps += 1
            if steps % config.val_interval == 0 and check_validation():
                stopped_early = True
                break
        if diverged or stopped_early:
            break

    if diverged:
        with torch.no_grad():
            bank.prefixes.copy_(last_finite_state)
        final_val = evaluate(encoder, bank, val_set, config.batch_size)
        if final_val < best_val_loss:
            best_val_loss = final_val
            best_state = bank.prefixes.detach().clone()
    elif not stopped_early:
        check_validation()

    checkpoint_dir = save_checkpoint(Path(out_dir), config, best_state, best_val_loss)
    return TrainResult(
        init_val_loss=init_val_loss,
        best_val_loss=best_val_loss,
        steps=steps,
        diverged=diverged,
        stopped_early=stopped_early,
        checkpoint_dir=checkpoint_dir,
    )


def save_checkpoint(
    out_dir: Path, config: TrainConfig, prefixes: torch.Tensor, val_loss: float
) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save({"prefixes": prefixes}, out_dir / "prefixes.pt")
    payload = asdict(config)
    payload["best_val_loss"] = val_loss
    (out_dir / "config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return out_dir


def load_checkpoint(checkpoint_dir: str | Path) -> tuple[TinyDualEncoder, PrefixBank, TrainConfig]:
    checkpoint_dir = Path(checkpoint_dir)
    payload = json.loads((checkpoint_dir / "config.json").read_text(encoding="utf-8"))
    payload.pop("best_val_loss", None)
    config = TrainConfig(**payload)
    encoder = TinyDualEncoder(**config.encoder)
    bank = PrefixBank(encoder, config.prefix_length, config.seed)
    state = torch.load(checkpoint_dir / "prefixes.pt", weights_only=True)
    with torch.no_grad():
        bank.prefixes.copy_(state["prefixes"])
    return encoder, bank, config
