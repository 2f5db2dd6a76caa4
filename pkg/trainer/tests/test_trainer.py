import json

import numpy as np
import pytest
import torch

import prefix_trainer.training as train_module
from prefix_trainer.data import load_examples, split_examples
from prefix_trainer.emb_io import EmbFileError, read_emb, write_emb
from prefix_trainer.encoder import DEGREES, HashTokenizer, PrefixBank, TinyDualEncoder
from prefix_trainer.export import (
    base_text_embeddings,
    export_image_embeddings,
    export_text_embeddings,
)
from prefix_trainer.training import (
    TrainConfig,
    load_checkpoint,
    train_from_store,
)

TOY_CONFIG = dict(
    learning_rate=0.05,
    epochs=40,
    batch_size=8,
    val_interval=8,
    patience=3,
    prefix_length=4,
    val_fraction=0.25,
    seed=0,
)


def test_tokenizer_is_stable_and_padded():
    tokenizer = HashTokenizer(128)
    ids = tokenizer.encode("river stone river")
    assert ids == tokenizer.encode("River Stone river".lower())
    assert ids[0] == ids[2]
    assert all(1 <= i < 128 for i in ids)
    batch = tokenizer.batch(["a b c", "a"])
    assert batch.shape == (2, 3)
    assert batch[1, 1] == 0 and batch[1, 2] == 0


def test_encoder_is_frozen_and_deterministic():
    a = TinyDualEncoder(seed=4)
    b = TinyDualEncoder(seed=4)
    assert a.frozen_digest() == b.frozen_digest()
    assert TinyDualEncoder(seed=5).frozen_digest() != a.frozen_digest()
    assert all(not p.requires_grad for p in a.parameters())


def test_prefix_bank_shapes_and_trainable_count():
    encoder = TinyDualEncoder()
    bank = PrefixBank(encoder, length=8)
    assert bank.prefixes.shape == (5, 8, encoder.width)
    assert bank.trainable_parameter_count() == 5 * 8 * encoder.width
    assert bank.prefixes.requires_grad
    for degree in DEGREES:
        assert bank.for_degree(degree).shape == (8, encoder.width)


def test_zero_length_prefix_is_identity():
    encoder = TinyDualEncoder()
    bank = PrefixBank(encoder, length=0)
    token_ids = encoder.tokenizer.batch(["a river runs", "stone"])
    with torch.no_grad():
        bare = encoder.encode_text(token_ids)
        with_empty = encoder.encode_text(token_ids, bank.for_degree(1))
    assert torch.equal(bare, with_empty)


def test_prefix_changes_text_but_never_images(toy_corpus):
    encoder = TinyDualEncoder()
    bank = PrefixBank(encoder, length=4)
    token_ids = encoder.tokenizer.batch(["a river runs"])
    with torch.no_grad():
        bare = encoder.encode_text(token_ids)
        prefixed = encoder.encode_text(token_ids, bank.for_degree(3))
    assert not torch.equal(bare, prefixed)
    features = torch.randn(3, 8)
    with torch.no_grad():
        assert torch.equal(encoder.encode_image(features), encoder.encode_image(features))


def test_load_examples_skips_fatal_flags(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    lines = captions_path.read_text().strip().splitlines()
    extra = json.loads(lines[0])
    extra["flags"] = ["missing_required_word"]
    captions_path.write_text(
        "\n".join(lines + [json.dumps(extra)]) + "\n", encoding="utf-8"
    )
    examples = load_examples(captions_path, features_path)
    assert len(examples) == 32  # the flagged duplicate is dropped


def test_degree_filter_and_empty_slice(toy_corpus):
    captions_path, features_path = toy_corpus
    only_d2 = load_examples(captions_path, features_path, degrees=(2,))
    assert {e.degree for e in only_d2} == {2}
    with pytest.raises(ValueError, match="no usable"):
        train_from_store(captions_path, features_path, "unused", degrees=(99,))


def test_split_is_deterministic(toy_corpus):
    captions_path, features_path = toy_corpus
    examples = load_examples(captions_path, features_path)
    a_train, a_val = split_examples(examples, 0.25, seed=3)
    b_train, b_val = split_examples(examples, 0.25, seed=3)
    assert a_train == b_train and a_val == b_val
    assert len(a_val) == 8 and len(a_train) == 24


def test_training_improves_validation_loss(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    result = train_from_store(
        captions_path, features_path, tmp_path / "ckpt", TrainConfig(**TOY_CONFIG)
    )
    assert result.best_val_loss < result.init_val_loss
    assert result.steps > 0
    assert not result.diverged
    assert (result.checkpoint_dir / "prefixes.pt").exists()
    assert (result.checkpoint_dir / "config.json").exists()


def test_frozen_parameters_identical_before_and_after(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    config = TrainConfig(**TOY_CONFIG)
    before = TinyDualEncoder(**config.encoder).frozen_digest()
    train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    encoder, bank, _ = load_checkpoint(tmp_path / "ckpt")
    assert encoder.frozen_digest() == before
    assert bank.trainable_parameter_count() == 5 * config.prefix_length * encoder.width


def test_zero_learning_rate_changes_nothing(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    config = TrainConfig(**{**TOY_CONFIG, "learning_rate": 0.0, "epochs": 2})
    result = train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    encoder, bank, _ = load_checkpoint(tmp_path / "ckpt")
    reference = PrefixBank(TinyDualEncoder(**config.encoder), config.prefix_length, config.seed)
    assert torch.equal(bank.prefixes, reference.prefixes)
    assert result.best_val_loss == result.init_val_loss


def test_divergence_aborts_with_last_finite_checkpoint(tmp_path, toy_corpus, monkeypatch):
    captions_path, features_path = toy_corpus
    real_loss = train_module.contrastive_loss
    calls = {"n": 0}

    def poisoned(text_z, image_z, scale):
        calls["n"] += 1
        loss = real_loss(text_z, image_z, scale)
        if calls["n"] >= 6:
            return loss * float("nan")
        return loss

    monkeypatch.setattr(train_module, "contrastive_loss", poisoned)
    config = TrainConfig(**{**TOY_CONFIG, "val_interval": 1000})
    result = train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    assert result.diverged
    encoder, bank, _ = load_checkpoint(tmp_path / "ckpt")
    assert torch.isfinite(bank.prefixes).all()


def test_early_stopping_respects_patience(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    # zero learning rate: validation never improves, so the patience counter
    # trips after exactly `patience` checks
    config = TrainConfig(
        **{**TOY_CONFIG, "learning_rate": 0.0, "epochs": 50, "val_interval": 1, "patience": 3}
    )
    result = train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    assert result.stopped_early
    assert result.steps == 3


def test_default_config_matches_training_setup():
    config = TrainConfig()
    assert config.learning_rate == 1e-4
    assert config.epochs == 1
    assert config.patience == 3
    assert config.val_interval == 500
    assert config.prefix_length == 8


def test_gradient_matches_finite_differences(toy_corpus):
    captions_path, features_path = toy_corpus
    examples = load_examples(captions_path, features_path)[:8]
    encoder = TinyDualEncoder().double()
    bank = PrefixBank(encoder, length=4).double()

    loss = train_module._batch_loss(encoder, bank, examples)
    loss.backward()
    grad = bank.prefixes.grad.detach().clone()
    flat_index = int(torch.argmax(grad.abs()))
    analytic = float(grad.flatten()[flat_index])

    eps = 1e-5
    with torch.no_grad():
        flat = bank.prefixes.flatten()
        original = float(flat[flat_index])
        flat[flat_index] = original + eps
        loss_plus = float(train_module._batch_loss(encoder, bank, examples))
        flat[flat_index] = original - eps
        loss_minus = float(train_module._batch_loss(encoder, bank, examples))
        flat[flat_index] = original
    numeric = (loss_plus - loss_minus) / (2 * eps)
    assert abs(numeric - analytic) / max(abs(analytic), 1e-12) < 1e-3


def test_export_round_trip_and_normalization(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    config = TrainConfig(**TOY_CONFIG)
    train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    texts = [(f"t{i}", f"caption number {i} by the river") for i in range(6)]
    out = export_text_embeddings(tmp_path / "ckpt", texts, degree=5,
                                 out_path=tmp_path / "text.emb")
    ids, rows = read_emb(out)
    assert ids == [f"t{i}" for i in range(6)]
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    assert np.allclose(norms, 1.0, atol=1e-5)
    # cosine of a row with itself is exactly 1 after normalization
    unit = rows[0] / np.linalg.norm(rows[0])
    assert float(unit @ unit) == pytest.approx(1.0, abs=1e-6)


def test_image_export_identical_across_degrees(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    train_from_store(captions_path, features_path, tmp_path / "ckpt",
                     TrainConfig(**TOY_CONFIG))
    a = export_image_embeddings(tmp_path / "ckpt", features_path, tmp_path / "imgA.emb")
    b = export_image_embeddings(tmp_path / "ckpt", features_path, tmp_path / "imgB.emb")
    assert a.read_bytes() == b.read_bytes()


def test_zero_length_prefix_export_equals_base_encoder(tmp_path, toy_corpus):
    captions_path, features_path = toy_corpus
    config = TrainConfig(**{**TOY_CONFIG, "prefix_length": 0, "epochs": 1})
    train_from_store(captions_path, features_path, tmp_path / "ckpt", config)
    texts = [(f"t{i}", f"some words {i}") for i in range(4)]
    out = export_text_embeddings(tmp_path / "ckpt", texts, degree=2,
                                 out_path=tmp_path / "text.emb")
    _, rows = read_emb(out)
    base = base_text_embeddings(TinyDualEncoder(**config.encoder), texts)
    assert rows.tobytes() == base.tobytes()


def test_emb_io_round_trip_and_errors(tmp_path):
    rows = np.random.default_rng(0).normal(size=(4, 3)).astype(np.float32)
    path = tmp_path / "x.emb"
    write_emb(path, ["a", "b", "c", "d"], rows)
    ids, loaded = read_emb(path)
    assert ids == ["a", "b", "c", "d"]
    assert loaded.tobytes() == rows.tobytes()
    bad = tmp_path / "bad.emb"
    bad.write_bytes(b"NOPE 4 3\n")
    with pytest.raises(EmbFileError):
        read_emb(bad)
