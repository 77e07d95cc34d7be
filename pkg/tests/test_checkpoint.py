"""Tests for the checkpoint container."""

from unittest.mock import patch

import numpy as np
import pytest
from factories import TINY_TRANSFORMER

from detext.data.tokenizer import learn_subword_vocab
from detext.errors import CheckpointCorruptError, CheckpointError, CheckpointVersionError
from detext.models.scoring import score_query
from detext.models.transformer import TransformerEncoderParams
from detext.nn.optim import AdamState, adam_step
from detext.services import checkpoint
from detext.services.checkpoint import (
    checkpoint_bytes,
    load_checkpoint,
    load_encoder,
    model_fingerprint,
    model_from_bytes,
    save_checkpoint,
    save_encoder,
)


class TestModelCheckpoint:
    """Save, load and integrity checks."""

    @pytest.mark.parametrize("name", ["cnn_model", "bert_model", "mlp_model"])
    def test_scores_survive_round_trip(self, name, request, tmp_path, train_set):
        """A loaded model scores exactly like the saved one."""
        model = request.getfixturevalue(name)
        path = save_checkpoint(model, tmp_path / "model.ckpt")
        loaded = load_checkpoint(path)
        np.testing.assert_array_equal(score_query(loaded, train_set[0]), score_query(model, train_set[0]))
        assert loaded.spec == model.spec

    def test_bytes_are_deterministic(self, cnn_model):
        """Serializing twice gives identical bytes and fingerprint."""
        assert checkpoint_bytes(cnn_model) == checkpoint_bytes(cnn_model)
        assert len(model_fingerprint(cnn_model)) == 64

    def test_fingerprint_tracks_weights(self, cnn_model):
        """Changing one weight changes the fingerprint."""
        before = model_fingerprint(cnn_model)
        cnn_model.head.out_b.assign(cnn_model.head.out_b.data + 1)
        assert model_fingerprint(cnn_model) != before

    def test_fingerprint_cached_until_weights_change(self, cnn_model):
        """Repeated fingerprints serialize once; an assign or optimizer step forces a new digest."""
        with patch.object(checkpoint, "checkpoint_bytes", wraps=checkpoint.checkpoint_bytes) as serialize:
            first = model_fingerprint(cnn_model)
            assert model_fingerprint(cnn_model) == first
            assert serialize.call_count == 1

            cnn_model.head.out_b.assign(cnn_model.head.out_b.data + 1)
            second = model_fingerprint(cnn_model)
            assert second != first
            assert serialize.call_count == 2

            cnn_model.head.out_b.grad[...] = 1.0
            adam_step([cnn_model.head.out_b], AdamState(), learning_rate=0.1)
            assert model_fingerprint(cnn_model) != second
            assert serialize.call_count == 3

    def test_bad_magic(self, cnn_model):
        """Foreign files are rejected."""
        with pytest.raises(CheckpointCorruptError):
            model_from_bytes(b"NOPE" + checkpoint_bytes(cnn_model)[4:])

    def test_unsupported_version(self, cnn_model):
        """A newer format version is refused."""
        data = bytearray(checkpoint_bytes(cnn_model))
        data[4:8] = (checkpoint.VERSION + 1).to_bytes(4, "little")
        with pytest.raises(CheckpointVersionError) as exc_info:
            model_from_bytes(bytes(data))
        assert exc_info.value.found == checkpoint.VERSION + 1

    def test_truncated(self, cnn_model):
        """Missing bytes are detected."""
        with pytest.raises(CheckpointCorruptError):
            model_from_bytes(checkpoint_bytes(cnn_model)[:-10])

    def test_trailing_bytes(self, cnn_model):
        """Extra bytes after the tensor table are detected."""
        with pytest.raises(CheckpointCorruptError):
            model_from_bytes(checkpoint_bytes(cnn_model) + b"\x00")

    def test_missing_file(self, tmp_path):
        """An absent file is a checkpoint error."""
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "missing.ckpt")

    def test_atomic_write_leaves_no_temp(self, mlp_model, tmp_path):
        """Only the final file remains after saving."""
        save_checkpoint(mlp_model, tmp_path / "out" / "model.ckpt")
        assert [p.name for p in (tmp_path / "out").iterdir()] == ["model.ckpt"]

    def test_encoder_is_not_a_model(self, tmp_path, rng):
        """A pretrained-encoder file cannot be loaded as a model."""
        vocab = learn_subword_vocab(["abc abd"], 2)
        params = TransformerEncoderParams.create(TINY_TRANSFORMER, len(vocab), 8, rng)
        path = save_encoder(params, vocab, tmp_path / "encoder.ckpt")
        with pytest.raises(CheckpointCorruptError):
            load_checkpoint(path)


class TestEncoderCheckpoint:
    """Pretrained transformer files."""

    def test_round_trip(self, tmp_path, rng):
        """Tensors, spec and vocabulary come back."""
        vocab = learn_subword_vocab(["representation based ranking"], 5)
        params = TransformerEncoderParams.create(TINY_TRANSFORMER, len(vocab), 12, rng)
        loaded, loaded_vocab = load_encoder(save_encoder(params, vocab, tmp_path / "encoder.ckpt"))
        assert loaded_vocab == vocab
        assert loaded.spec == TINY_TRANSFORMER and loaded.max_len == 12
        for a, b in zip(loaded.parameters(), params.parameters()):
            np.testing.assert_array_equal(a.data, b.data)

    def test_model_is_not_an_encoder(self, cnn_model, tmp_path):
        """A model file cannot be loaded as an encoder."""
        path = save_checkpoint(cnn_model, tmp_path / "model.ckpt")
        with pytest.raises(CheckpointCorruptError):
            load_encoder(path)
