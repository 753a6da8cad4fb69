import numpy as np
import pytest
import torch

from viewfill.checkpoint import (
    Checkpoint,
    checkpoint_from_model,
    load_checkpoint,
    load_into_model,
    model_from_checkpoint,
    save_checkpoint,
)
from viewfill.errors import CorruptCheckpointError, IncompatibleCheckpointError
from viewfill.model import AblationVariant, CompletionModel

from .conftest import tiny_config
from .test_model import make_batch


class TestRoundTrip:
    def test_bitwise_params(self, tmp_path):
        torch.manual_seed(0)
        model = CompletionModel(tiny_config())
        ckpt = checkpoint_from_model(model, epoch=3, meta={"best_val_cd": 0.25})
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        assert back.epoch == 3
        assert back.variant is AblationVariant.FULL
        assert back.meta["best_val_cd"] == 0.25
        assert set(back.params) == set(ckpt.params)
        for name in ckpt.params:
            np.testing.assert_array_equal(back.params[name], ckpt.params[name])

    def test_bitwise_forward_after_reload(self, rng, tmp_path):
        torch.manual_seed(1)
        config = tiny_config()
        model = CompletionModel(config)
        images, partials, seeds = make_batch(config, rng)
        with torch.no_grad():
            before = model(images, partials, seeds).refined.clone()

        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, epoch=0))
        rebuilt = model_from_checkpoint(load_checkpoint(path))
        with torch.no_grad():
            after = rebuilt(images, partials, seeds).refined
        assert torch.equal(before, after)

    def test_extras_round_trip(self, tmp_path):
        model = CompletionModel(tiny_config())
        extras = {"opt.step": np.array([7.0], dtype=np.float64)}
        ckpt = checkpoint_from_model(model, epoch=1, extras=extras)
        save_checkpoint(tmp_path / "c.ckpt", ckpt)
        back = load_checkpoint(tmp_path / "c.ckpt")
        np.testing.assert_array_equal(back.extras["opt.step"], extras["opt.step"])


class TestCorruption:
    def _saved(self, tmp_path):
        model = CompletionModel(tiny_config())
        path = tmp_path / "model.ckpt"
        save_checkpoint(path, checkpoint_from_model(model, epoch=0))
        return path

    def test_truncated_file(self, tmp_path):
        path = self._saved(tmp_path)
        data = path.read_bytes()
        path.write_bytes(data[: len(data) // 2])
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_magic(self, tmp_path):
        path = self._saved(tmp_path)
        data = bytearray(path.read_bytes())
        data[:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_bad_version(self, tmp_path):
        path = self._saved(tmp_path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(tmp_path / "nope.ckpt")

    def test_trailing_garbage(self, tmp_path):
        path = self._saved(tmp_path)
        with open(path, "ab") as f:
            f.write(b"junk")
        with pytest.raises(CorruptCheckpointError):
            load_checkpoint(path)

    def test_header_tamper_breaks_hash(self, tmp_path):
        path = self._saved(tmp_path)
        data = path.read_bytes()
        # flip the first occurrence of the batch size value in the header
        patched = data.replace(b'"lr": 0.001', b'"lr": 0.002', 1)
        assert patched != data
        path.write_bytes(patched)
        with pytest.raises(CorruptCheckpointError, match="hash"):
            load_checkpoint(path)


class TestCompatibility:
    def test_variant_mismatch_names_missing_parameters(self, tmp_path):
        config = tiny_config()
        i2p_only = CompletionModel(config, AblationVariant.I2P_ONLY)
        path = tmp_path / "i2p.ckpt"
        save_checkpoint(path, checkpoint_from_model(i2p_only, epoch=0))
        full = CompletionModel(config, AblationVariant.FULL)
        with pytest.raises(IncompatibleCheckpointError, match="refiner"):
            load_into_model(full, load_checkpoint(path))

    def test_shape_mismatch_rejected(self, tmp_path):
        config = tiny_config()
        model = CompletionModel(config)
        ckpt = checkpoint_from_model(model, epoch=0)
        name = next(iter(ckpt.params))
        ckpt.params[name] = np.zeros((2, 2), dtype=np.float32)
        with pytest.raises(IncompatibleCheckpointError, match="shape"):
            load_into_model(model, ckpt)

    def test_model_from_checkpoint_respects_variant(self, tmp_path):
        config = tiny_config()
        p2p = CompletionModel(config, AblationVariant.P2P_ONLY)
        path = tmp_path / "p2p.ckpt"
        save_checkpoint(path, checkpoint_from_model(p2p, epoch=2))
        rebuilt = model_from_checkpoint(load_checkpoint(path))
        assert rebuilt.variant is AblationVariant.P2P_ONLY
        assert rebuilt.generator is None
