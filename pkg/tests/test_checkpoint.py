import json

import numpy as np
import pytest
import torch

from conftest import tiny_model
from xit.checkpoint import (
    AdamState,
    Checkpoint,
    CheckpointError,
    capture_rng,
    load_checkpoint,
    restore_rng,
    save_checkpoint,
)


@pytest.fixture
def ckpt():
    model = tiny_model(torch.float32)
    model.attach_classifier(3)
    adam = AdamState(step=7, m={"W": torch.randn(8, 8)}, v={"W": torch.rand(8, 8)})
    rng = np.random.default_rng(5)
    rng.normal(size=3)
    return Checkpoint(model, {"seed": 5}, adam, step=7, rng_state=capture_rng(rng))


def test_round_trip(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    back = load_checkpoint(tmp_path / "a")
    for n, t in ckpt.model.state_dict().items():
        assert torch.equal(t, back.model.state_dict()[n]), n
    assert back.step == 7 and back.adam.step == 7
    assert torch.equal(back.adam.m["W"], ckpt.adam.m["W"])
    assert back.config == {"seed": 5}
    assert back.model.classifier.out_features == 3


def test_resave_byte_identical(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    save_checkpoint(load_checkpoint(tmp_path / "a"), tmp_path / "b")
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert files == sorted(p.name for p in (tmp_path / "b").iterdir())
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f


def test_little_endian_float32(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    raw = (tmp_path / "a" / "model.W.bin").read_bytes()
    np.testing.assert_array_equal(np.frombuffer(raw, "<f4").reshape(8, 8), ckpt.model.W.detach().numpy())


def test_truncated_tensor_named(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    f = tmp_path / "a" / "model.encoder.blocks.1.conv.weight.bin"
    f.write_bytes(f.read_bytes()[:-4])
    with pytest.raises(CheckpointError, match="model.encoder.blocks.1.conv.weight"):
        load_checkpoint(tmp_path / "a")


def test_wrong_version(ckpt, tmp_path):
    save_checkpoint(ckpt, tmp_path / "a")
    m = tmp_path / "a" / "manifest.json"
    data = json.loads(m.read_text())
    data["version"] = 99
    m.write_text(json.dumps(data))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(tmp_path / "a")


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path)


def test_rng_round_trip(ckpt):
    rng = restore_rng(ckpt.rng_state)
    ref = np.random.default_rng(5)
    ref.normal(size=3)
    np.testing.assert_array_equal(rng.normal(size=4), ref.normal(size=4))


def test_torch_rng_restored():
    torch.manual_seed(11)
    state = capture_rng(np.random.default_rng(0))
    a = torch.rand(3)
    restore_rng(state)
    assert torch.equal(torch.rand(3), a)
