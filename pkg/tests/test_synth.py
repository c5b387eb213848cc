import numpy as np
import pytest
import torch

from conftest import tiny_model
from xit.checkpoint import Checkpoint
from xit.config import RunConfig
from xit.synth import FAMILIES, SynthSpec, TransferResult, generate, transfer_surplus


def nearest_centroid_accuracy(train, test):
    X, y = train.to_array(), train.labels
    centroids = np.stack([X[y == k].mean(0) for k in range(train.num_classes)])
    d = ((test.to_array()[:, None] - centroids[None]) ** 2).sum(-1)
    return (d.argmin(1) == test.labels).mean()


@pytest.mark.parametrize("family", ["sine-freq", "square-duty", "sawtooth-slope"])
def test_nearest_centroid(family):
    train = generate(SynthSpec(family, 2, 50, 128, 0.05, seed=0))
    test = generate(SynthSpec(family, 2, 50, 128, 0.05, seed=1))
    assert nearest_centroid_accuracy(train, test) > 0.9


def test_ar_classes_differ_in_autocorrelation():
    data = generate(SynthSpec("ar-noise", 2, 50, 128, 0.0, seed=0))
    X = data.to_array()
    lag1 = (X[:, 1:] * X[:, :-1]).mean(1)
    assert lag1[data.labels == 0].mean() < 0 < lag1[data.labels == 1].mean()


def test_noiseless_sine_separable_in_frequency():
    data = generate(SynthSpec("sine-freq", 2, 30, 128, 0.0, seed=3))
    peak = np.abs(np.fft.rfft(data.to_array(), axis=1)).argmax(1)
    assert peak[data.labels == 0].max() < peak[data.labels == 1].min()


@pytest.mark.parametrize("family", FAMILIES)
def test_invariants(family):
    data = generate(SynthSpec(family, 3, 7, 40, seed=2))
    assert len(data) == 21
    assert np.bincount(data.labels).tolist() == [7, 7, 7]
    assert data.domain == family
    X = data.to_array()
    assert X.shape == (21, 40) and np.isfinite(X).all()


def test_deterministic():
    a = generate(SynthSpec("ar-noise", seed=4)).to_array()
    np.testing.assert_array_equal(a, generate(SynthSpec("ar-noise", seed=4)).to_array())
    assert not np.array_equal(a, generate(SynthSpec("ar-noise", seed=5)).to_array())


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec("chirp")
    with pytest.raises(ValueError):
        SynthSpec("sine-freq", classes=1)


TINY = RunConfig().replace(
    model={"channels": (8, 8, 8), "token_dim": 8, "heads": 2, "layers": 1, "ffn_hidden": 8},
    train={"batch_size": 8, "steps": 2},
    finetune={"max_steps": 40, "batch_size": 8},
)


def test_same_encoder_both_arms_gives_zero():
    torch.manual_seed(0)
    ck = Checkpoint(tiny_model(torch.float32))
    r = transfer_surplus(
        [SynthSpec("sine-freq", length=32)], SynthSpec("ar-noise", 2, 10, 32), TINY,
        test_per_class=10, checkpoint=ck, baseline=ck.model,
    )
    assert r.surplus == 0.0


def test_surplus_antisymmetric():
    r = TransferResult(0.7, 0.4)
    assert TransferResult(r.random_init_f1, r.pretrained_f1).surplus == -r.surplus


def test_pure_function_of_inputs():
    args = ([SynthSpec("sine-freq", 2, 10, 32), SynthSpec("ar-noise", 2, 10, 32)], SynthSpec("square-duty", 2, 10, 32), TINY)
    a = transfer_surplus(*args, test_per_class=10)
    b = transfer_surplus(*args, test_per_class=10)
    assert a == b


def test_target_must_be_held_out():
    with pytest.raises(ValueError, match="held out"):
        transfer_surplus([SynthSpec("sine-freq")], SynthSpec("sine-freq"), TINY)
