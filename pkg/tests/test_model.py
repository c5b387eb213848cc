import numpy as np
import pytest
import torch

from conftest import KinkDetector, relative_error, smooth_central_difference, tiny_model
from xit.model import (
    EncoderConfig,
    NonFiniteError,
    SummarizerConfig,
    XITModel,
    bilinear_logits,
    bilinear_score,
    gradients,
)
from xit.train import PretrainConfig, pretrain_losses


@pytest.mark.parametrize("T,K", [(600, 75), (128, 16), (32, 4), (33, 4), (16, 2)])
def test_positions(T, K):
    assert EncoderConfig(T).num_positions == K


def test_too_short():
    with pytest.raises(ValueError, match="K=1"):
        EncoderConfig(15)


def test_summarizer_config_validation():
    with pytest.raises(ValueError):
        SummarizerConfig(token_dim=6)
    with pytest.raises(ValueError):
        SummarizerConfig(token_dim=8, heads=3)


@pytest.mark.parametrize("T", [32, 50, 128])
def test_shapes(T):
    torch.manual_seed(0)
    model = XITModel(EncoderConfig(T, (8, 8, 16), (8, 5, 3)), SummarizerConfig(8, 2, 1, 8))
    x = torch.randn(3, T)
    z = model.encode(x)
    K = model.encoder_cfg.num_positions
    assert z.shape == (3, K, 16)
    c = model.context(z)
    assert c.shape == (3, 8)
    assert model.project(c).shape == (3, 2)


def test_wrong_length():
    model = tiny_model()
    with pytest.raises(ValueError, match="length 32"):
        model.encode(torch.zeros(2, 40, dtype=torch.float64))


def test_summarizer_permutation_invariant(model64):
    model64.eval()
    z = torch.randn(2, 5, 8, dtype=torch.float64)
    perm = torch.tensor([3, 0, 4, 2, 1])
    torch.testing.assert_close(model64.summarize(z), model64.summarize(z[:, perm]), rtol=1e-12, atol=1e-12)


def test_eval_deterministic():
    model = tiny_model(dropout=0.3)
    model.eval()
    x = torch.randn(4, 32, dtype=torch.float64)
    a = model.project(model.context(model.encode(x)))
    b = model.project(model.context(model.encode(x)))
    torch.testing.assert_close(a, b, rtol=0, atol=0)


def test_projector_accepts_single_row(model64):
    out = model64.project(torch.randn(1, 8, dtype=torch.float64))
    assert out.shape == (1, 2) and torch.isfinite(out).all()


def test_bilinear_antisymmetry():
    W = torch.randn(3, 4, dtype=torch.float64)
    c, z = torch.randn(3, dtype=torch.float64), torch.randn(4, dtype=torch.float64)
    assert (bilinear_score(W, c, z) * bilinear_score(W, -c, z)).item() == pytest.approx(1.0, abs=1e-12)


def test_bilinear_shape_error():
    with pytest.raises(ValueError):
        bilinear_score(torch.zeros(3, 4), torch.zeros(4), torch.zeros(4))


def test_bilinear_logits_matrix():
    c, W, z = torch.randn(2, 3), torch.randn(3, 4), torch.randn(5, 4)
    out = bilinear_logits(c, W, z)
    assert out.shape == (2, 5)
    assert out[1, 3].item() == pytest.approx((c[1] @ W @ z[3]).item(), rel=1e-5)


class TestClassifier:
    def test_probabilities(self, model64):
        model64.attach_classifier(3)
        p = model64.classify(torch.randn(5, 4, 8, dtype=torch.float64))
        torch.testing.assert_close(p.sum(1), torch.ones(5, dtype=torch.float64))

    def test_shift_invariance(self, model64):
        model64.attach_classifier(3)
        z = torch.randn(5, 4, 8, dtype=torch.float64)
        p = model64.classify(z)
        with torch.no_grad():
            model64.classifier.bias += 7.0
        torch.testing.assert_close(model64.classify(z), p)

    def test_requires_classifier(self, model64):
        with pytest.raises(RuntimeError):
            model64.logits(torch.zeros(1, 4, 8, dtype=torch.float64))

    def test_feature_mismatch(self, model64):
        model64.attach_classifier(2)
        with pytest.raises(ValueError, match="32 features"):
            model64.logits(torch.zeros(1, 5, 8, dtype=torch.float64))


class TestGradients:
    def test_quadratic(self, model64):
        g = gradients(lambda: 0.5 * (model64.W**2).sum(), model64)
        torch.testing.assert_close(g["W"], model64.W.detach())

    def test_unused_is_zero(self, model64):
        g = gradients(lambda: 0.5 * (model64.W**2).sum(), model64)
        assert set(g) == {n for n, _ in model64.named_parameters()}
        assert torch.count_nonzero(g["projector.fc1.weight"]) == 0

    def test_non_finite(self, model64):
        with pytest.raises(NonFiniteError):
            gradients(lambda: model64.W.sum() * float("nan"), model64)

    @pytest.mark.filterwarnings("ignore:Error detected in")
    def test_non_finite_backward_names_operation(self, model64):
        with pytest.raises(NonFiniteError, match="Backward"):
            gradients(lambda: torch.sqrt(model64.W * 0.0).sum(), model64)


def _check_path(ablation, seed, per_tensor=5):
    model = tiny_model()
    x = np.random.default_rng(seed).normal(size=(4, 32))
    cfg = PretrainConfig(batch_size=4, ablation=ablation)
    f = lambda: pretrain_losses(model, x, np.random.default_rng(seed + 1), cfg)["l_total"]
    grads = gradients(f, model)
    detector = KinkDetector(model)
    rng = np.random.default_rng(seed + 2)
    worst = 0.0
    for name, p in model.named_parameters():
        flat = p.data.view(-1)
        checked = 0
        for idx in rng.permutation(flat.numel()):
            if checked == min(per_tensor, flat.numel()):
                break
            num = smooth_central_difference(lambda: f().item(), flat, idx, detector)
            if num is None:
                continue
            worst = max(worst, relative_error(grads[name].view(-1)[idx].item(), num))
            checked += 1
    detector.close()
    return worst


@pytest.mark.parametrize("ablation", ["xd_tc", "xd_sicc", "tc_only"])
def test_gradient_check_per_loss_path(ablation):
    assert _check_path(ablation, 10) <= 1e-4


def test_gradient_check_cross_entropy(model64):
    model64.attach_classifier(3)
    model64.train()
    x = torch.randn(6, 32, dtype=torch.float64)
    y = torch.tensor([0, 1, 2, 0, 1, 2])
    from xit.losses import cross_entropy

    f = lambda: cross_entropy(model64.logits(model64.encode(x)), y)
    grads = gradients(f, model64)
    for name in ["classifier.weight", "encoder.blocks.1.conv.weight", "encoder.blocks.0.bn.weight"]:
        p = dict(model64.named_parameters())[name].data.view(-1)
        for idx in [0, 3, 7]:
            orig = p[idx].item()
            p[idx] = orig + 1e-4
            fp = f().item()
            p[idx] = orig - 1e-4
            fm = f().item()
            p[idx] = orig
            assert relative_error(grads[name].view(-1)[idx].item(), (fp - fm) / 2e-4) <= 1e-4
