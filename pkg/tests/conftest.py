import numpy as np
import pytest
import torch

from xit.model import EncoderConfig, SummarizerConfig, XITModel

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)


def tiny_model(dtype=torch.float64, dropout=0.0, seed=0, length=32):
    """T=32 gives K=4 positions; Z = C = 8."""
    torch.manual_seed(seed)
    model = XITModel(
        EncoderConfig(length, (8, 8, 8), (8, 5, 3)), SummarizerConfig(8, 4, 2, 8, dropout)
    )
    return model.to(dtype)


def relative_error(a, b, floor=1e-4):
    """|a - b| relative to the larger magnitude; the floor keeps near-zero
    gradients from turning O(h^2) difference noise into a large ratio."""
    return abs(a - b) / max(abs(a), abs(b), floor)


@pytest.fixture
def model64():
    return tiny_model()


class KinkDetector:
    """Records the piecewise-linear pattern of a forward pass: the sign of
    every ReLU input and the argmax of every max-pool window.

    Two evaluations with different patterns straddle a kink, where a central
    difference does not estimate the derivative.
    """

    def __init__(self, model):
        from torch import nn

        from xit.model import Projector, ResidualBlock, TransformerLayer

        self.pattern = []
        self.handles = []
        for mod in model.modules():
            if isinstance(mod, ResidualBlock):
                self._hook(mod.bn, lambda out: out > 0)
                self.handles.append(mod.pool.register_forward_hook(self._pool_hook))
            elif isinstance(mod, TransformerLayer):
                self._hook(mod.ffn[0], lambda out: out > 0)
            elif isinstance(mod, Projector):
                self._hook(mod.bn, lambda out: out > 0)

    def _hook(self, module, fn):
        self.handles.append(module.register_forward_hook(lambda m, i, o: self.pattern.append(fn(o.detach()))))

    def _pool_hook(self, module, inputs, output):
        x = inputs[0].detach()
        _, idx = torch.nn.functional.max_pool1d(x, module.kernel_size, module.stride, return_indices=True)
        self.pattern.append(idx)

    def capture(self, fn):
        self.pattern = []
        value = fn()
        return value, [p.clone() for p in self.pattern]

    @staticmethod
    def same(a, b):
        return len(a) == len(b) and all(torch.equal(x, y) for x, y in zip(a, b))

    def close(self):
        for h in self.handles:
            h.remove()


def smooth_central_difference(f, flat, idx, detector, h=1e-4):
    """Central difference of ``f`` in ``flat[idx]``; None when +-h crosses a kink."""
    orig = flat[idx].item()
    flat[idx] = orig + h
    fp, pat_p = detector.capture(f)
    flat[idx] = orig - h
    fm, pat_m = detector.capture(f)
    flat[idx] = orig
    _, pat_0 = detector.capture(f)
    if not (detector.same(pat_p, pat_0) and detector.same(pat_m, pat_0)):
        return None
    return (float(fp) - float(fm)) / (2 * h)
