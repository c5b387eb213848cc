"""Checkpoint directories: ``manifest.json`` plus one raw little-endian float32
file per tensor.

Layout::

    ckpt/
      manifest.json          format/version, configs, step, RNG state, tensor index
      model.<param>.bin      model parameters and float buffers
      adam.m.<param>.bin     first Adam moments (if optimizer state is present)
      adam.v.<param>.bin     second Adam moments
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from .model import EncoderConfig, SummarizerConfig, XITModel

FORMAT = "xit-checkpoint"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)


@dataclass
class Checkpoint:
    model: XITModel
    config: dict[str, Any] = field(default_factory=dict)
    adam: AdamState | None = None
    step: int = 0
    rng_state: dict[str, Any] | None = None
    history: list[dict[str, float | None]] = field(default_factory=list, repr=False)


def capture_rng(rng: np.random.Generator) -> dict[str, Any]:
    return {
        "numpy": rng.bit_generator.state,
        "torch": torch.get_rng_state().numpy().tobytes().hex(),
    }


def restore_rng(state: dict[str, Any]) -> np.random.Generator:
    """Restore torch's global RNG and return a numpy generator in the saved state."""
    torch.set_rng_state(torch.from_numpy(np.frombuffer(bytes.fromhex(state["torch"]), dtype=np.uint8).copy()))
    bitgen = getattr(np.random, state["numpy"]["bit_generator"])()
    bitgen.state = state["numpy"]
    return np.random.Generator(bitgen)


def _tensor_entries(ckpt: Checkpoint) -> list[tuple[str, torch.Tensor]]:
    entries = []
    for name, t in ckpt.model.state_dict().items():
        if t.is_floating_point():
            entries.append((f"model.{name}", t))
    if ckpt.adam is not None:
        for name in sorted(ckpt.adam.m):
            entries.append((f"adam.m.{name}", ckpt.adam.m[name]))
            entries.append((f"adam.v.{name}", ckpt.adam.v[name]))
    return entries


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    model = ckpt.model
    tensors = []
    for name, t in _tensor_entries(ckpt):
        data = t.detach().cpu().numpy().astype("<f4", copy=False)
        fname = f"{name}.bin"
        (path / fname).write_bytes(data.tobytes())
        tensors.append({"name": name, "file": fname, "shape": list(t.shape), "dtype": "float32-le"})
    int_buffers = {
        name: int(t.item())
        for name, t in model.state_dict().items()
        if not t.is_floating_point()
    }
    manifest = {
        "format": FORMAT,
        "version": VERSION,
        "step": ckpt.step,
        "encoder": asdict(model.encoder_cfg),
        "summarizer": asdict(model.summarizer_cfg),
        "num_classes": None if model.classifier is None else model.classifier.out_features,
        "config": ckpt.config,
        "adam_step": None if ckpt.adam is None else ckpt.adam.step,
        "rng_state": ckpt.rng_state,
        "int_buffers": int_buffers,
        "tensors": tensors,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _read_tensor(path: Path, entry: dict) -> torch.Tensor:
    file = path / entry["file"]
    if not file.exists():
        raise CheckpointError(f"tensor {entry['name']}: missing file {file.name}")
    raw = file.read_bytes()
    expected = int(np.prod(entry["shape"], dtype=np.int64)) * 4
    if len(raw) != expected:
        raise CheckpointError(
            f"tensor {entry['name']}: file has {len(raw)} bytes, expected {expected}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(entry["shape"]).copy()
    return torch.from_numpy(arr)


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.exists():
        raise CheckpointError(f"no checkpoint manifest at {manifest_file}")
    manifest = json.loads(manifest_file.read_text())
    if manifest.get("format") != FORMAT or manifest.get("version") != VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format {manifest.get('format')!r} "
            f"version {manifest.get('version')!r} (expected {FORMAT!r} v{VERSION})"
        )
    model = XITModel(
        EncoderConfig(**manifest["encoder"]),
        SummarizerConfig(**manifest["summarizer"]),
        num_classes=manifest["num_classes"],
    )
    state = model.state_dict()
    loaded: dict[str, torch.Tensor] = {}
    adam_m: dict[str, torch.Tensor] = {}
    adam_v: dict[str, torch.Tensor] = {}
    for entry in manifest["tensors"]:
        t = _read_tensor(path, entry)
        name = entry["name"]
        if name.startswith("model."):
            key = name[len("model."):]
            if key not in state or state[key].shape != t.shape:
                raise CheckpointError(f"tensor {name}: does not match the model architecture")
            loaded[key] = t
        elif name.startswith("adam.m."):
            adam_m[name[len("adam.m."):]] = t
        elif name.startswith("adam.v."):
            adam_v[name[len("adam.v."):]] = t
        else:
            raise CheckpointError(f"tensor {name}: unknown namespace")
    for key, value in manifest["int_buffers"].items():
        loaded[key] = torch.tensor(value, dtype=state[key].dtype)
    missing = set(state) - set(loaded)
    if missing:
        raise CheckpointError(f"checkpoint lacks tensors: {sorted(missing)}")
    model.load_state_dict(loaded)
    adam = None
    if manifest["adam_step"] is not None:
        adam = AdamState(step=manifest["adam_step"], m=adam_m, v=adam_v)
    return Checkpoint(
        model=model,
        config=manifest["config"],
        adam=adam,
        step=manifest["step"],
        rng_state=manifest["rng_state"],
    )
