"""Command line: ``xit {pretrain,finetune,embed,eval,synth}``.

Exit codes: 0 success, 1 runtime or training failure, 2 configuration or I/O error.
Relative output paths resolve under ``$XIT_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .data import DataError, load_dataset, load_manifest, save_dataset
from .metrics import dbi, pca2, rank_methods
from .model import NonFiniteError
from .pipeline import build_model, fit_to_encoder, metric_report, pretrain_on, probe
from .synth import FAMILIES, SynthSpec, generate
from .train import ABLATIONS, DivergenceError, embed, predict_proba

log = logging.getLogger("xit")

OUTPUT_ROOT_ENV = "XIT_OUTPUT_ROOT"
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Configuration or I/O problem; reported with exit code 2."""


def _output_path(path: str | Path) -> Path:
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _effective_config(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "ablation", None) is not None:
        cfg = cfg.replace(train={"ablation": args.ablation})
    if getattr(args, "steps", None) is not None:
        cfg = cfg.replace(train={"steps": args.steps})
    if getattr(args, "max_length", None) is not None:
        cfg = cfg.replace(data={"max_length": args.max_length})
    if getattr(args, "manifest", None) is not None:
        cfg = cfg.replace(data={"manifest": args.manifest})
    if getattr(args, "output", None) is not None:
        cfg = cfg.replace(output_dir=args.output)
    return cfg


def _resolve_manifest(cfg: RunConfig, config_path: str | None) -> Path:
    if cfg.data.manifest is None:
        raise UsageError("config key data.manifest is not set")
    manifest = Path(cfg.data.manifest)
    if not manifest.is_absolute() and config_path is not None and not manifest.exists():
        manifest = Path(config_path).parent / manifest
    if not manifest.exists():
        raise UsageError(f"collection manifest not found: {manifest} (config key data.manifest)")
    return manifest


def cmd_pretrain(args) -> int:
    cfg = _effective_config(args)
    manifest = _resolve_manifest(cfg, args.config)
    datasets = load_manifest(manifest, cfg.data.max_length)
    out = _output_path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    ckpt = pretrain_on(datasets, cfg, telemetry=out / "telemetry.csv")
    save_checkpoint(ckpt, out / "checkpoint")
    print(f"wrote {out / 'checkpoint'} after {ckpt.step} steps; final loss {ckpt.history[-1]['l_total']:.4f}")
    return EXIT_OK


def _load_labeled(path: str, split: str) -> "Dataset":  # noqa: F821
    if not Path(path).exists():
        raise UsageError(f"dataset file not found: {path}")
    return load_dataset(path, split=split)


def _model_for(args, cfg: RunConfig, length: int):
    if args.random_init:
        return build_model(cfg, length)
    if args.checkpoint is None:
        raise UsageError("either --checkpoint or --random-init is required")
    return load_checkpoint(args.checkpoint).model


def cmd_finetune(args) -> int:
    cfg = _effective_config(args)
    train = _load_labeled(args.train, "train")
    test = _load_labeled(args.test, "test") if args.test else None
    model = _model_for(args, cfg, max(train.max_length, test.max_length if test else 0))
    num_classes = max(train.num_classes, test.num_classes if test else 0)
    probe_model, result = probe(model, train, cfg, num_classes)
    if test is not None:
        test = fit_to_encoder(test, probe_model)
        x, y = test.to_array(), test.labels
    else:
        padded = fit_to_encoder(train, probe_model)
        x, y = padded.to_array()[result.val_indices], padded.labels[result.val_indices]
    report = metric_report(predict_proba(probe_model, x), y)

    out = _output_path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.json")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    save_checkpoint(Checkpoint(model=probe_model, config=cfg.to_dict()), out / "classifier")
    with (out / "history.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "steps", "train_loss", "val_auroc"])
        writer.writeheader()
        writer.writerows(result.history)
    for key, value in report.items():
        print(f"{key:>9s}  {value:.4f}")
    return EXIT_OK


def write_embedding_csv(path: Path, labels: np.ndarray, coords: np.ndarray, z: np.ndarray) -> None:
    """Columns: ``index, label, pc1, pc2, z0 .. z{D-1}`` (flattened encoder output)."""
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "label", "pc1", "pc2"] + [f"z{d}" for d in range(z.shape[1])])
        for i in range(len(labels)):
            writer.writerow([i, int(labels[i]), repr(float(coords[i, 0])), repr(float(coords[i, 1]))] + [repr(float(v)) for v in z[i]])


def read_embedding_csv(path: Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return rows[:, 1].astype(int), rows[:, 2:4], rows[:, 4:]


def cmd_embed(args) -> int:
    cfg = _effective_config(args)
    data = _load_labeled(args.dataset, "test")
    model = _model_for(args, cfg, data.max_length)
    data = fit_to_encoder(data, model)
    z = embed(model, data.to_array()).reshape(len(data), -1).astype(np.float64)
    coords = pca2(z)
    out = _output_path(args.output or Path(cfg.output_dir) / "embedding.csv")
    out.parent.mkdir(parents=True, exist_ok=True)
    write_embedding_csv(out, data.labels, coords, z)
    score = dbi(z, data.labels)
    print(f"dbi {score!r}")
    print(f"wrote {len(data)} rows to {out}")
    return EXIT_OK


def collect_reports(root: Path, metric: str) -> tuple[list[str], list[str], np.ndarray]:
    """Read ``root/<method>/<dataset>.json`` into a methods x datasets matrix (NaN = missing)."""
    if not root.is_dir():
        raise UsageError(f"reports directory not found: {root}")
    methods = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not methods:
        raise UsageError(f"no method directories under {root}")
    cells: dict[tuple[str, str], float] = {}
    for m in methods:
        for f in sorted((root / m).glob("*.json")):
            report = json.loads(f.read_text())
            if metric not in report:
                raise UsageError(f"{f}: report has no {metric!r} entry")
            cells[(m, f.stem)] = float(report[metric])
    datasets = sorted({d for _, d in cells})
    matrix = np.array([[cells.get((m, d), np.nan) for d in datasets] for m in methods])
    missing = [f"{m}/{d}" for m in methods for d in datasets if (m, d) not in cells]
    if missing:
        raise UsageError("ragged report matrix; missing cells: " + ", ".join(missing))
    return methods, datasets, matrix


def cmd_eval(args) -> int:
    methods, datasets, matrix = collect_reports(Path(args.reports), args.metric)
    ranks = rank_methods(matrix)
    width = max(len(m) for m in methods + ["method"])
    print(f"{'method':<{width}}  {'mean ' + args.metric:>14s}  {'rank':>6s}")
    for m, row, r in zip(methods, matrix, ranks):
        print(f"{m:<{width}}  {row.mean():>14.4f}  {r:>6.3f}")
    if args.output:
        out = _output_path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        with out.open("w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", f"mean_{args.metric}", "mean_rank"])
            for m, row, r in zip(methods, matrix, ranks):
                writer.writerow([m, repr(float(row.mean())), repr(float(r))])
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = SynthSpec(args.family, args.classes, args.samples_per_class, args.length, args.noise, args.seed)
    out = _output_path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_dataset(generate(spec), out)
    print(f"wrote {spec.classes * spec.samples_per_class} series to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--output", help="output directory (overrides output_dir)")
        if seed:
            p.add_argument("--seed", type=int)

    p = sub.add_parser("pretrain", help="self-supervised pretraining on a dataset collection")
    common(p)
    p.add_argument("--manifest", help="collection manifest (overrides data.manifest)")
    p.add_argument("--ablation", choices=ABLATIONS)
    p.add_argument("--steps", type=int)
    p.add_argument("--max-length", type=int, help="skip datasets longer than this")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="linear probe on a labelled dataset")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--train", "--dataset", dest="train", required=True)
    p.add_argument("--test")
    p.add_argument("--random-init", action="store_true", help="probe a randomly initialised encoder")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("embed", help="write encoder embeddings, PCA coordinates and the DBI")
    common(p, seed=True)
    p.add_argument("--checkpoint")
    p.add_argument("--dataset", required=True)
    p.add_argument("--random-init", action="store_true")
    p.set_defaults(func=cmd_embed, output=None)

    p = sub.add_parser("eval", help="mean-rank table over per-method report files")
    p.add_argument("--reports", required=True)
    p.add_argument("--metric", default="macro_f1")
    p.add_argument("--output", help="CSV file for the rank table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--family", choices=FAMILIES, required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--samples-per-class", type=int, default=50)
    p.add_argument("--length", type=int, default=128)
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(message)s",
    )
    try:
        return args.func(args)
    except (UsageError, ConfigError, DataError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DivergenceError, NonFiniteError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
