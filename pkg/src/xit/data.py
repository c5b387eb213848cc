"""Dataset loading, zero-prepadding and the domain-balanced pretraining sampler."""

from __future__ import annotations

import json
import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

_SEPARATORS = re.compile(r"[\s,]+")


class DataError(ValueError):
    """Raised for malformed input files or invalid data operations."""


@dataclass
class TimeSeries:
    values: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1 or self.values.size < 1:
            raise DataError("a time series must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(self.values)):
            raise DataError("time series contains non-finite values")

    def __len__(self) -> int:
        return self.values.size


@dataclass
class Dataset:
    name: str
    series: list[TimeSeries]
    num_classes: int
    domain: str = "default"
    split: str = "train"

    def __post_init__(self):
        if not self.series:
            raise DataError(f"dataset {self.name!r} is empty")
        for ts in self.series:
            if ts.label is not None and not 0 <= ts.label < self.num_classes:
                raise DataError(
                    f"dataset {self.name!r}: label {ts.label} outside [0, {self.num_classes})"
                )

    def __len__(self) -> int:
        return len(self.series)

    @property
    def max_length(self) -> int:
        return max(len(ts) for ts in self.series)

    @property
    def labels(self) -> np.ndarray:
        return np.array([-1 if ts.label is None else ts.label for ts in self.series])

    def to_array(self) -> np.ndarray:
        """Stack the series into an (N, T) array; all series must share one length."""
        lengths = {len(ts) for ts in self.series}
        if len(lengths) != 1:
            raise DataError(f"dataset {self.name!r} is ragged; prepad it first")
        return np.stack([ts.values for ts in self.series])


@dataclass
class Collection:
    """Multi-dataset pretraining pool. Immutable after :func:`build_collection`."""

    datasets: list[Dataset]
    target_length: int
    sampling_weights: np.ndarray
    _arrays: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        w = np.asarray(self.sampling_weights, dtype=np.float64)
        if w.shape != (len(self.datasets),) or np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise DataError("sampling weights must be nonnegative and sum to 1")
        self.sampling_weights = w
        if not self._arrays:
            self._arrays = [d.to_array() for d in self.datasets]
        for arr in self._arrays:
            if arr.shape[1] != self.target_length:
                raise DataError("every series in a collection must have target_length")
        for arr in self._arrays:
            arr.setflags(write=False)


def _parse_row(line: str, lineno: int, path: Path) -> tuple[float, np.ndarray]:
    tokens = [t for t in _SEPARATORS.split(line.strip()) if t]
    if len(tokens) < 2:
        raise DataError(f"{path}:{lineno}: expected a label followed by at least one value")
    try:
        numbers = [float(t) for t in tokens]
    except ValueError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None
    if not all(math.isfinite(v) for v in numbers):
        raise DataError(f"{path}:{lineno}: non-finite value")
    return numbers[0], np.asarray(numbers[1:])


def load_dataset(
    path: str | Path,
    format: str = "tsv",
    *,
    name: str | None = None,
    domain: str = "default",
    split: str = "train",
) -> Dataset:
    """Read a UCR-style table: one series per row, label in the first column.

    Columns may be separated by tabs, commas or spaces. Rows may have
    different lengths. Labels are remapped to contiguous 0-based indices in
    sorted order of the original label values.
    """
    if format != "tsv":
        raise DataError(f"unsupported format {format!r}")
    path = Path(path)
    raw: list[tuple[float, np.ndarray]] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            raw.append(_parse_row(line, lineno, path))
    if not raw:
        raise DataError(f"{path}: empty file")

    mapping = {lab: i for i, lab in enumerate(sorted({lab for lab, _ in raw}))}
    series = [TimeSeries(values, mapping[lab]) for lab, values in raw]
    return Dataset(
        name=name or path.stem,
        series=series,
        num_classes=len(mapping),
        domain=domain,
        split=split,
    )


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset in the tab-separated format read by :func:`load_dataset`."""
    with Path(path).open("w") as fh:
        for ts in dataset.series:
            label = 0 if ts.label is None else ts.label
            fh.write("\t".join([str(label)] + [repr(float(v)) for v in ts.values]) + "\n")


def prepad(series: TimeSeries, target_len: int) -> TimeSeries:
    n = len(series)
    if target_len < n:
        raise DataError(f"cannot pad a series of length {n} to {target_len}")
    values = np.concatenate([np.zeros(target_len - n), series.values])
    return TimeSeries(values, series.label)


def prepad_dataset(dataset: Dataset, target_len: int) -> Dataset:
    return Dataset(
        name=dataset.name,
        series=[prepad(ts, target_len) for ts in dataset.series],
        num_classes=dataset.num_classes,
        domain=dataset.domain,
        split=dataset.split,
    )


def first_variate(rows: Sequence[Sequence[float]], label: int | None = None) -> TimeSeries:
    if len(rows) == 0:
        raise DataError("multivariate series has no variates")
    return TimeSeries(np.asarray(rows[0], dtype=np.float64), label)


def domain_balanced_weights(domains: Sequence[str], sizes: Sequence[int]) -> np.ndarray:
    """Each domain gets equal mass; within a domain, mass is proportional to size."""
    totals: dict[str, int] = defaultdict(int)
    for d, n in zip(domains, sizes):
        totals[d] += n
    n_domains = len(totals)
    return np.array([n / totals[d] / n_domains for d, n in zip(domains, sizes)])


def build_collection(datasets: Sequence[Dataset]) -> Collection:
    if not datasets:
        raise DataError("cannot build a collection from no datasets")
    target = max(d.max_length for d in datasets)
    padded = [prepad_dataset(d, target) for d in datasets]
    weights = domain_balanced_weights([d.domain for d in padded], [len(d) for d in padded])
    return Collection(datasets=padded, target_length=target, sampling_weights=weights)


def sample_indices(
    collection: Collection, batch_size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (dataset index, series index) pairs for one pretraining batch."""
    if batch_size < 2:
        raise DataError("batch size must be at least 2 for ring pairing")
    ds = rng.choice(len(collection.datasets), size=batch_size, p=collection.sampling_weights)
    sizes = np.array([len(d) for d in collection.datasets])
    idx = rng.integers(0, sizes[ds])
    return ds, idx


def sample_batch_array(
    collection: Collection, batch_size: int, rng: np.random.Generator
) -> np.ndarray:
    ds, idx = sample_indices(collection, batch_size, rng)
    return np.stack([collection._arrays[d][i] for d, i in zip(ds, idx)])


def sample_batch(
    collection: Collection, batch_size: int, rng: np.random.Generator
) -> list[TimeSeries]:
    ds, idx = sample_indices(collection, batch_size, rng)
    return [collection.datasets[d].series[i] for d, i in zip(ds, idx)]


def load_manifest(path: str | Path, max_length: int | None = None) -> list[Dataset]:
    """Load every dataset listed in a JSON collection manifest.

    The manifest looks like ``{"datasets": [{"path": ..., "domain": ..., "name": ...}]}``;
    relative paths resolve against the manifest's directory. Datasets whose
    longest series exceeds ``max_length`` are skipped.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    entries = spec.get("datasets") if isinstance(spec, dict) else None
    if not entries:
        raise DataError(f"{path}: manifest lists no datasets")

    datasets = []
    for entry in entries:
        if "path" not in entry:
            raise DataError(f"{path}: manifest entry without 'path': {entry}")
        file = Path(entry["path"])
        if not file.is_absolute():
            file = path.parent / file
        if not file.exists():
            raise DataError(f"dataset file not found: {file}")
        ds = load_dataset(file, name=entry.get("name"), domain=entry.get("domain", "default"))
        if max_length is not None and ds.max_length > max_length:
            log.info("skipping %s: length %d exceeds %d", ds.name, ds.max_length, max_length)
            continue
        datasets.append(ds)
    if not datasets:
        raise DataError(f"{path}: no dataset survived the length filter")
    return datasets
