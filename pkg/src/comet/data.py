"""Dataset ingestion, standardization, windowing, and synthetic corpora.

CSV files are rectangular numeric tables with a header row, comma-delimited,
'.' decimal. A column named in ``label_column`` is split off as binary labels.
Standardization always uses statistics of the training portion only.

The synthetic generator produces clean multivariate sine mixtures for training
and a labeled test continuation with injected anomalies:

* point — a single-timestep spike of magnitude * sigma on every variable,
* contextual — a segment mirrored around its local mean (values stay within
  the global range but break the local phase),
* collective — a sustained mean shift of magnitude * sigma over the segment.

An optional linear mean drift over the test portion exercises adaptation
under distribution shift.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .ndmath import Rng


@dataclass
class TimeSeries:
    values: np.ndarray                 # (length, n_vars)
    labels: np.ndarray | None = None   # (length,) in {0,1}, optional
    var_names: list[str] | None = None

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_vars(self) -> int:
        return self.values.shape[1]


@dataclass
class Dataset:
    train: TimeSeries
    test: TimeSeries
    mean: np.ndarray | None = None  # train statistics once standardized
    std: np.ndarray | None = None


def load_csv(path, label_column: str | None = None) -> TimeSeries:
    """Load a numeric CSV with header; parse errors name the offending row."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        label_idx = None
        if label_column is not None:
            if label_column not in header:
                raise DataError(f"{path}: no column named {label_column!r}")
            label_idx = header.index(label_column)
        rows, labels = [], []
        for rownum, row in enumerate(reader, start=1):
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {rownum} has {len(row)} cells, expected {len(header)}"
                )
            try:
                vals = [float(c) for c in row]
            except ValueError as exc:
                raise DataError(f"{path}: row {rownum}: {exc}") from None
            if label_idx is not None:
                labels.append(vals.pop(label_idx))
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.asarray(rows, dtype=np.float64)
    names = [h for i, h in enumerate(header) if i != label_idx]
    lab = None
    if label_idx is not None:
        lab = np.asarray(labels)
        if not np.all(np.isin(lab, (0.0, 1.0))):
            raise DataError(f"{path}: label column must contain only 0/1")
        lab = lab.astype(np.int64)
    return TimeSeries(values=values, labels=lab, var_names=names)


def standardize(dataset: Dataset, eps: float = 1e-8) -> Dataset:
    """Z-score train and test with per-variable train statistics."""
    mean = dataset.train.values.mean(axis=0)
    std = dataset.train.values.std(axis=0)
    scale = std + eps

    def apply(ts: TimeSeries) -> TimeSeries:
        return TimeSeries(
            values=(ts.values - mean) / scale,
            labels=ts.labels,
            var_names=ts.var_names,
        )

    return Dataset(train=apply(dataset.train), test=apply(dataset.test),
                   mean=mean, std=std)


def apply_standardization(values: np.ndarray, mean: np.ndarray,
                          std: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    """Standardize new data with previously computed train statistics."""
    return (np.asarray(values, dtype=np.float64) - mean) / (std + eps)


def window_offsets(length: int, window_length: int, stride: int) -> np.ndarray:
    """Window start offsets 0, stride, ...; a tail window snaps to the end."""
    if length < window_length:
        raise DataError(
            f"series of length {length} shorter than one window ({window_length})"
        )
    offsets = list(range(0, length - window_length + 1, stride))
    if offsets[-1] + window_length < length:
        offsets.append(length - window_length)
    return np.asarray(offsets, dtype=np.int64)


def windows(series: np.ndarray, window_length: int, stride: int) -> tuple[list[np.ndarray], np.ndarray]:
    """Ordered list of (window_length, n_vars) views plus their offsets."""
    s = np.asarray(series, dtype=np.float64)
    offs = window_offsets(s.shape[0], window_length, stride)
    return [s[o : o + window_length] for o in offs], offs


@dataclass
class AnomalySpec:
    kind: str        # point | contextual | collective
    start: int       # offset within the test portion
    duration: int
    magnitude: float

    def validate(self, test_length: int):
        if self.kind not in ("point", "contextual", "collective"):
            raise ConfigError(f"unknown anomaly type {self.kind!r}")
        dur = 1 if self.kind == "point" else self.duration
        if dur < 1:
            raise ConfigError(f"anomaly duration must be >= 1, got {self.duration}")
        if self.start < 0 or self.start + dur > test_length:
            raise ConfigError(
                f"anomaly [{self.start}, {self.start + dur}) outside test "
                f"length {test_length}"
            )

    def span(self) -> tuple[int, int]:
        dur = 1 if self.kind == "point" else self.duration
        return self.start, self.start + dur


@dataclass
class SyntheticSpec:
    n_vars: int = 2
    train_length: int = 4000
    test_length: int = 2000
    noise_level: float = 0.1
    drift_sigma: float = 0.0   # linear mean drift over the test portion, in sigmas
    seed: int = 42
    anomalies: list[AnomalySpec] = field(default_factory=list)

    def validate(self):
        if self.n_vars < 1:
            raise ConfigError(f"n_vars must be >= 1, got {self.n_vars}")
        if self.train_length < 1 or self.test_length < 1:
            raise ConfigError("train_length and test_length must be >= 1")
        if self.noise_level < 0:
            raise ConfigError("noise_level must be >= 0")
        spans = []
        for a in self.anomalies:
            a.validate(self.test_length)
            spans.append(a.span())
        spans.sort()
        for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
            if s1 < e0:
                raise ConfigError(
                    f"anomaly intervals overlap: [{s0},{e0}) and [{s1},{e1})"
                )

    def to_dict(self) -> dict:
        return {
            "n_vars": self.n_vars,
            "train_length": self.train_length,
            "test_length": self.test_length,
            "noise_level": self.noise_level,
            "drift_sigma": self.drift_sigma,
            "seed": self.seed,
            "anomalies": [
                {"kind": a.kind, "start": a.start, "duration": a.duration,
                 "magnitude": a.magnitude}
                for a in self.anomalies
            ],
        }

    @classmethod
    def from_dict(cls, raw: dict) -> "SyntheticSpec":
        data = dict(raw)
        anomalies = [AnomalySpec(**a) for a in data.pop("anomalies", [])]
        unknown = set(data) - {
            "n_vars", "train_length", "test_length", "noise_level",
            "drift_sigma", "seed",
        }
        if unknown:
            raise ConfigError(f"unknown synthetic-spec fields: {sorted(unknown)}")
        spec = cls(anomalies=anomalies, **data)
        spec.validate()
        return spec

    @classmethod
    def from_json_file(cls, path) -> "SyntheticSpec":
        with open(path, encoding="utf-8") as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}: invalid JSON: {exc}") from None
        return cls.from_dict(raw)


def _clean_signal(spec: SyntheticSpec, rng: Rng) -> np.ndarray:
    """Sine mixture, one continuous process spanning train + test."""
    total = spec.train_length + spec.test_length
    t = np.arange(total, dtype=np.float64)
    values = np.zeros((total, spec.n_vars))
    shared_phase = rng.uniform(0.0, 2.0 * np.pi, 1)[0]
    for i in range(spec.n_vars):
        freqs = rng.uniform(0.01, 0.05, 2)
        phases = rng.uniform(0.0, 2.0 * np.pi, 2)
        amps = rng.uniform(0.6, 1.2, 2)
        values[:, i] = (
            amps[0] * np.sin(2.0 * np.pi * freqs[0] * t + phases[0])
            + amps[1] * np.sin(2.0 * np.pi * freqs[1] * t + phases[1])
            + 0.3 * np.sin(2.0 * np.pi * 0.02 * t + shared_phase)
        )
    values += rng.normal(spec.noise_level, values.shape)
    return values


def synthesize(spec: SyntheticSpec) -> Dataset:
    """Generate a (clean train, labeled test) dataset from a spec, seeded."""
    spec.validate()
    rng = Rng(spec.seed)
    clean = _clean_signal(spec, rng)
    train_values = clean[: spec.train_length].copy()
    test_values = clean[spec.train_length :].copy()
    sigma = train_values.std(axis=0)

    labels = np.zeros(spec.test_length, dtype=np.int64)
    for a in spec.anomalies:
        s, e = a.span()
        labels[s:e] = 1
        if a.kind == "point":
            test_values[s, :] += a.magnitude * sigma
        elif a.kind == "collective":
            test_values[s:e, :] += a.magnitude * sigma
        else:  # contextual: mirror the segment around its local mean
            seg = test_values[s:e, :]
            local_mean = seg.mean(axis=0)
            test_values[s:e, :] = 2.0 * local_mean - seg

    if spec.drift_sigma != 0.0:
        ramp = np.linspace(0.0, 1.0, spec.test_length, endpoint=False)
        test_values += spec.drift_sigma * ramp[:, None] * sigma[None, :]

    names = [f"x{i + 1}" for i in range(spec.n_vars)]
    return Dataset(
        train=TimeSeries(values=train_values, var_names=names),
        test=TimeSeries(values=test_values, labels=labels, var_names=names),
    )


def write_csv(path, series: TimeSeries, label_column: str | None = None):
    """Write a TimeSeries as CSV; includes the label column when requested."""
    names = series.var_names or [f"x{i + 1}" for i in range(series.n_vars)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        header = list(names)
        if label_column is not None:
            if series.labels is None:
                raise DataError("series has no labels to write")
            header.append(label_column)
        writer.writerow(header)
        for i in range(series.length):
            row = [repr(float(v)) for v in series.values[i]]
            if label_column is not None:
                row.append(str(int(series.labels[i])))
            writer.writerow(row)
