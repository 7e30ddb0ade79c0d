"""Core domain types, invariant validation, and on-disk dataset formats.

A dataset directory holds ``meta.json`` plus comma-separated matrix files
(no header rows): ``mixtures.csv`` always, and ``components.csv`` /
``concentrations.csv`` / ``selection.csv`` when ground truth is attached.
Real values are serialized with 17 significant digits so that 64-bit floats
round-trip bit-exactly.  All types are immutable after construction and safe
to share read-only across threads.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

FORMAT_VERSION = "1"
_FLOAT_FMT = "{:.17g}"


def _as_float_matrix(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class Spectrum:
    """One signal vector: intensity per channel, arbitrary instrument units."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError(f"spectrum must be 1-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("spectrum entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def d(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ComponentBank:
    """A stack of component vectors, one candidate source signal per row."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        v = _as_float_matrix(self.vectors, "component vectors")
        if not np.all(np.isfinite(v)):
            raise ValueError("component vectors must be finite")
        object.__setattr__(self, "vectors", v)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def d(self) -> int:
        return self.vectors.shape[1]

    def row(self, i: int) -> np.ndarray:
        return self.vectors[i]


@dataclass(frozen=True)
class GroundTruth:
    """Generative metadata attached to synthetic datasets."""

    components: ComponentBank
    concentrations: np.ndarray
    selection: np.ndarray
    k_range: tuple[int, int]
    c_range: tuple[float, float]
    seed: int
    snr_db: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "concentrations", _as_float_matrix(self.concentrations, "concentrations")
        )
        object.__setattr__(self, "selection", _as_float_matrix(self.selection, "selection"))


@dataclass(frozen=True)
class Dataset:
    """Observed mixtures plus optional ground truth."""

    mixtures: np.ndarray
    d: int
    ground_truth: Optional[GroundTruth] = None

    def __post_init__(self) -> None:
        m = _as_float_matrix(self.mixtures, "mixtures")
        if m.shape[1] != self.d:
            raise ValueError(f"mixtures have {m.shape[1]} channels, expected d={self.d}")
        object.__setattr__(self, "mixtures", m)

    @property
    def m_samples(self) -> int:
        return self.mixtures.shape[0]


@dataclass(frozen=True)
class ResolvedSolution:
    """The extracted artifact of one checkpoint: retained components only."""

    active_components: ComponentBank
    concentrations: np.ndarray
    metrics: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "concentrations", _as_float_matrix(self.concentrations, "concentrations")
        )
        if self.concentrations.shape[1] != self.active_components.n:
            raise ValueError("concentration columns must match active component count")


def _write_matrix(path: str, matrix: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in matrix:
            fh.write(",".join(_FLOAT_FMT.format(x) for x in row))
            fh.write("\n")


def _read_matrix(path: str) -> np.ndarray:
    rows: list[list[float]] = []
    width: Optional[int] = None
    with open(path) as fh:
        for r, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",")
            if width is None:
                width = len(cells)
            elif len(cells) != width:
                raise ValueError(
                    f"{path}: row {r} has {len(cells)} columns, expected {width}"
                )
            parsed = []
            for c, cell in enumerate(cells):
                try:
                    parsed.append(float(cell))
                except ValueError as exc:
                    raise ValueError(
                        f"{path}: malformed number at row {r}, column {c}: {cell!r}"
                    ) from exc
            rows.append(parsed)
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return np.array(rows, dtype=np.float64)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset directory: meta.json + CSV matrices."""
    os.makedirs(path, exist_ok=True)
    gt = dataset.ground_truth
    meta = {
        "format_version": FORMAT_VERSION,
        "d": dataset.d,
        "M": dataset.m_samples,
        "N_true": gt.components.n if gt is not None else None,
        "snr_db": gt.snr_db if gt is not None else None,
        "seed": gt.seed if gt is not None else None,
        "k_range": list(gt.k_range) if gt is not None else None,
        "c_range": list(gt.c_range) if gt is not None else None,
    }
    try:
        with open(os.path.join(path, "meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
        _write_matrix(os.path.join(path, "mixtures.csv"), dataset.mixtures)
        if gt is not None:
            _write_matrix(os.path.join(path, "components.csv"), gt.components.vectors)
            _write_matrix(os.path.join(path, "concentrations.csv"), gt.concentrations)
            _write_matrix(os.path.join(path, "selection.csv"), gt.selection)
    except OSError as exc:
        raise OSError(f"failed writing dataset to {path}: {exc}") from exc


def load_dataset(path: str) -> Dataset:
    """Load and validate a dataset directory written by :func:`save_dataset`."""
    meta_path = os.path.join(path, "meta.json")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read {meta_path}: {exc}") from exc
    mixtures = _read_matrix(os.path.join(path, "mixtures.csv"))
    d, M = int(meta["d"]), int(meta["M"])
    if mixtures.shape != (M, d):
        raise ValueError(
            f"mixtures.csv has shape {mixtures.shape}, meta.json declares ({M}, {d})"
        )
    gt = None
    comp_path = os.path.join(path, "components.csv")
    if os.path.exists(comp_path):
        components = _read_matrix(comp_path)
        n_true = int(meta["N_true"])
        if components.shape != (n_true, d):
            raise ValueError(
                f"components.csv has shape {components.shape}, expected ({n_true}, {d})"
            )
        concentrations = _read_matrix(os.path.join(path, "concentrations.csv"))
        selection = _read_matrix(os.path.join(path, "selection.csv"))
        for name, mat in (("concentrations.csv", concentrations), ("selection.csv", selection)):
            if mat.shape != (M, n_true):
                raise ValueError(
                    f"{name} has shape {mat.shape}, expected ({M}, {n_true})"
                )
        gt = GroundTruth(
            components=ComponentBank(components),
            concentrations=concentrations,
            selection=selection,
            k_range=tuple(int(k) for k in meta["k_range"]),
            c_range=tuple(float(c) for c in meta["c_range"]),
            seed=int(meta["seed"]),
            snr_db=None if meta.get("snr_db") is None else float(meta["snr_db"]),
        )
    dataset = Dataset(mixtures=mixtures, d=d, ground_truth=gt)
    report = validate(dataset)
    if report:
        raise ValueError(f"loaded dataset violates invariants: {report}")
    return dataset


def validate(dataset: Dataset) -> list[str]:
    """Check every dataset invariant; returns violations (empty when valid).

    The noiseless-consistency check (mixtures equal the gated concentration
    matrix applied to the components) is skipped when ``snr_db`` is present,
    since noise breaks exact equality by construction.
    """
    report: list[str] = []
    if not np.all(np.isfinite(dataset.mixtures)):
        report.append("mixtures contain non-finite entries")
    gt = dataset.ground_truth
    if gt is None:
        return report

    bank = gt.components.vectors
    if np.any(bank < 0):
        report.append("ground-truth components contain negative entries")
    if len({row.tobytes() for row in bank}) != bank.shape[0]:
        report.append("ground-truth components contain bit-identical rows")

    sel = gt.selection
    conc = gt.concentrations
    if not np.all((sel == 0) | (sel == 1)):
        report.append("selection matrix is not binary")
    else:
        k_min, k_max = gt.k_range
        row_sums = sel.sum(axis=1)
        bad = np.where((row_sums < k_min) | (row_sums > k_max))[0]
        for i in bad:
            report.append(
                f"selection row {i} has {int(row_sums[i])} ones, outside [{k_min}, {k_max}]"
            )
    if np.any(conc[sel == 0] != 0):
        report.append("nonzero concentration where selection is zero")
    c_low, c_high = gt.c_range
    active = conc[sel == 1]
    if active.size and (active.min() < c_low or active.max() >= c_high):
        report.append(
            f"active concentrations outside [{c_low}, {c_high}): "
            f"range [{active.min()}, {active.max()}]"
        )
    if gt.snr_db is None:
        clean = (sel * conc) @ bank
        scale = max(float(np.abs(dataset.mixtures).max()), 1.0)
        if not np.allclose(dataset.mixtures, clean, rtol=1e-9, atol=1e-9 * scale):
            err = float(np.abs(dataset.mixtures - clean).max())
            report.append(f"noiseless mixtures deviate from gated reconstruction (max {err})")
    return report
