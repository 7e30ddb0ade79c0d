"""Shared evaluation mathematics.

Pooled R-squared, mean squared error, normalized MSE, greedy component
matching against ground truth, and success-rate aggregation over run
records.  All functions are pure and operate on numpy arrays.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

#: Sentinel partner index for unmatched rows in :func:`match_components`.
UNMATCHED = -1

#: Column order of the run-record CSV emitted by the bench command.
RUN_RECORD_FIELDS = (
    "method",
    "n_true",
    "mult",
    "snr_db",
    "r2",
    "ec",
    "success",
    "seed",
    "wall_ms",
)


@dataclass(frozen=True)
class RunRecord:
    """One benchmark run: which method, on what data, with what outcome."""

    method: str
    n_true: int
    mult: int
    snr_db: float | None
    r2: float
    estimated_count: int
    success: bool
    seed: int
    wall_ms: float

    def __post_init__(self) -> None:
        if self.estimated_count < 0:
            raise ValueError("estimated_count must be >= 0")
        if self.r2 > 1.0:
            raise ValueError("r2 cannot exceed 1")

    def to_row(self) -> list[str]:
        snr = "" if self.snr_db is None else repr(float(self.snr_db))
        return [
            self.method,
            str(self.n_true),
            str(self.mult),
            snr,
            repr(float(self.r2)),
            str(self.estimated_count),
            "1" if self.success else "0",
            str(self.seed),
            repr(float(self.wall_ms)),
        ]

    @staticmethod
    def from_row(row: Sequence[str]) -> "RunRecord":
        return RunRecord(
            method=row[0],
            n_true=int(row[1]),
            mult=int(row[2]),
            snr_db=None if row[3] == "" else float(row[3]),
            r2=float(row[4]),
            estimated_count=int(row[5]),
            success=row[6] == "1",
            seed=int(row[7]),
            wall_ms=float(row[8]),
        )


def write_run_records(path, records: Iterable[RunRecord], append: bool = False) -> None:
    """Write run records as CSV with the canonical header."""
    mode = "a" if append else "w"
    exists = append and _has_header(path)
    with open(path, mode, newline="") as fh:
        writer = csv.writer(fh)
        if not exists:
            writer.writerow(RUN_RECORD_FIELDS)
        for rec in records:
            writer.writerow(rec.to_row())


def _has_header(path) -> bool:
    try:
        with open(path, newline="") as fh:
            first = fh.readline()
    except FileNotFoundError:
        return False
    return first.strip() == ",".join(RUN_RECORD_FIELDS)


def read_run_records(path) -> list[RunRecord]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"empty run-record file: {path}")
        if header != list(RUN_RECORD_FIELDS):
            raise ValueError(f"unexpected run-record header in {path}: {header}")
        return [RunRecord.from_row(row) for row in reader if row]


def r_squared(X: np.ndarray, X_hat: np.ndarray) -> float:
    """Pooled entrywise R-squared about the global scalar mean of ``X``.

    ``1 - SS_res / SS_tot`` where both sums pool every matrix entry and
    ``SS_tot`` is taken about the single scalar mean of all entries of ``X``.
    """
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    ss_tot = float(np.sum((X - X.mean()) ** 2))
    if ss_tot == 0.0:
        raise ValueError("r_squared undefined for constant X (SS_tot = 0)")
    ss_res = float(np.sum((X - X_hat) ** 2))
    return 1.0 - ss_res / ss_tot


def mse(X: np.ndarray, X_hat: np.ndarray) -> float:
    """Mean squared entrywise error."""
    X = np.asarray(X, dtype=np.float64)
    X_hat = np.asarray(X_hat, dtype=np.float64)
    if X.shape != X_hat.shape:
        raise ValueError(f"shape mismatch: {X.shape} vs {X_hat.shape}")
    return float(np.mean((X - X_hat) ** 2))


def nmse(X: np.ndarray, X_hat: np.ndarray) -> float:
    """Mean squared error normalized by the mean squared entry of ``X``."""
    X = np.asarray(X, dtype=np.float64)
    denom = float(np.mean(X**2))
    if denom == 0.0:
        raise ValueError("nmse undefined for zero-energy X")
    return mse(X, X_hat) / denom


def match_components(
    estimated: np.ndarray, truth: np.ndarray
) -> list[tuple[int, int, float]]:
    """Greedy max-cosine assignment between two stacks of row vectors.

    Pairs are claimed in descending cosine-similarity order, each row index
    used at most once.  Leftover rows on either side are appended with the
    :data:`UNMATCHED` sentinel as their partner and cosine ``nan``.  Greedy
    matching is not globally optimal; it is adequate at the scales used here
    and its local optimality (no single swap improves the total) is tested.
    """
    E = np.asarray(estimated, dtype=np.float64)
    T = np.asarray(truth, dtype=np.float64)
    if E.ndim != 2 or T.ndim != 2 or E.shape[0] == 0 or T.shape[0] == 0:
        raise ValueError("both banks must be non-empty 2-D arrays")
    En = E / np.maximum(np.linalg.norm(E, axis=1, keepdims=True), 1e-300)
    Tn = T / np.maximum(np.linalg.norm(T, axis=1, keepdims=True), 1e-300)
    cos = En @ Tn.T
    order = np.dstack(np.unravel_index(np.argsort(-cos, axis=None), cos.shape))[0]
    used_e: set[int] = set()
    used_t: set[int] = set()
    out: list[tuple[int, int, float]] = []
    for ei, ti in order:
        ei, ti = int(ei), int(ti)
        if ei in used_e or ti in used_t:
            continue
        used_e.add(ei)
        used_t.add(ti)
        out.append((ei, ti, float(cos[ei, ti])))
        if len(used_e) == min(E.shape[0], T.shape[0]):
            break
    for ei in range(E.shape[0]):
        if ei not in used_e:
            out.append((ei, UNMATCHED, float("nan")))
    for ti in range(T.shape[0]):
        if ti not in used_t:
            out.append((UNMATCHED, ti, float("nan")))
    return out


def success_rate(records: Sequence[RunRecord], r2_threshold: float) -> float:
    """Fraction of records with ``r2 >= r2_threshold``."""
    if len(records) == 0:
        raise ValueError("success_rate of an empty record list is undefined")
    hits = sum(1 for rec in records if rec.r2 >= r2_threshold)
    return hits / len(records)
