"""Ground-truthed synthetic mixture generation.

Builds a non-negative, near-orthonormal component pool, draws sparse random
mixtures of it, and injects SNR-calibrated Gaussian noise.  Reproducibility
contract: the pool uses the RNG stream ``SeedSequence([seed, 0])`` and sample
``i`` (mixture draw followed by its noise draw) uses ``SeedSequence([seed, 1,
i])``, so per-sample generation is deterministic and independent of
scheduling order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .datamodel import ComponentBank, Dataset, GroundTruth, Spectrum


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the synthetic mixture generator."""

    n_components: int
    m_samples: int
    d: int = 512
    k_range: tuple[int, int] = (1, 4)
    c_range: tuple[float, float] = (1.0, 10.0)
    snr_db: Optional[float] = None
    seed: int = 0

    def __post_init__(self) -> None:
        k_min, k_max = self.k_range
        if not (1 <= k_min <= k_max <= self.n_components):
            raise ValueError(
                f"k_range {self.k_range} must satisfy 1 <= K_min <= K_max <= n_components"
            )
        if not self.c_range[0] < self.c_range[1]:
            raise ValueError(f"c_range {self.c_range} must be an increasing interval")
        if self.n_components > self.d:
            raise ValueError(
                f"n_components={self.n_components} exceeds d={self.d}; "
                "orthonormal pre-image rows require n <= d"
            )
        if self.m_samples < 1:
            raise ValueError("m_samples must be positive")


def make_component_pool(n: int, d: int, rng: np.random.Generator) -> ComponentBank:
    """Sample ``n`` unit-norm, non-negative component vectors of length ``d``.

    A random n-dimensional subspace basis is drawn by QR-orthonormalizing an
    i.i.d. standard-Gaussian matrix; each basis vector then passes through an
    element-wise absolute value, which preserves the unit L2 norm.  The
    resulting rows are non-negative and nearly mutually orthogonal (the
    absolute value raises pairwise cosines above zero; observed maxima at
    n=16, d=512 stay below ~0.75 across seeds).
    """
    if n > d:
        raise ValueError(f"cannot draw {n} orthonormal rows in dimension {d}")
    gauss = rng.standard_normal((d, n))
    q, _ = np.linalg.qr(gauss)
    return ComponentBank(np.abs(q.T))


def sample_mixture(
    bank: ComponentBank, cfg: SynthConfig, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, Spectrum]:
    """Draw one sparse mixture: selection mask, concentrations, clean signal.

    The component count k is uniform on the closed integer range ``k_range``;
    k distinct components are chosen uniformly; each receives a concentration
    uniform on ``[c_low, c_high)``.  The clean signal is the concentration-
    weighted sum of the selected component vectors.
    """
    if bank.n != cfg.n_components:
        raise ValueError(f"bank has {bank.n} components, config says {cfg.n_components}")
    k_min, k_max = cfg.k_range
    k = int(rng.integers(k_min, k_max + 1))
    idx = rng.choice(bank.n, size=k, replace=False)
    selection = np.zeros(bank.n, dtype=np.float64)
    selection[idx] = 1.0
    concentrations = np.zeros(bank.n, dtype=np.float64)
    concentrations[idx] = rng.uniform(cfg.c_range[0], cfg.c_range[1], size=k)
    clean = concentrations @ bank.vectors
    return selection, concentrations, Spectrum(clean)


def inject_noise(clean: Spectrum, snr_db: float, rng: np.random.Generator) -> Spectrum:
    """Add white Gaussian noise calibrated to the target SNR in dB.

    Per-sample calibration: the noise variance is ``sigma^2 = ||clean||^2 /
    (d * 10^(snr_db/10))`` so the expected noise energy ``d * sigma^2`` hits
    the target power ratio exactly for this one signal.  ``snr_db = inf`` is
    the noise-disabled sentinel and returns the input unchanged.
    """
    if math.isinf(snr_db) and snr_db > 0:
        return clean
    energy = float(np.dot(clean.values, clean.values))
    if energy == 0.0:
        raise ValueError("SNR undefined for a zero-norm signal")
    sigma2 = energy / (clean.d * 10.0 ** (snr_db / 10.0))
    noise = rng.normal(0.0, math.sqrt(sigma2), size=clean.d)
    return Spectrum(clean.values + noise)


def _pool_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0]))


def _sample_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1, index]))


def generate_dataset(cfg: SynthConfig) -> Dataset:
    """Generate a full ground-truthed dataset per the configuration."""
    bank = make_component_pool(cfg.n_components, cfg.d, _pool_rng(cfg.seed))
    mixtures = np.empty((cfg.m_samples, cfg.d), dtype=np.float64)
    selection = np.empty((cfg.m_samples, cfg.n_components), dtype=np.float64)
    concentrations = np.empty((cfg.m_samples, cfg.n_components), dtype=np.float64)
    for i in range(cfg.m_samples):
        rng = _sample_rng(cfg.seed, i)
        sel, conc, clean = sample_mixture(bank, cfg, rng)
        selection[i] = sel
        concentrations[i] = conc
        observed = clean if cfg.snr_db is None else inject_noise(clean, cfg.snr_db, rng)
        mixtures[i] = observed.values
    gt = GroundTruth(
        components=bank,
        concentrations=concentrations,
        selection=selection,
        k_range=cfg.k_range,
        c_range=cfg.c_range,
        seed=cfg.seed,
        snr_db=cfg.snr_db,
    )
    return Dataset(mixtures=mixtures, d=cfg.d, ground_truth=gt)
