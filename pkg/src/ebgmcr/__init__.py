"""Energy-based generative multivariate curve resolution.

A library and CLI for resolving mixed signals into a minimal set of source
components plus per-sample concentrations.  It ships three pillars:

* :mod:`ebgmcr.synthgen` builds ground-truthed synthetic mixture datasets
  with SNR-calibrated Gaussian noise.
* :mod:`ebgmcr.solver` trains the adaptive component-selection solver
  (energy-based gating, Gumbel-softmax relaxation, collapsed Langevin
  refinement, banded minimum-component checkpointing).
* :mod:`ebgmcr.baselines` provides NMF / alternating-least-squares
  factorizations plus a rank-search harness for benchmarking.
"""

from .datamodel import ComponentBank, Dataset, ResolvedSolution, load_dataset, save_dataset, validate
from .synthgen import SynthConfig, generate_dataset, inject_noise, make_component_pool, sample_mixture
from .solver import CheckpointBank, LossBreakdown, SolverConfig, SolverState, fit
from .metrics import RunRecord, match_components, nmse, r_squared, success_rate

__version__ = "0.1.0"

__all__ = [
    "ComponentBank",
    "Dataset",
    "ResolvedSolution",
    "load_dataset",
    "save_dataset",
    "validate",
    "SynthConfig",
    "generate_dataset",
    "inject_noise",
    "make_component_pool",
    "sample_mixture",
    "CheckpointBank",
    "LossBreakdown",
    "SolverConfig",
    "SolverState",
    "fit",
    "RunRecord",
    "match_components",
    "nmse",
    "r_squared",
    "success_rate",
    "__version__",
]
