"""Energy-based adaptive selection gate.

Maps a batch of signals to per-component select/reject energies through a
small fully connected network, converts energies to soft gate values with the
Gumbel-softmax reparameterization during training, refines energies with a
collapsed Langevin (shrink-plus-noise) step, and produces hard deterministic
selections in evaluation mode.

Convention: logits are negative energies, so the component with the lower
select energy is the more probable selection.  All tensors are
double-precision torch tensors; randomness flows only through explicitly
passed ``torch.Generator`` objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch

TAU_INIT = 1.0
TAU_MIN = 0.4
T_EVAL = 0.01
SELECT_THRESHOLD = 0.9


@dataclass
class SgldConfig:
    """Collapsed Langevin refinement parameters."""

    epsilon: float = 0.01
    steps: int = 5
    enabled: bool = True

    def __post_init__(self) -> None:
        if self.epsilon < 0 or self.steps < 0:
            raise ValueError("sgld epsilon and steps must be non-negative")


@dataclass
class GateState:
    """Energy evaluator parameters plus gating temperatures.

    ``params`` holds the weights of the evaluator network (input dimension d,
    two hidden layers, output 2N energies per signal).  ``tau_g`` is the
    current Gumbel temperature, annealed once per minibatch toward
    ``tau_min``; ``t_eval`` is the deterministic evaluation temperature.
    """

    params: dict[str, torch.Tensor]
    n_components: int
    tau_g: float = TAU_INIT
    tau_min: float = TAU_MIN
    t_eval: float = T_EVAL
    threshold: float = SELECT_THRESHOLD
    sgld: SgldConfig = field(default_factory=SgldConfig)

    def __post_init__(self) -> None:
        if not (0 < self.tau_min <= self.tau_g <= TAU_INIT):
            raise ValueError(f"tau_g={self.tau_g} outside [{self.tau_min}, {TAU_INIT}]")

    def parameters(self) -> list[torch.Tensor]:
        return list(self.params.values())


@dataclass(frozen=True)
class EnergyTensor:
    """Per-component select/reject energies for a batch of signals."""

    select_e: torch.Tensor
    reject_e: torch.Tensor

    def __post_init__(self) -> None:
        if self.select_e.shape != self.reject_e.shape:
            raise ValueError("select and reject energy shapes differ")


def make_gate(
    d: int,
    n_components: int,
    hidden: Optional[int] = None,
    head_scale: float = 0.0,
    generator: Optional[torch.Generator] = None,
    sgld: Optional[SgldConfig] = None,
) -> GateState:
    """Initialize a gate: fan-in-uniform hidden layers, zero-initialized head.

    A zero head makes every initial select/reject energy 0, hence every
    initial selection probability exactly 0.5 (symmetric start).
    ``head_scale > 0`` switches the head to uniform entries of magnitude
    ``head_scale / sqrt(hidden)`` for experiments needing nonzero initial
    energies.
    """
    h = d if hidden is None else hidden
    params = {
        "w1": _fan_in_uniform(d, h, generator),
        "b1": torch.zeros(h, dtype=torch.float64),
        "w2": _fan_in_uniform(h, h, generator),
        "b2": torch.zeros(h, dtype=torch.float64),
        "w3": _head_init(h, 2 * n_components, head_scale, generator),
        "b3": torch.zeros(2 * n_components, dtype=torch.float64),
    }
    for p in params.values():
        p.requires_grad_(True)
    return GateState(
        params=params,
        n_components=n_components,
        sgld=sgld if sgld is not None else SgldConfig(),
    )


def _fan_in_uniform(fan_in: int, fan_out: int, generator: Optional[torch.Generator]) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    w = torch.empty(fan_in, fan_out, dtype=torch.float64)
    w.uniform_(-bound, bound, generator=generator)
    return w


def _head_init(fan_in: int, fan_out: int, scale: float, generator: Optional[torch.Generator]) -> torch.Tensor:
    if scale == 0.0:
        return torch.zeros(fan_in, fan_out, dtype=torch.float64)
    bound = scale / math.sqrt(fan_in)
    w = torch.empty(fan_in, fan_out, dtype=torch.float64)
    w.uniform_(-bound, bound, generator=generator)
    return w


def eval_energies(gate: GateState, batch: torch.Tensor) -> EnergyTensor:
    """Run the evaluator network: batch of signals to (select, reject) energies."""
    p = gate.params
    if batch.ndim != 2 or batch.shape[1] != p["w1"].shape[0]:
        raise ValueError(
            f"batch shape {tuple(batch.shape)} incompatible with input dim {p['w1'].shape[0]}"
        )
    h = torch.tanh(batch @ p["w1"] + p["b1"])
    h = torch.tanh(h @ p["w2"] + p["b2"])
    e = (h @ p["w3"] + p["b3"]).reshape(batch.shape[0], gate.n_components, 2)
    return EnergyTensor(select_e=e[:, :, 0], reject_e=e[:, :, 1])


def sgld_refine(
    e: EnergyTensor, gate: GateState, rng: torch.Generator
) -> EnergyTensor:
    """Collapsed Langevin step on the energies.

    With the quadratic energy surface ``||e||^2`` (gradient ``2e``), T steps
    of Langevin dynamics with step scale epsilon collapse to the affine
    update ``e' = e * (1 - T*eps) + sqrt(T*eps) * eta`` with standard-normal
    eta.  The noise enters the downstream computation graph, so gradients
    flow through the deterministic part.
    """
    if not gate.sgld.enabled:
        raise ValueError("sgld_refine called with sgld disabled")
    t_eps = gate.sgld.steps * gate.sgld.epsilon
    if t_eps == 0.0:
        return e
    noise_s = torch.empty_like(e.select_e).normal_(generator=rng)
    noise_r = torch.empty_like(e.reject_e).normal_(generator=rng)
    scale = math.sqrt(t_eps)
    return EnergyTensor(
        select_e=e.select_e * (1.0 - t_eps) + scale * noise_s,
        reject_e=e.reject_e * (1.0 - t_eps) + scale * noise_r,
    )


def draw_gumbel(shape, rng: torch.Generator) -> torch.Tensor:
    """Standard Gumbel(0,1) draws of the given shape (two-class trailing axis)."""
    u = torch.empty(*shape, dtype=torch.float64).uniform_(generator=rng)
    u.clamp_(1e-12, 1.0 - 1e-12)
    return -torch.log(-torch.log(u))


def gumbel_select_given(e: EnergyTensor, tau_g: float, gumbel: torch.Tensor) -> torch.Tensor:
    """Gate values from fixed Gumbel noise: softmax select coordinate.

    ``gumbel`` has shape (batch, N, 2).  Deterministic given the noise, and
    differentiable with respect to the energies; used directly by gradient
    tests with frozen draws.
    """
    if tau_g <= 0:
        raise ValueError("tau_g must be positive")
    logits = torch.stack((-e.select_e, -e.reject_e), dim=-1)
    return torch.softmax((logits + gumbel) / tau_g, dim=-1)[..., 0]


def gumbel_select(e: EnergyTensor, tau_g: float, rng: torch.Generator) -> torch.Tensor:
    """Soft gate values in [0,1] via the Gumbel-softmax reparameterization."""
    gumbel = draw_gumbel((*e.select_e.shape, 2), rng)
    return gumbel_select_given(e, tau_g, gumbel)


def hard_select(
    e: EnergyTensor, t_eval: float, threshold: float = SELECT_THRESHOLD
) -> tuple[torch.Tensor, torch.Tensor]:
    """Deterministic evaluation-mode selection.

    Noiseless two-class softmax at temperature ``t_eval`` (no Gumbel draws);
    the select probability is ``sigmoid((reject_e - select_e)/t_eval)`` and
    the hard decision is ``probs >= threshold``.  Invariant to adding any
    constant to both energy planes.
    """
    if t_eval <= 0:
        raise ValueError("t_eval must be positive")
    probs = torch.sigmoid((e.reject_e - e.select_e) / t_eval)
    delta = (probs >= threshold).to(torch.float64)
    return delta, probs


def anneal_temperature(tau_g: float, tau_min: float = TAU_MIN, decay: float = 0.999) -> float:
    """One per-minibatch annealing step: ``max(tau_min, decay * tau_g)``."""
    return max(tau_min, decay * tau_g)
