"""The adaptive component-selection solver.

Composes the selection gate, the learnable component bank, and the
concentration predictor into a generating function, trains the whole stack
against observed mixtures, and tracks one rolling minimum-component
checkpoint per reconstruction-quality band.

Objective.  Per batch the training loss is::

    total = mse + lam * usage_cost + w_se * sel_energy + lam_amb * ambiguity

where ``mse`` is the mean squared entrywise reconstruction error,
``usage_cost`` the mean gate value (fraction of the pool in use),
``sel_energy`` the mean squared select/reject energy (taken before the
Langevin refinement), and ``ambiguity`` an RBF-kernel sum over active
component pairs.  The breakdown records the effective weights used, and the
composition identity holds exactly against those weights.

Schedule.  ``lam`` stays 0 until the first epoch whose evaluation nMSE drops
below ``nmse_gate``; from then on the multiplier follows ``min(lambda_cap,
0.95 + 0.05 / (err * usage))``.  Two schedule details matter for stable
dynamics and are deliberate (both are config fields):

* The error statistic fed to the multiplier formula is the dataset-total
  squared error (mean error times the entry count), keeping the formula's
  second term small against 0.95.  Feeding the mean error instead produces
  multipliers in the hundreds, which prune every component including true
  ones.
* The multiplier ramps in linearly over ``lambda_ramp_epochs`` after the
  gate opens.  Switching the full usage pressure on in one step transmits a
  coherent "all gates off" shock through the shared energy-network trunk
  that destroys the fit before the reconstruction term can defend the
  needed components.

The energy penalty weight is ``lambda_se * energy_coupling``, constant
throughout training.  The coupling (default 0.004, roughly 2/d) converts
the penalty to the same per-entry scale as the mean reconstruction error;
at coupling 1.0 the penalty's sign-coherent gradient dominates the noisy
reconstruction defense under adaptive-moment updates and collapses every
selection energy within a few hundred steps.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from .datamodel import ComponentBank, Dataset, ResolvedSolution
from .ebselect import (
    EnergyTensor,
    GateState,
    SgldConfig,
    anneal_temperature,
    draw_gumbel,
    eval_energies,
    gumbel_select_given,
    hard_select,
    make_gate,
)

DEFAULT_BANDS = (
    (0.97, 0.975),
    (0.975, 0.98),
    (0.98, 0.985),
    (0.985, 0.99),
    (0.99, 0.995),
    (0.995, 1.1),
)

_CONSTRAINT_OPS: dict[str, Callable[[torch.Tensor], torch.Tensor]] = {
    "identity": lambda x: x,
    "abs": torch.abs,
    "relu": torch.relu,
    "softplus": torch.nn.functional.softplus,
}

REPORT_COLUMNS = (
    "epoch",
    "r2",
    "mse",
    "nmse",
    "usage",
    "active_count",
    "mean_sel_energy",
    "lambda",
    "tau_g",
)


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-3


@dataclass(frozen=True)
class AblationToggles:
    """On/off switches for the individual objective terms."""

    sgld: bool = True
    usage_cost: bool = True
    min_energy: bool = True
    ambiguity: bool = True


@dataclass(frozen=True)
class SolverConfig:
    pool_size: int = 1024
    d: int = 512
    component_op: str = "abs"
    concentration_op: str = "abs"
    aggregator: str = "linear_sum"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    batch: int = 64
    lambda_se: float = 1.0
    lambda_amb: float = 1.0
    bands: tuple = DEFAULT_BANDS
    nmse_gate: float = 0.005
    energy_stop_fraction: float = 0.25
    max_epochs: int = 100_000
    kernel_bandwidth: float | str = "median"
    toggles: AblationToggles = field(default_factory=AblationToggles)
    lambda_cap: float = 1e4
    lambda_ramp_epochs: int = 1000
    energy_coupling: float = 0.004
    amb_after_latch: bool = False
    hidden: Optional[int] = None
    energy_head_scale: float = 0.0
    sgld_epsilon: float = 0.01
    sgld_steps: int = 5
    stop_window: int = 50
    stop_crossings: int = 6
    freeze_components: bool = False

    def __post_init__(self) -> None:
        if self.pool_size < 1:
            raise ValueError("pool_size must be >= 1")
        for lam in (self.lambda_se, self.lambda_amb):
            if lam < 0:
                raise ValueError("objective weights must be non-negative")
        if self.component_op not in _CONSTRAINT_OPS or self.concentration_op not in _CONSTRAINT_OPS:
            raise ValueError(f"constraint ops must be one of {sorted(_CONSTRAINT_OPS)}")
        if self.aggregator != "linear_sum":
            raise ValueError("the only shipped aggregator is 'linear_sum'")
        _check_bands(self.bands)


def _check_bands(bands: Sequence[tuple[float, float]]) -> None:
    """Bands must be disjoint, ascending, and cover [0.97, 1.1)."""
    if not bands:
        raise ValueError("bands must be non-empty")
    lo0 = bands[0][0]
    hi_prev = None
    for lo, hi in bands:
        if not lo < hi:
            raise ValueError(f"band ({lo}, {hi}) is empty")
        if hi_prev is not None and lo != hi_prev:
            raise ValueError(f"bands leave a gap or overlap at {lo}")
        hi_prev = hi
    if not (math.isclose(lo0, 0.97) and math.isclose(hi_prev, 1.1)):
        raise ValueError(f"bands must cover [0.97, 1.1), got [{lo0}, {hi_prev})")


@dataclass
class LossBreakdown:
    """One training step's objective terms and the weights applied to them."""

    mse: float
    usage_cost: float
    sel_energy: float
    ambiguity: float
    total: float
    lam: float
    lam_se: float
    lam_amb: float

    def composition_residual(self) -> float:
        return abs(
            self.total
            - (
                self.mse
                + self.lam * self.usage_cost
                + self.lam_se * self.sel_energy
                + self.lam_amb * self.ambiguity
            )
        )


@dataclass
class CheckpointEntry:
    params: dict
    usage: int
    r2: float
    epoch: int
    metrics: dict


class CheckpointBank:
    """One rolling minimum-component snapshot per reconstruction band."""

    def __init__(self, bands: Sequence[tuple[float, float]] = DEFAULT_BANDS):
        _check_bands(bands)
        self.bands = tuple(tuple(b) for b in bands)
        self.entries: dict[tuple[float, float], Optional[CheckpointEntry]] = {
            b: None for b in self.bands
        }
        self.report: list[dict] = []
        self.stop_reason: Optional[str] = None
        self.epochs_run: int = 0
        self.e_init: float = 0.0
        self.e_star: float = 0.0
        self.cfg: Optional[SolverConfig] = None

    def band_of(self, r2: float) -> Optional[tuple[float, float]]:
        for lo, hi in self.bands:
            if lo <= r2 < hi:
                return (lo, hi)
        return None

    @property
    def no_band_reached(self) -> bool:
        return all(e is None for e in self.entries.values())

    def populated(self) -> dict[tuple[float, float], CheckpointEntry]:
        return {b: e for b, e in self.entries.items() if e is not None}

    def best_at_least(self, r2_floor: float) -> Optional[CheckpointEntry]:
        """Minimum-usage entry among bands whose lower edge is >= r2_floor."""
        eligible = [
            e
            for (lo, _), e in self.entries.items()
            if e is not None and lo >= r2_floor - 1e-12
        ]
        if not eligible:
            return None
        return min(eligible, key=lambda e: e.usage)

    def summary(self) -> str:
        lines = []
        for (lo, hi), e in self.entries.items():
            if e is None:
                lines.append(f"band [{lo:g}, {hi:g}): empty")
            else:
                lines.append(
                    f"band [{lo:g}, {hi:g}): usage {e.usage}, r2 {e.r2:.5f}, epoch {e.epoch}"
                )
        return "\n".join(lines)


@dataclass
class SolverState:
    cfg: SolverConfig
    component_params: torch.Tensor
    gate: GateState
    conc_params: dict[str, torch.Tensor]
    optimizer: torch.optim.AdamW
    generator: torch.Generator
    lam: float = 0.0
    latched: bool = False
    latch_epoch: int = -1
    epoch: int = 0
    e_init: float = 0.0
    e_star: float = 0.0
    history: list[tuple[float, int]] = field(default_factory=list)

    def parameters(self) -> list[torch.Tensor]:
        params = [] if self.cfg.freeze_components else [self.component_params]
        return params + self.gate.parameters() + list(self.conc_params.values())

    def component_bank(self) -> torch.Tensor:
        return _CONSTRAINT_OPS[self.cfg.component_op](self.component_params)


class DivergenceError(RuntimeError):
    """Raised when the training loss stops being finite."""

    def __init__(self, breakdown: LossBreakdown):
        super().__init__(f"non-finite training loss: {breakdown}")
        self.breakdown = breakdown


@dataclass(frozen=True)
class FrozenDraws:
    """Pre-drawn stochastic inputs for one training step.

    Gradient tests freeze these so the loss is a deterministic function of
    the parameters; ordinary training draws them fresh per step.
    """

    gumbel: torch.Tensor
    sgld_select: Optional[torch.Tensor] = None
    sgld_reject: Optional[torch.Tensor] = None


def init_solver(cfg: SolverConfig, dataset: Dataset, seed: int) -> SolverState:
    """Build parameters and thresholds; deterministic per seed.

    Component parameters start uniform on [0, 1/sqrt(d)]; network weights use
    fan-in-scaled uniform initialization; the energy head starts at zero
    (initial selection probability exactly 0.5 per component) unless
    ``energy_head_scale`` overrides it.  The stop threshold is
    ``energy_stop_fraction`` times the mean squared selection energy over the
    full dataset at the initial temperature.
    """
    if dataset.d != cfg.d:
        raise ValueError(f"dataset d={dataset.d} but config d={cfg.d}")
    gen = torch.Generator()
    gen.manual_seed(seed)
    comp = torch.empty(cfg.pool_size, cfg.d, dtype=torch.float64)
    comp.uniform_(0.0, 1.0 / math.sqrt(cfg.d), generator=gen)
    comp.requires_grad_(not cfg.freeze_components)
    gate = make_gate(
        d=cfg.d,
        n_components=cfg.pool_size,
        hidden=cfg.hidden,
        head_scale=cfg.energy_head_scale,
        generator=gen,
        sgld=SgldConfig(
            epsilon=cfg.sgld_epsilon, steps=cfg.sgld_steps, enabled=cfg.toggles.sgld
        ),
    )
    h = cfg.d if cfg.hidden is None else cfg.hidden
    conc_params = {
        "w1": _fan_in(cfg.d, h, gen),
        "b1": torch.zeros(h, dtype=torch.float64, requires_grad=True),
        "w2": _fan_in(h, h, gen),
        "b2": torch.zeros(h, dtype=torch.float64, requires_grad=True),
        "w3": _fan_in(h, cfg.pool_size, gen),
        "b3": torch.zeros(cfg.pool_size, dtype=torch.float64, requires_grad=True),
    }
    opt_params = ([] if cfg.freeze_components else [comp]) + gate.parameters() + list(
        conc_params.values()
    )
    optimizer = torch.optim.AdamW(
        opt_params,
        lr=cfg.optimizer.lr,
        betas=(cfg.optimizer.beta1, cfg.optimizer.beta2),
        weight_decay=cfg.optimizer.weight_decay,
    )
    state = SolverState(
        cfg=cfg,
        component_params=comp,
        gate=gate,
        conc_params=conc_params,
        optimizer=optimizer,
        generator=gen,
    )
    with torch.no_grad():
        X = torch.as_tensor(dataset.mixtures, dtype=torch.float64)
        e = eval_energies(gate, X)
        state.e_init = float(torch.cat((e.select_e, e.reject_e), dim=1).pow(2).mean())
    state.e_star = cfg.energy_stop_fraction * state.e_init
    return state


def _fan_in(fan_in: int, fan_out: int, gen: torch.Generator) -> torch.Tensor:
    bound = 1.0 / math.sqrt(fan_in)
    w = torch.empty(fan_in, fan_out, dtype=torch.float64)
    w.uniform_(-bound, bound, generator=gen)
    w.requires_grad_(True)
    return w


def predict_concentrations(state: SolverState, batch: torch.Tensor) -> torch.Tensor:
    p = state.conc_params
    h = torch.tanh(batch @ p["w1"] + p["b1"])
    h = torch.tanh(h @ p["w2"] + p["b2"])
    return _CONSTRAINT_OPS[state.cfg.concentration_op](h @ p["w3"] + p["b3"])


def linear_sum_aggregate(
    gate_values: torch.Tensor, concentrations: torch.Tensor, components: torch.Tensor
) -> torch.Tensor:
    """The linear aggregator: X_g = (gate * C) @ S.

    Exactly additive over disjoint gated sets, which is the incremental
    property the generative formulation relies on.
    """
    return (gate_values * concentrations) @ components


def forward(
    state: SolverState,
    batch: torch.Tensor,
    training: bool,
    rng: Optional[torch.Generator] = None,
    draws: Optional[FrozenDraws] = None,
) -> dict:
    """One pass of the generating function.

    Training mode refines energies with the Langevin step (when enabled) and
    gates with Gumbel-softmax draws; evaluation mode uses the deterministic
    hard-selection probabilities.  ``draws`` overrides the stochastic inputs
    for reproducible gradient checks.
    """
    energies = eval_energies(state.gate, batch)
    if training:
        e_used = energies
        if state.gate.sgld.enabled:
            t_eps = state.gate.sgld.steps * state.gate.sgld.epsilon
            if t_eps > 0.0:
                if draws is not None:
                    ns, nr = draws.sgld_select, draws.sgld_reject
                else:
                    ns = torch.empty_like(energies.select_e).normal_(generator=rng)
                    nr = torch.empty_like(energies.reject_e).normal_(generator=rng)
                scale = math.sqrt(t_eps)
                e_used = EnergyTensor(
                    select_e=energies.select_e * (1.0 - t_eps) + scale * ns,
                    reject_e=energies.reject_e * (1.0 - t_eps) + scale * nr,
                )
        if draws is not None:
            gumbel = draws.gumbel
        else:
            gumbel = draw_gumbel((*e_used.select_e.shape, 2), rng)
        gate_values = gumbel_select_given(e_used, state.gate.tau_g, gumbel)
        delta = None
    else:
        delta, probs = hard_select(energies, state.gate.t_eval, state.gate.threshold)
        gate_values = probs
    conc = predict_concentrations(state, batch)
    comps = state.component_bank()
    x_g = linear_sum_aggregate(gate_values, conc, comps)
    return {
        "gate_values": gate_values,
        "energies": energies,
        "concentrations": conc,
        "reconstruction": x_g,
        "delta": delta,
    }


def usage_cost(gate_values: torch.Tensor) -> torch.Tensor:
    """Mean over the batch of (gate row sum / pool size)."""
    return gate_values.sum(dim=1).div(gate_values.shape[1]).mean()


def _bandwidth_sq2(sq_dists: torch.Tensor, spec: float | str) -> torch.Tensor:
    """Return 2*sigma_K^2 for the RBF kernel, detached from the graph."""
    if spec == "median":
        med = torch.median(sq_dists.detach())
        return torch.clamp(med, min=1e-12)
    return torch.tensor(2.0 * float(spec) ** 2, dtype=torch.float64)


def ambiguity_penalty(
    components: torch.Tensor,
    active_set: torch.Tensor | Sequence[int],
    bandwidth: float | str = "median",
) -> torch.Tensor:
    """RBF-kernel sum over unordered pairs of active components.

    ``sum_{i<j} exp(-||s_i - s_j||^2 / (2 sigma_K^2))`` over the active
    index set.  With the "median" rule, ``2 sigma_K^2`` is the detached
    median of the active pairwise squared distances.
    """
    idx = torch.as_tensor(active_set, dtype=torch.long)
    if idx.numel() <= 1:
        return torch.zeros((), dtype=torch.float64)
    s = components[idx]
    sq = torch.cdist(s, s, p=2.0).pow(2)
    iu = torch.triu_indices(idx.numel(), idx.numel(), offset=1)
    pair_sq = sq[iu[0], iu[1]]
    return torch.exp(-pair_sq / _bandwidth_sq2(pair_sq, bandwidth)).sum()


def effective_weights(state: SolverState) -> tuple[float, float, float]:
    """The (usage, energy, ambiguity) weights in force at the current epoch.

    The usage multiplier ramps linearly over ``lambda_ramp_epochs`` epochs
    after the nMSE gate opens (ramp 0 applies it at full strength
    immediately).  The energy penalty is constant throughout training: kept
    small by the coupling, it bounds the energies during formation and
    pruning without ever overpowering the reconstruction term.
    """
    cfg = state.cfg
    if state.latched:
        if cfg.lambda_ramp_epochs <= 0:
            ramp = 1.0
        else:
            ramp = min(1.0, (state.epoch - state.latch_epoch) / cfg.lambda_ramp_epochs)
    else:
        ramp = 0.0
    w_usage = state.lam * ramp if cfg.toggles.usage_cost else 0.0
    w_se = cfg.lambda_se * cfg.energy_coupling if cfg.toggles.min_energy else 0.0
    w_amb = cfg.lambda_amb if cfg.toggles.ambiguity else 0.0
    if cfg.amb_after_latch:
        # Deferred ambiguity: the pairwise penalty over a freshly
        # initialized pool dwarfs the reconstruction term and stalls the
        # fit, so optionally hold it at zero until the nMSE gate opens and
        # fade it in on the same ramp as the usage multiplier.
        w_amb *= ramp
    return w_usage, w_se, w_amb


def compute_loss(
    state: SolverState,
    batch: torch.Tensor,
    rng: Optional[torch.Generator] = None,
    draws: Optional[FrozenDraws] = None,
    weights: Optional[tuple[float, float, float]] = None,
) -> tuple[torch.Tensor, LossBreakdown]:
    """Training objective for one batch; returns (total tensor, breakdown).

    Disabled terms contribute identically zero to both the breakdown and the
    gradient.  The selection-energy term penalizes the evaluator's output
    before the Langevin refinement.  Ambiguity membership uses the detached
    gate values (>= 0.5), so the penalty differentiates through component
    vectors only.
    """
    cfg = state.cfg
    w_usage, w_se, w_amb = weights if weights is not None else effective_weights(state)
    out = forward(state, batch, training=True, rng=rng, draws=draws)
    mse_t = (batch - out["reconstruction"]).pow(2).mean()
    zero = torch.zeros((), dtype=torch.float64)

    if cfg.toggles.usage_cost:
        usage_t = usage_cost(out["gate_values"])
    else:
        usage_t = zero
    if cfg.toggles.min_energy:
        e = out["energies"]
        sel_t = torch.cat((e.select_e, e.reject_e), dim=1).pow(2).mean()
    else:
        sel_t = zero
    if cfg.toggles.ambiguity:
        active = (out["gate_values"].detach() >= 0.5).any(dim=0).nonzero().flatten()
        amb_t = ambiguity_penalty(state.component_bank(), active, cfg.kernel_bandwidth)
    else:
        amb_t = zero

    total = mse_t + w_usage * usage_t + w_se * sel_t + w_amb * amb_t
    breakdown = LossBreakdown(
        mse=float(mse_t.detach()),
        usage_cost=float(usage_t.detach()),
        sel_energy=float(sel_t.detach()),
        ambiguity=float(amb_t.detach()),
        total=float(total.detach()),
        lam=w_usage,
        lam_se=w_se,
        lam_amb=w_amb,
    )
    return total, breakdown


def train_step(
    state: SolverState, batch: torch.Tensor, rng: torch.Generator
) -> LossBreakdown:
    """One optimizer step on one batch; anneals the gate temperature once."""
    total, breakdown = compute_loss(state, batch, rng=rng)
    if not math.isfinite(breakdown.total):
        raise DivergenceError(breakdown)
    state.optimizer.zero_grad(set_to_none=True)
    total.backward()
    state.optimizer.step()
    state.gate.tau_g = anneal_temperature(state.gate.tau_g, state.gate.tau_min)
    return breakdown


def evaluate(state: SolverState, X: torch.Tensor) -> dict:
    """Full-dataset evaluation-mode metrics, detached from the graph.

    R-squared pools every entry about the global scalar mean of the observed
    matrix; nMSE divides the mean squared error by the mean squared observed
    entry; ``active_count`` counts components hard-selected for at least one
    sample; ``usage`` is the mean of the hard-selection matrix.
    """
    with torch.no_grad():
        out = forward(state, X, training=False)
        x_g = out["reconstruction"]
        delta = out["delta"]
        resid = (X - x_g).pow(2)
        mse = float(resid.mean())
        ss_res = float(resid.sum())
        ss_tot = float((X - X.mean()).pow(2).sum())
        msq = float(X.pow(2).mean())
        e = out["energies"]
        mean_sel_energy = float(torch.cat((e.select_e, e.reject_e), dim=1).pow(2).mean())
        return {
            "r2": 1.0 - ss_res / ss_tot,
            "mse": mse,
            "nmse": mse / msq,
            "usage": float(delta.mean()),
            "active_count": int(delta.any(dim=0).sum()),
            "mean_sel_energy": mean_sel_energy,
        }


def update_lambda(state: SolverState, eval_metrics: dict) -> SolverState:
    """Open the usage gate on the nMSE threshold; then apply the multiplier rule.

    The multiplier stays 0 until the first epoch with ``nmse < nmse_gate``;
    afterwards ``lam = min(lambda_cap, 0.95 + 0.05 / (mse * usage))`` where
    ``mse`` is whatever squared-error statistic the caller supplies (the fit
    loop passes the dataset-total squared error; see the module docstring)
    and ``usage`` is the evaluated usage fraction.  Degenerate denominators
    saturate at ``lambda_cap``.
    """
    cfg = state.cfg
    if not state.latched and eval_metrics["nmse"] < cfg.nmse_gate:
        state.latched = True
        state.latch_epoch = state.epoch
    if state.latched:
        err = eval_metrics["mse"]
        usage = eval_metrics["usage"]
        denom = err * usage
        if denom <= 0.0:
            state.lam = cfg.lambda_cap
        else:
            state.lam = min(cfg.lambda_cap, 0.95 + 0.05 / denom)
    return state


def snapshot_params(state: SolverState) -> dict:
    with torch.no_grad():
        return {
            "component_params": state.component_params.detach().clone(),
            "gate": {k: v.detach().clone() for k, v in state.gate.params.items()},
            "conc": {k: v.detach().clone() for k, v in state.conc_params.items()},
            "tau_g": state.gate.tau_g,
        }


def checkpoint_update(bank: CheckpointBank, state: SolverState, eval_metrics: dict) -> CheckpointBank:
    """Store the snapshot if its band is empty or it uses fewer components."""
    band = bank.band_of(eval_metrics["r2"])
    if band is None:
        return bank
    entry = bank.entries[band]
    active = eval_metrics["active_count"]
    if entry is None or active < entry.usage:
        bank.entries[band] = CheckpointEntry(
            params=snapshot_params(state),
            usage=active,
            r2=eval_metrics["r2"],
            epoch=state.epoch,
            metrics=dict(eval_metrics),
        )
    return bank


def count_median_crossings(series: Sequence[float]) -> int:
    """Sign changes of (x - median(series)), zeros skipped."""
    arr = np.asarray(series, dtype=np.float64)
    med = float(np.median(arr))
    signs = np.sign(arr - med)
    signs = signs[signs != 0]
    if signs.size < 2:
        return 0
    return int(np.count_nonzero(np.diff(signs) != 0))


def should_stop(
    history: Sequence[tuple[float, int]],
    e_star: float,
    window: int = 50,
    min_crossings: int = 6,
    epoch: int = 0,
    max_epochs: int = 100_000,
) -> bool:
    """Termination rule: low selection energy plus sustained count oscillation.

    True when the latest mean selection energy is below ``e_star`` and the
    active-count series crosses its window median at least ``min_crossings``
    times over the last ``window`` evaluations; unconditionally true at the
    epoch budget.  A degenerate ``e_star == 0`` (zero-initialized energies)
    replaces the energy condition with an absolute 1e-8 threshold so the
    check cannot fire trivially at initialization.
    """
    if epoch + 1 >= max_epochs:
        return True
    if len(history) < window:
        return False
    energy = history[-1][0]
    threshold = e_star if e_star > 0.0 else 1e-8
    if energy >= threshold:
        return False
    counts = [h[1] for h in history[-window:]]
    return count_median_crossings(counts) >= min_crossings


def fit(cfg: SolverConfig, dataset: Dataset, seed: int) -> CheckpointBank:
    """Run the full training loop; returns the checkpoint bank.

    Per epoch: shuffled minibatch steps, then one evaluation feeding the
    multiplier schedule, the checkpoint rule, and the termination check.  The
    returned bank carries the per-epoch report rows, the stop reason, and the
    energy thresholds; ``bank.no_band_reached`` marks runs that never entered
    any band.
    """
    state = init_solver(cfg, dataset, seed)
    bank = CheckpointBank(cfg.bands)
    bank.cfg = cfg
    bank.e_init = state.e_init
    bank.e_star = state.e_star
    X = torch.as_tensor(dataset.mixtures, dtype=torch.float64)
    m = X.shape[0]
    batch_size = max(1, min(cfg.batch, m))
    n_entries = float(X.numel())
    stop_reason = "max_epochs"
    for epoch in range(cfg.max_epochs):
        perm = torch.randperm(m, generator=state.generator)
        for start in range(0, m, batch_size):
            idx = perm[start : start + batch_size]
            train_step(state, X[idx], state.generator)
        metrics = evaluate(state, X)
        update_lambda(
            state,
            {
                "nmse": metrics["nmse"],
                "mse": metrics["mse"] * n_entries,
                "usage": metrics["usage"],
            },
        )
        checkpoint_update(bank, state, metrics)
        state.history.append((metrics["mean_sel_energy"], metrics["active_count"]))
        w_usage, _, _ = effective_weights(state)
        bank.report.append(
            {
                "epoch": epoch,
                "r2": metrics["r2"],
                "mse": metrics["mse"],
                "nmse": metrics["nmse"],
                "usage": metrics["usage"],
                "active_count": metrics["active_count"],
                "mean_sel_energy": metrics["mean_sel_energy"],
                "lambda": w_usage,
                "tau_g": state.gate.tau_g,
            }
        )
        state.epoch = epoch + 1
        if cfg.toggles.min_energy and should_stop(
            state.history,
            state.e_star,
            window=cfg.stop_window,
            min_crossings=cfg.stop_crossings,
            epoch=epoch,
            max_epochs=cfg.max_epochs,
        ):
            stop_reason = "energy" if epoch + 1 < cfg.max_epochs else "max_epochs"
            break
    bank.stop_reason = stop_reason
    bank.epochs_run = state.epoch
    return bank


def _state_from_snapshot(cfg: SolverConfig, snap: dict) -> SolverState:
    """Rebuild a frozen, evaluation-only state from snapshot parameters."""
    gate = GateState(
        params={k: v.clone() for k, v in snap["gate"].items()},
        n_components=cfg.pool_size,
        tau_g=snap.get("tau_g", 0.4) if snap.get("tau_g", 0.4) >= 0.4 else 0.4,
        sgld=SgldConfig(enabled=False),
    )
    comp = snap["component_params"].clone()
    state = SolverState(
        cfg=cfg,
        component_params=comp,
        gate=gate,
        conc_params={k: v.clone() for k, v in snap["conc"].items()},
        optimizer=torch.optim.AdamW([comp], lr=cfg.optimizer.lr),
        generator=torch.Generator(),
    )
    return state


def extract_solution(
    bank: CheckpointBank,
    band: tuple[float, float],
    dataset: Dataset,
) -> ResolvedSolution:
    """Materialize the retained components and concentrations of one band."""
    if bank.cfg is None:
        raise ValueError("checkpoint bank carries no solver config")
    cfg = bank.cfg
    band = tuple(band)
    entry = bank.entries.get(band)
    if entry is None:
        populated = bank.populated()
        if populated:
            nearest = min(populated, key=lambda b: abs(b[0] - band[0]))
            raise ValueError(f"band {band} is empty; nearest populated band is {nearest}")
        raise ValueError(f"band {band} is empty; no band was reached")
    state = _state_from_snapshot(cfg, entry.params)
    X = torch.as_tensor(dataset.mixtures, dtype=torch.float64)
    with torch.no_grad():
        out = forward(state, X, training=False)
        delta = out["delta"]
        active = delta.any(dim=0).nonzero().flatten()
        comps = state.component_bank()[active]
        conc = (out["concentrations"] * delta)[:, active]
    return ResolvedSolution(
        active_components=ComponentBank(comps.numpy()),
        concentrations=conc.numpy(),
        metrics=dict(entry.metrics),
    )
