"""Single-step Markov transition kernels for compartment-constrained chains.

Each step mutates only its own chain state and counter row, so chains can
run concurrently without sharing mutable state.  Cross-compartment
proposals never move the chain; they add to the transition counters
instead, fractionally (by the Metropolis acceptance probability) whenever
the kernel exposes one, which lowers the counter variance at no cost.

Hamiltonian trajectories follow the gradient of the weight-unadjusted
density, so the drift stays continuous across compartment boundaries;
compartment weights enter only through the acceptance probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import NonFiniteDensity
from .models import Ladder, Partition, TemperedTarget, WeightTable


@dataclass
class ChainState:
    """Position, compartment, ladder level, and cached log densities.

    ``log_gamma`` and ``log_q`` cache the target and base log densities at
    ``x``; Metropolis and temperature moves read them instead of
    re-evaluating.  Kernels that never touch densities (the generic draw
    wrapper) leave them as NaN.
    """

    x: object
    compartment: int
    level: int = 0
    log_gamma: float = math.nan
    log_q: float = 0.0


def make_chain_state(
    x, partition: Partition, target: Optional[TemperedTarget] = None, level: int = 0
) -> ChainState:
    state = ChainState(x=x, compartment=partition.region(x), level=level)
    if target is not None:
        lg, lq = target.log_parts(x)
        if not (math.isfinite(lg) and (target.base is None or math.isfinite(lq))):
            raise NonFiniteDensity(x, (lg, lq))
        state.log_gamma = lg
        state.log_q = lq
    return state


class CounterMatrix:
    """Fractional transition counts from one source cell to its reachable cells.

    Destinations are stored sparsely: same-level moves can land in any other
    compartment, temperature moves only one level up or down.  ``counts``
    is indexed by position in ``dest_cells`` (flat ``k * L + i`` indices).
    """

    __slots__ = ("source_cell", "dest_cells", "counts", "steps_taken", "_state_slot", "_temp_slot")

    def __init__(self, source_cell: int, dest_cells, state_slots: dict, temp_slots: dict):
        self.source_cell = int(source_cell)
        self.dest_cells = tuple(int(c) for c in dest_cells)
        self.counts = np.zeros(len(self.dest_cells))
        self.steps_taken = 0
        self._state_slot = dict(state_slots)
        self._temp_slot = dict(temp_slots)

    @classmethod
    def single_level(cls, compartment: int, n_compartments: int) -> "CounterMatrix":
        dests = [j for j in range(n_compartments) if j != compartment]
        slots = {j: pos for pos, j in enumerate(dests)}
        return cls(compartment, dests, slots, {})

    @classmethod
    def augmented(cls, level: int, compartment: int, n_levels: int, n_compartments: int) -> "CounterMatrix":
        source = level * n_compartments + compartment
        dests = []
        state_slots = {}
        temp_slots = {}
        for j in range(n_compartments):
            if j != compartment:
                state_slots[j] = len(dests)
                dests.append(level * n_compartments + j)
        for k2 in (level - 1, level + 1):
            if 0 <= k2 < n_levels:
                temp_slots[k2] = len(dests)
                dests.append(k2 * n_compartments + compartment)
        return cls(source, dests, state_slots, temp_slots)

    def add_state(self, compartment: int, amount: float) -> None:
        assert 0.0 <= amount <= 1.0 + 1e-12
        self.counts[self._state_slot[compartment]] += amount

    def add_temperature(self, level: int, amount: float) -> None:
        assert 0.0 <= amount <= 1.0 + 1e-12
        self.counts[self._temp_slot[level]] += amount

    def reset(self) -> None:
        self.counts[:] = 0.0
        self.steps_taken = 0

    def snapshot(self) -> np.ndarray:
        return self.counts.copy()


@dataclass
class ChainDiagnostics:
    """Per-chain accounting emitted in run reports."""

    steps: int = 0
    state_proposals: int = 0
    state_accepts: int = 0
    cross_increments: int = 0
    temp_proposals: int = 0
    temp_reflections: int = 0
    temp_ratio_sum: float = 0.0
    divergences: int = 0
    leapfrog_steps: int = 0
    step_halvings: int = 0

    @property
    def acceptance_rate(self) -> float:
        return self.state_accepts / self.state_proposals if self.state_proposals else math.nan

    @property
    def mean_temperature_ratio(self) -> float:
        return self.temp_ratio_sum / self.temp_proposals if self.temp_proposals else math.nan

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "state_proposals": self.state_proposals,
            "state_accepts": self.state_accepts,
            "acceptance_rate": self.acceptance_rate,
            "cross_increments": self.cross_increments,
            "temp_proposals": self.temp_proposals,
            "temp_reflections": self.temp_reflections,
            "mean_temperature_ratio": self.mean_temperature_ratio,
            "divergences": self.divergences,
            "leapfrog_steps": self.leapfrog_steps,
            "step_halvings": self.step_halvings,
        }


@dataclass(frozen=True)
class ProposalKernel:
    """Proposal sampler plus its density ratio for Metropolis corrections.

    ``log_density_ratio(x_new, x_old)`` must return
    ``log m(x_old; x_new) - log m(x_new; x_old)``; ``None`` declares the
    proposal symmetric.
    """

    sample: Callable[[np.random.Generator, np.ndarray], np.ndarray]
    log_density_ratio: Optional[Callable[[np.ndarray, np.ndarray], float]] = None


@dataclass(frozen=True)
class GaussianRandomWalk:
    scale: float

    def propose(self, rng: np.random.Generator, x: np.ndarray) -> np.ndarray:
        return x + self.scale * rng.standard_normal(x.shape[0])

    def as_proposal(self) -> ProposalKernel:
        return ProposalKernel(sample=self.propose, log_density_ratio=None)


@dataclass(frozen=True)
class HmcSettings:
    """Leapfrog step size and trajectory length; momenta are standard normal."""

    step_size: float
    n_leapfrog: int = 10

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.n_leapfrog < 0:
            raise ValueError("n_leapfrog must be nonnegative")


def leapfrog(grad: Callable, x: np.ndarray, rho: np.ndarray, step_size: float, n_steps: int):
    """Volume-preserving, time-reversible integrator of Hamiltonian dynamics."""
    if n_steps == 0:
        return x.copy(), rho.copy()
    eps = step_size
    rho = rho + (0.5 * eps) * grad(x)
    x = x + eps * rho
    for _ in range(n_steps - 1):
        rho = rho + eps * grad(x)
        x = x + eps * rho
    rho = rho + (0.5 * eps) * grad(x)
    return x, rho


def _bad(value: float) -> bool:
    return math.isnan(value) or value == math.inf


def generic_constrained_step(
    state: ChainState,
    counters: CounterMatrix,
    global_kernel: Callable[[np.random.Generator, object], object],
    partition: Partition,
    rng: np.random.Generator,
    diag: ChainDiagnostics,
) -> None:
    """One constrained step of an arbitrary global kernel.

    The caller guarantees the kernel is reversible with respect to the
    weight-adjusted target.  Draws landing in a foreign compartment hold
    the chain in place and add one to that compartment's counter.
    """
    draw = global_kernel(rng, state.x)
    j = partition.region(draw)
    diag.state_proposals += 1
    if j == state.compartment:
        state.x = draw
        diag.state_accepts += 1
    else:
        counters.add_state(j, 1.0)
        diag.cross_increments += 1


def mh_constrained_step(
    state: ChainState,
    counters: CounterMatrix,
    target: TemperedTarget,
    partition: Partition,
    log_w: np.ndarray,
    proposal: ProposalKernel,
    rng: np.random.Generator,
    diag: ChainDiagnostics,
) -> None:
    """Metropolis-Hastings step with fractional cross-compartment counters.

    Same-compartment candidates go through the usual accept/reject.  A
    candidate in compartment ``j != i`` leaves the state unchanged and adds
    the acceptance probability (including the ``w_j / w_i`` factor) to the
    ``i -> j`` counter; no accept decision is ever made for it.
    """
    x = state.x
    cand = proposal.sample(rng, x)
    lg1, lq1 = target.log_parts(cand)
    if _bad(lg1) or _bad(lq1):
        raise NonFiniteDensity(cand, (lg1, lq1))
    log_ratio = target.combine(lg1, lq1) - target.combine(state.log_gamma, state.log_q)
    if proposal.log_density_ratio is not None:
        log_ratio += proposal.log_density_ratio(cand, x)
    j = partition.region(cand)
    diag.state_proposals += 1
    if j == state.compartment:
        if log_ratio >= 0.0 or rng.random() < math.exp(log_ratio):
            state.x = cand
            state.log_gamma = lg1
            state.log_q = lq1
            diag.state_accepts += 1
    else:
        log_alpha = log_ratio + log_w[j] - log_w[state.compartment]
        counters.add_state(j, math.exp(min(0.0, log_alpha)))
        diag.cross_increments += 1


def hmc_constrained_step(
    state: ChainState,
    counters: CounterMatrix,
    target: TemperedTarget,
    partition: Partition,
    log_w: np.ndarray,
    settings: HmcSettings,
    rng: np.random.Generator,
    diag: ChainDiagnostics,
) -> None:
    """Hamiltonian step with weight-aware acceptance.

    A trajectory whose endpoint position, momentum, or log density is
    non-finite is treated as divergent: probability zero, no counter
    change, one divergence logged.
    """
    x = state.x
    rho = rng.standard_normal(x.shape[0])
    kinetic0 = 0.5 * float(rho @ rho)
    if target.trajectory is not None:
        x1, rho1 = target.trajectory(x, rho, settings.step_size, settings.n_leapfrog)
    else:
        x1, rho1 = leapfrog(target.grad_log_density, x, rho, settings.step_size, settings.n_leapfrog)
    diag.leapfrog_steps += settings.n_leapfrog
    diag.state_proposals += 1
    if not (np.all(np.isfinite(x1)) and np.all(np.isfinite(rho1))):
        diag.divergences += 1
        return
    lg1, lq1 = target.log_parts(x1)
    log_dens1 = target.combine(lg1, lq1)
    if not math.isfinite(log_dens1):
        diag.divergences += 1
        return
    log_dens0 = target.combine(state.log_gamma, state.log_q)
    delta_h = (log_dens1 - 0.5 * float(rho1 @ rho1)) - (log_dens0 - kinetic0)
    j = partition.region(x1)
    if j == state.compartment:
        if delta_h >= 0.0 or rng.random() < math.exp(delta_h):
            state.x = x1
            state.log_gamma = lg1
            state.log_q = lq1
            diag.state_accepts += 1
    else:
        log_alpha = delta_h + log_w[j] - log_w[state.compartment]
        counters.add_state(j, math.exp(min(0.0, log_alpha)))
        diag.cross_increments += 1


def temperature_move(
    state: ChainState,
    counters: CounterMatrix,
    weights: WeightTable,
    ladder: Ladder,
    rng: np.random.Generator,
    diag: ChainDiagnostics,
) -> Optional[tuple[str, float]]:
    """Propose a one-level temperature shift; the position never changes.

    Proposals reflected at the ladder ends (k' = k) touch nothing: a
    self-transition increment would be overwritten by the diagonal
    completion anyway.  Otherwise the capped acceptance probability is
    added to the ``(k, i) -> (k', i)`` counter.  Returns the direction and
    the uncapped log Metropolis ratio for tuning, or ``None`` on
    reflection.
    """
    k = state.level
    top = ladder.top
    dk = 1 if rng.random() < 0.5 else -1
    k2 = min(max(k + dk, 0), top)
    if k2 == k:
        diag.temp_reflections += 1
        return None
    i = state.compartment
    log_alpha = float(weights.log_w[k2, i] - weights.log_w[k, i]) + (
        float(ladder.betas[k2]) - float(ladder.betas[k])
    ) * (state.log_gamma - state.log_q)
    alpha = math.exp(min(0.0, log_alpha))
    counters.add_temperature(k2, alpha)
    diag.temp_proposals += 1
    diag.temp_ratio_sum += alpha
    return ("up" if k2 > k else "down", log_alpha)
