"""Drives parallel constrained chains and recombines their estimates.

Each compartment gets one chain built from the same global kernel; the
cross-compartment rates they record are row-normalized into a stochastic
matrix whose stationary left eigenvector recovers the compartment
probabilities.  Chains run concurrently with no shared mutable state and
per-chain seeded streams, so results are bit-identical for a fixed master
seed regardless of worker count or scheduling.
"""

from __future__ import annotations

import os
import pickle
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import ChainEscaped
from .kernels import (
    ChainDiagnostics,
    ChainState,
    CounterMatrix,
    HmcSettings,
    ProposalKernel,
    generic_constrained_step,
    hmc_constrained_step,
    make_chain_state,
    mh_constrained_step,
)
from .models import Partition, TargetModel, TemperedTarget, WeightTable
from .stationary import (
    StochasticMatrix,
    compartment_probabilities,
    connectivity_check,
    default_cell_labels,
    stationary_distribution,
)
from .streams import RUN, substream


@dataclass(frozen=True)
class GenericKernel:
    """A caller-supplied draw function, reversible w.r.t. the weighted target."""

    sample: Callable[[np.random.Generator, object], object]


@dataclass(frozen=True)
class MhKernel:
    proposal: ProposalKernel


@dataclass(frozen=True)
class HmcKernel:
    settings: HmcSettings


KernelChoice = Union[GenericKernel, MhKernel, HmcKernel]


def as_h_tuple(h) -> tuple:
    """Normalize one callable or a sequence of callables to a tuple."""
    if callable(h):
        return (h,)
    return tuple(h)


def evaluate_h(h_fns: tuple, x) -> np.ndarray:
    parts = [np.atleast_1d(np.asarray(fn(x), dtype=float)) for fn in h_fns]
    return parts[0] if len(parts) == 1 else np.concatenate(parts)


@dataclass(frozen=True)
class ModularRunSpec:
    """Inputs of a single-level run: one constrained chain per compartment.

    ``n_steps`` and ``burn_in`` may be scalars or per-compartment
    sequences; ``burn_in`` defaults to 10% of the chain length.  Counters
    accumulate over post-burn-in steps only, with matching denominator.
    Each chain must start inside its own compartment.
    """

    model: TargetModel
    partition: Partition
    kernel: KernelChoice
    n_steps: Union[int, Sequence[int]]
    initial_points: Sequence
    h: object
    seed: int = 0
    burn_in: Union[int, Sequence[int], None] = None
    weights: Optional[WeightTable] = None
    snapshot_stride: int = 10
    store_states: bool = False
    max_workers: Optional[int] = None

    def n_for(self, i: int) -> int:
        if np.ndim(self.n_steps) == 0:
            return int(self.n_steps)
        return int(self.n_steps[i])

    def burn_in_for(self, i: int) -> int:
        if self.burn_in is None:
            return self.n_for(i) // 10
        if np.ndim(self.burn_in) == 0:
            return int(self.burn_in)
        return int(self.burn_in[i])

    def weight_table(self) -> WeightTable:
        if self.weights is not None:
            return self.weights
        return WeightTable.uniform(1, self.partition.n_compartments)


@dataclass(frozen=True)
class CellCounterData:
    """Counter history of one chain: totals plus block-boundary snapshots."""

    source_cell: int
    dest_cells: tuple[int, ...]
    counts: np.ndarray
    snapshots: np.ndarray
    steps: int
    snapshot_stride: int


@dataclass(frozen=True)
class ChainResult:
    cell: int
    h_trace: np.ndarray
    counters: CellCounterData
    diagnostics: ChainDiagnostics
    states: Optional[np.ndarray] = None
    temp_log_ratios_up: Optional[np.ndarray] = None
    temp_log_ratios_down: Optional[np.ndarray] = None


@dataclass(frozen=True)
class ModularEstimate:
    """Everything a run produced, retained for reporting and SE estimation."""

    q_hat: StochasticMatrix
    p_hat: np.ndarray
    compartment_probs: np.ndarray
    compartment_means: np.ndarray
    pi_h: np.ndarray
    level: int
    n_levels: int
    n_compartments: int
    weights: WeightTable
    h_traces: dict
    counters: dict
    diagnostics: dict
    seed: int
    snapshot_stride: int
    ladder: Optional[object] = None
    states: dict = field(default_factory=dict)

    def diagnostics_dict(self) -> dict:
        return {str(cell): d.to_dict() for cell, d in sorted(self.diagnostics.items())}


def _validate_initial_point(partition: Partition, x, i: int) -> None:
    actual = partition.region(x)
    if actual != i:
        raise ValueError(
            f"initial point for compartment {i} lies in compartment {actual}"
        )


def run_constrained_chain(spec: ModularRunSpec, i: int, rng=None) -> ChainResult:
    """Run the chain constrained to compartment ``i``.

    Returns the post-burn-in trace of the test functions together with the
    fractional counter row (plus its block snapshots) over post-burn-in
    steps.
    """
    if rng is None:
        rng = substream(spec.seed, RUN, 0, 0, i)
    partition = spec.partition
    n_comp = partition.n_compartments
    n = spec.n_for(i)
    burn = spec.burn_in_for(i)
    if not n > burn >= 0:
        raise ValueError("need n_steps > burn_in >= 0")
    x0 = spec.initial_points[i]
    _validate_initial_point(partition, x0, i)

    kernel = spec.kernel
    log_w = spec.weight_table().row(0)
    diag = ChainDiagnostics()
    counters = CounterMatrix.single_level(i, n_comp)
    h_fns = as_h_tuple(spec.h)

    if isinstance(kernel, GenericKernel):
        state = make_chain_state(x0, partition)
        target = None
    elif isinstance(kernel, HmcKernel):
        from .fastpath import resolve_state_target

        target = resolve_state_target(spec.model, None, 1.0)
        state = make_chain_state(x0, partition, target)
    else:
        target = TemperedTarget(model=spec.model)
        state = make_chain_state(x0, partition, target)

    n_eff = n - burn
    first = evaluate_h(h_fns, state.x)
    h_trace = np.empty((n_eff, first.size))
    states = np.empty((n_eff,) + np.shape(state.x)) if spec.store_states else None
    stride = max(1, int(spec.snapshot_stride))
    snapshots = []

    for t in range(n):
        if isinstance(kernel, GenericKernel):
            generic_constrained_step(state, counters, kernel.sample, partition, rng, diag)
        elif isinstance(kernel, MhKernel):
            mh_constrained_step(state, counters, target, partition, log_w, kernel.proposal, rng, diag)
        else:
            hmc_constrained_step(state, counters, target, partition, log_w, kernel.settings, rng, diag)
        diag.steps += 1
        done = t + 1
        if done == burn:
            counters.reset()
        if done > burn:
            row = done - burn - 1
            h_trace[row] = evaluate_h(h_fns, state.x)
            if states is not None:
                states[row] = state.x
            counters.steps_taken += 1
            if (done - burn) % stride == 0:
                snapshots.append(counters.snapshot())

    if partition.region(state.x) != i:
        raise ChainEscaped(f"chain {i} ended in compartment {partition.region(state.x)}")

    data = CellCounterData(
        source_cell=i,
        dest_cells=counters.dest_cells,
        counts=counters.counts.copy(),
        snapshots=np.array(snapshots) if snapshots else np.zeros((0, len(counters.dest_cells))),
        steps=counters.steps_taken,
        snapshot_stride=stride,
    )
    return ChainResult(cell=i, h_trace=h_trace, counters=data, diagnostics=diag, states=states)


def _chain_task(payload):
    spec, i = payload
    return run_constrained_chain(spec, i)


def parallel_map(task_fn, payloads, max_workers: Optional[int]):
    """Order-preserving map over payloads, using processes when possible.

    Falls back to serial execution when only one worker is requested or
    the payloads cannot be pickled (e.g. models built from closures in
    tests).  Results do not depend on the choice.
    """
    payloads = list(payloads)
    if max_workers is None:
        workers = os.cpu_count() or 1
    else:
        workers = int(max_workers)
    workers = min(workers, len(payloads))
    if workers > 1:
        try:
            pickle.dumps(payloads[0])
        except Exception:
            workers = 1
    if workers <= 1:
        return [task_fn(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(task_fn, payloads, chunksize=1))


def combine(
    compartment_means: np.ndarray,
    q_hat: StochasticMatrix,
    weights: WeightTable,
    level: int = 0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recombine per-compartment means through the stationary eigenvector.

    Returns ``(p_hat, compartment_probs, pi_h)``.
    """
    ok, diag = connectivity_check(q_hat, estimate_second_eigenvalue=False)
    if not ok:
        from .exceptions import NotIrreducible

        raise NotIrreducible(
            f"estimated transition matrix has {diag.n_components} closed classes",
            diagnostic=diag,
        )
    p_hat = stationary_distribution(q_hat, check_connectivity=False)
    probs = compartment_probabilities(p_hat, weights, level)
    means = np.atleast_2d(np.asarray(compartment_means, dtype=float))
    pi_h = probs @ means
    return p_hat, probs, pi_h


def run_modular_mcmc(spec: ModularRunSpec) -> ModularEstimate:
    """Run all compartment chains, estimate the rate matrix, and recombine."""
    n_comp = spec.partition.n_compartments
    results = parallel_map(_chain_task, [(spec, i) for i in range(n_comp)], spec.max_workers)

    rows = []
    for res in results:
        c = res.counters
        rows.append((c.source_cell, list(c.dest_cells), list(c.counts / c.steps)))
    q_hat = StochasticMatrix.from_offdiagonal_rows(
        n_comp, rows, labels=default_cell_labels(1, n_comp)
    )
    weights = spec.weight_table()
    means = np.stack([res.h_trace.mean(axis=0) for res in results])
    p_hat, probs, pi_h = combine(means, q_hat, weights, level=0)
    return ModularEstimate(
        q_hat=q_hat,
        p_hat=p_hat,
        compartment_probs=probs,
        compartment_means=means,
        pi_h=pi_h,
        level=0,
        n_levels=1,
        n_compartments=n_comp,
        weights=weights,
        h_traces={res.cell: res.h_trace for res in results},
        counters={res.counters.source_cell: res.counters for res in results},
        diagnostics={res.cell: res.diagnostics for res in results},
        seed=spec.seed,
        snapshot_stride=spec.snapshot_stride,
        states={res.cell: res.states for res in results if res.states is not None},
    )
