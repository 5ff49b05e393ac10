"""Temperature-augmented modular sampling for multimodal targets.

One constrained chain runs per (level, compartment) cell of the augmented
space.  Each step flips a fair coin between a Hamiltonian state move within
the cell's level and a one-level temperature proposal; cross-cell proposals
feed fractional transition counters exactly as in the single-level sampler.
Compartment probabilities come from the top-level entries of the stationary
eigenvector of the assembled cell-transition matrix.

The ladder and the per-(level, compartment) mixture weights are tuned from
pilot runs: levels are inserted geometrically until adjacent temperature
moves are accepted often enough, then weights are set so up and down moves
balance.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numpy as np

from .exceptions import NonFiniteDensity, NotIrreducible, TuningFailed, ZeroLowerLevel
from .kernels import (
    ChainDiagnostics,
    CounterMatrix,
    HmcSettings,
    hmc_constrained_step,
    make_chain_state,
    temperature_move,
)
from .models import (
    BaseDensity,
    Ladder,
    Partition,
    TargetModel,
    TemperedTarget,
    WeightTable,
    log_ratio,
)
from .sampler import (
    CellCounterData,
    ChainResult,
    ModularEstimate,
    as_h_tuple,
    combine,
    evaluate_h,
    parallel_map,
)
from .stationary import EDGE_THRESHOLD, StochasticMatrix, default_cell_labels
from .streams import PILOT, RUN, substream

INSERTION_LOG_TARGET = math.log(0.2)
MAX_INSERTIONS_PER_GAP = 5


def stepsize_schedule(eps0: float, eps: float, beta: float) -> float:
    """Leapfrog step size at inverse temperature ``beta``.

    Interpolates the squared inverse step between the base-density value
    ``eps0`` (beta = 0) and the target value ``eps`` (beta = 1), mirroring
    how the Hessian of the tempered log density interpolates.
    """
    if not (eps0 > 0 and eps > 0):
        raise ValueError("step sizes must be positive")
    if beta == 0.0:
        return float(eps0)
    if beta == 1.0:
        return float(eps)
    return ((1.0 - beta) * eps0**-2 + beta * eps**-2) ** -0.5


def tune_beta1(
    model: TargetModel,
    base: BaseDensity,
    reference_point=None,
    modes: Optional[Sequence] = None,
    fallback: float = 1e-3,
    n_reference_draws: int = 256,
    seed: int = 0,
) -> float:
    """First nonzero ladder level: the level whose odds against the base
    are about one e-fold at a reference value of the log odds.

    With an explicit ``reference_point`` the log odds are evaluated there.
    By default the reference value is the median log odds over seeded base
    draws: the base mean can sit atypically close to a mode (every mode
    lies inside the base's bulk), in which case a point-based level leaves
    the bottom ladder pair with essentially no downward flux.  The median
    draw is a representative base point by construction.

    Uses the unnormalized target, so the result depends on the scale of
    the density; pass an explicit ladder to override.  Falls back to a
    small level with a warning when the reference log odds are
    nonnegative.
    """
    if reference_point is not None:
        x0 = np.asarray(reference_point, float)
        if modes is not None:
            for mode in modes:
                if np.linalg.norm(np.asarray(mode, float) - x0) < base.marginal_sd:
                    warnings.warn(
                        "reference point is within one base standard deviation of a "
                        "mode; the first ladder level may be poorly calibrated",
                        stacklevel=2,
                    )
                    break
        ratio = log_ratio(model, base, x0)
    else:
        rng = substream(seed, PILOT, 0, 0, 0)
        draws = [log_ratio(model, base, base.sampler(rng)) for _ in range(n_reference_draws)]
        ratio = float(np.median(draws))
    if ratio >= 0.0:
        warnings.warn(
            f"reference log density ratio is {ratio:.3g} >= 0; "
            f"falling back to beta_1 = {fallback}",
            stacklevel=2,
        )
        return fallback
    return min(1.0, -1.0 / ratio)


def insertion_count(m_up: float, m_down: float) -> int:
    """Number of levels to insert for one adjacent pair, clamped to 0..5.

    ``m_up`` and ``m_down`` are the median log Metropolis ratios of the
    upward move from the lower level and the downward move from the upper
    level.  The count is the floor of their sum measured in units of
    ``log 0.2``, so that after insertion both moves are accepted with
    probability near ``sqrt(0.2)``.
    """
    value = (m_up + m_down) / INSERTION_LOG_TARGET
    return int(np.clip(math.floor(value), 0, MAX_INSERTIONS_PER_GAP))


def _moderated_count(linear_count: int, ratio: float) -> int:
    """Levels actually inserted this round for one adjacent pair.

    The log Metropolis ratio sum of a pair shrinks roughly with the square
    of its subdivision, so inserting the full linear count overshoots into
    a ladder far denser than the acceptance target; the square-root scale
    is the right one.  At least one level goes in whenever the linear rule
    demands any, so the stopping condition (linear count zero everywhere)
    is unchanged.
    """
    if linear_count <= 1:
        return linear_count
    sqrt_count = int(math.ceil(math.sqrt(max(ratio, 0.0)))) - 1
    return min(linear_count, max(1, sqrt_count))


def geometric_insert(beta_low: float, beta_high: float, n: int) -> np.ndarray:
    """``n`` geometrically spaced levels strictly inside the gap."""
    if beta_low <= 0.0:
        raise ZeroLowerLevel("cannot insert geometrically above a zero level")
    if not beta_low < beta_high <= 1.0:
        raise ValueError("need 0 < beta_low < beta_high <= 1")
    if n < 1:
        raise ValueError("n must be at least 1")
    j = np.arange(1, n + 1, dtype=float)
    levels = beta_low * (beta_high / beta_low) ** (j / (n + 1))
    return levels[(levels > beta_low) & (levels < beta_high)]


def augmented_sparsity(n_levels: int, n_compartments: int) -> frozenset:
    """Structurally allowed off-diagonal cells: same-level cross-compartment
    moves and single-level temperature moves at fixed compartment."""
    pairs = set()
    for k in range(n_levels):
        for i in range(n_compartments):
            src = k * n_compartments + i
            for j in range(n_compartments):
                if j != i:
                    pairs.add((src, k * n_compartments + j))
            for k2 in (k - 1, k + 1):
                if 0 <= k2 < n_levels:
                    pairs.add((src, k2 * n_compartments + i))
    return frozenset(pairs)


@dataclass(frozen=True)
class StRunSpec:
    """Inputs of a temperature-augmented run.

    ``n_steps`` is a scalar or a ``(K+1, L)`` table of per-cell lengths;
    ``burn_in`` defaults to 10% per cell.  ``eps`` and ``eps0`` anchor the
    leapfrog step-size schedule at the target and base levels.  Initial
    points are per compartment and shared across levels.
    """

    model: TargetModel
    base: BaseDensity
    partition: Partition
    ladder: Ladder
    weights: Optional[WeightTable]
    n_steps: Union[int, np.ndarray]
    initial_points: Sequence
    h: object
    eps: float
    eps0: float
    n_leapfrog: int = 10
    seed: int = 0
    burn_in: Union[int, np.ndarray, None] = None
    snapshot_stride: int = 10
    store_states: bool = False
    max_workers: Optional[int] = None

    def n_for(self, k: int, i: int) -> int:
        if np.ndim(self.n_steps) == 0:
            return int(self.n_steps)
        return int(np.asarray(self.n_steps)[k, i])

    def burn_in_for(self, k: int, i: int) -> int:
        if self.burn_in is None:
            return self.n_for(k, i) // 10
        if np.ndim(self.burn_in) == 0:
            return int(self.burn_in)
        return int(np.asarray(self.burn_in)[k, i])

    def weight_table(self) -> WeightTable:
        if self.weights is not None:
            return self.weights
        return WeightTable.uniform(len(self.ladder), self.partition.n_compartments)


def _run_cell(spec: StRunSpec, k: int, i: int, record_h: bool, record_ratios: bool,
              stream_kind: int, stream_round: int) -> ChainResult:
    rng = substream(spec.seed, stream_kind, stream_round, k, i)
    partition = spec.partition
    n_comp = partition.n_compartments
    n_levels = len(spec.ladder)
    weights = spec.weight_table()
    beta = float(spec.ladder.betas[k])
    from .fastpath import resolve_state_target

    target = resolve_state_target(spec.model, spec.base, beta)
    settings = HmcSettings(
        step_size=stepsize_schedule(spec.eps0, spec.eps, beta),
        n_leapfrog=spec.n_leapfrog,
    )
    log_w = weights.row(k)
    n = spec.n_for(k, i)
    burn = spec.burn_in_for(k, i)
    if not n > burn >= 0:
        raise ValueError("need n_steps > burn_in >= 0 in every cell")
    x0 = spec.initial_points[i]
    if partition.region(x0) != i:
        raise ValueError(f"initial point for compartment {i} lies elsewhere")

    state = make_chain_state(x0, partition, target, level=k)
    counters = CounterMatrix.augmented(k, i, n_levels, n_comp)
    diag = ChainDiagnostics()
    h_fns = as_h_tuple(spec.h) if record_h else None
    h_trace = None
    states = None
    stride = max(1, int(spec.snapshot_stride))
    snapshots = []
    ups, downs = [], []

    n_eff = n - burn
    if record_h:
        first = evaluate_h(h_fns, state.x)
        h_trace = np.empty((n_eff, first.size))
        if spec.store_states:
            states = np.empty((n_eff,) + np.shape(state.x))

    # The step-size schedule reflects free-space curvature only; when a
    # compartment is smaller than the scheduled trajectory, every proposal
    # exits it and the chain freezes at its starting point.  Halve the step
    # during burn-in while the within-compartment acceptance is negligible.
    backoff_window = 100
    window_props = window_accepts = 0

    for t in range(n):
        if rng.random() < 0.5:
            hmc_constrained_step(state, counters, target, partition, log_w, settings, rng, diag)
        else:
            moved = temperature_move(state, counters, weights, spec.ladder, rng, diag)
            if record_ratios and moved is not None and t + 1 > burn:
                direction, value = moved
                (ups if direction == "up" else downs).append(value)
        diag.steps += 1
        done = t + 1
        if done < burn and done % backoff_window == 0:
            props = diag.state_proposals - window_props
            accepts = diag.state_accepts - window_accepts
            if props >= 25 and accepts < 0.05 * props and diag.step_halvings < 8:
                settings = HmcSettings(
                    step_size=0.5 * settings.step_size, n_leapfrog=settings.n_leapfrog
                )
                diag.step_halvings += 1
            window_props = diag.state_proposals
            window_accepts = diag.state_accepts
        if done == burn:
            counters.reset()
        if done > burn:
            counters.steps_taken += 1
            if record_h:
                row = done - burn - 1
                h_trace[row] = evaluate_h(h_fns, state.x)
                if states is not None:
                    states[row] = state.x
            if (done - burn) % stride == 0:
                snapshots.append(counters.snapshot())

    data = CellCounterData(
        source_cell=counters.source_cell,
        dest_cells=counters.dest_cells,
        counts=counters.counts.copy(),
        snapshots=np.array(snapshots) if snapshots else np.zeros((0, len(counters.dest_cells))),
        steps=counters.steps_taken,
        snapshot_stride=stride,
    )
    return ChainResult(
        cell=counters.source_cell,
        h_trace=h_trace if record_h else np.zeros((0, 0)),
        counters=data,
        diagnostics=diag,
        states=states,
        temp_log_ratios_up=np.asarray(ups) if record_ratios else None,
        temp_log_ratios_down=np.asarray(downs) if record_ratios else None,
    )


def _st_cell_task(payload):
    spec, k, i, record_h, record_ratios, kind, rnd = payload
    return _run_cell(spec, k, i, record_h, record_ratios, kind, rnd)


def _assemble_q(results, n_levels: int, n_compartments: int) -> StochasticMatrix:
    n = n_levels * n_compartments
    rows = []
    for res in results:
        c = res.counters
        rows.append((c.source_cell, list(c.dest_cells), list(c.counts / c.steps)))
    return StochasticMatrix.from_offdiagonal_rows(
        n,
        rows,
        labels=default_cell_labels(n_levels, n_compartments),
        sparsity_pattern=augmented_sparsity(n_levels, n_compartments),
    )


def _missing_links_message(q: StochasticMatrix) -> str:
    missing = []
    labels = q.labels
    for r, c in sorted(q.sparsity_pattern):
        if q.entries[r, c] <= EDGE_THRESHOLD:
            missing.append(f"{labels[r]}->{labels[c]}")
    shown = ", ".join(missing[:20])
    more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
    return f"numerically zero links: {shown}{more}"


def run_modular_st(spec: StRunSpec) -> ModularEstimate:
    """Run every (level, compartment) chain and recombine at the top level.

    The combined estimate uses only top-level traces; lower levels exist to
    carry probability mass between compartments through the base density.
    """
    from .fastpath import warmup

    warmup()
    n_comp = spec.partition.n_compartments
    n_levels = len(spec.ladder)
    top = spec.ladder.top
    payloads = [
        (spec, k, i, k == top, False, RUN, 0)
        for k in range(n_levels)
        for i in range(n_comp)
    ]
    results = parallel_map(_st_cell_task, payloads, spec.max_workers)
    q_hat = _assemble_q(results, n_levels, n_comp)
    from .stationary import connectivity_check

    ok, diag = connectivity_check(q_hat, estimate_second_eigenvalue=False)
    if not ok:
        raise NotIrreducible(
            f"augmented transition matrix has {diag.n_components} closed classes; "
            + _missing_links_message(q_hat),
            diagnostic=diag,
        )
    weights = spec.weight_table()
    by_cell = {res.cell: res for res in results}
    top_cells = [top * n_comp + i for i in range(n_comp)]
    means = np.stack([by_cell[c].h_trace.mean(axis=0) for c in top_cells])
    p_hat, probs, pi_h = combine(means, q_hat, weights, level=top)
    return ModularEstimate(
        q_hat=q_hat,
        p_hat=p_hat,
        compartment_probs=probs,
        compartment_means=means,
        pi_h=pi_h,
        level=top,
        n_levels=n_levels,
        n_compartments=n_comp,
        weights=weights,
        h_traces={c: by_cell[c].h_trace for c in top_cells},
        counters={res.cell: res.counters for res in results},
        diagnostics={res.cell: res.diagnostics for res in results},
        seed=spec.seed,
        snapshot_stride=spec.snapshot_stride,
        ladder=spec.ladder,
        states={c: by_cell[c].states for c in top_cells if by_cell[c].states is not None},
    )


@dataclass(frozen=True)
class TuningReport:
    """Outcome of the iterative ladder and weight calibration."""

    ladder: Ladder
    weights: WeightTable
    rounds: int
    insertions_per_round: tuple
    median_log_up: np.ndarray
    median_log_down: np.ndarray
    n_pilot: int
    pilot_burn_in: int

    def to_dict(self) -> dict:
        return {
            "betas": self.ladder.betas.tolist(),
            "log_weights": self.weights.log_w.tolist(),
            "rounds": self.rounds,
            "insertions_per_round": [list(r) for r in self.insertions_per_round],
            "median_log_up": self.median_log_up.tolist(),
            "median_log_down": self.median_log_down.tolist(),
            "n_pilot": self.n_pilot,
            "pilot_burn_in": self.pilot_burn_in,
        }

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def load_tuning(path) -> tuple[Ladder, WeightTable, dict]:
    with open(path) as fh:
        doc = json.load(fh)
    return (
        Ladder(np.asarray(doc["betas"], dtype=float)),
        WeightTable(np.asarray(doc["log_weights"], dtype=float)),
        doc,
    )


def _pilot_medians(results, n_levels: int, n_comp: int):
    """Median log Metropolis ratios by direction; NaN where no proposal landed."""
    up = np.full((n_levels, n_comp), np.nan)
    down = np.full((n_levels, n_comp), np.nan)
    for res in results:
        k, i = divmod(res.cell, n_comp)
        if res.temp_log_ratios_up is not None and res.temp_log_ratios_up.size:
            up[k, i] = float(np.median(res.temp_log_ratios_up))
        if res.temp_log_ratios_down is not None and res.temp_log_ratios_down.size:
            down[k, i] = float(np.median(res.temp_log_ratios_down))
    return up, down


def _merge_levels(betas: np.ndarray, inserted: dict) -> np.ndarray:
    out = []
    for k, beta in enumerate(betas[:-1]):
        out.append(beta)
        out.extend(inserted.get(k, ()))
    out.append(betas[-1])
    merged = np.array(out, dtype=float)
    keep = np.concatenate(([True], np.diff(merged) > 0))
    return merged[keep]


def tune_ladder_and_weights(
    model: TargetModel,
    base: BaseDensity,
    partition: Partition,
    initial_points: Sequence,
    eps: float,
    eps0: float,
    n_leapfrog: int = 10,
    seed: int = 0,
    n_pilot: int = 2000,
    pilot_burn_in: int = 500,
    max_rounds: int = 20,
    beta1: Optional[float] = None,
    modes: Optional[Sequence] = None,
    max_workers: Optional[int] = None,
) -> TuningReport:
    """Iteratively insert ladder levels, then balance the mixture weights.

    Each round runs unit-weight pilot chains in every cell and records the
    log Metropolis ratios of attempted temperature moves (burn-in
    excluded).  For every adjacent level pair the worst compartment decides
    how many intermediate levels to insert; rounds repeat until no pair
    needs any.  The final round's medians then set the weight ratios so
    that up and down moves balance, with all weights equal to one at level
    zero.
    """
    from .fastpath import warmup

    warmup()
    if beta1 is None:
        beta1 = tune_beta1(model, base, modes=modes)
    if beta1 >= 1.0:
        betas = np.array([0.0, 1.0])
    else:
        betas = np.array([0.0, float(beta1), 1.0])

    n_comp = partition.n_compartments
    insertions_history = []
    for round_idx in range(1, max_rounds + 1):
        ladder = Ladder(betas)
        n_levels = len(ladder)
        pilot = StRunSpec(
            model=model,
            base=base,
            partition=partition,
            ladder=ladder,
            weights=WeightTable.uniform(n_levels, n_comp),
            n_steps=n_pilot,
            initial_points=initial_points,
            h=_zero_h,
            eps=eps,
            eps0=eps0,
            n_leapfrog=n_leapfrog,
            seed=seed,
            burn_in=pilot_burn_in,
            max_workers=max_workers,
        )
        payloads = [
            (pilot, k, i, False, True, PILOT, round_idx)
            for k in range(n_levels)
            for i in range(n_comp)
        ]
        results = parallel_map(_st_cell_task, payloads, max_workers)
        up, down = _pilot_medians(results, n_levels, n_comp)

        counts = []
        inserted_counts = []
        for k in range(1, n_levels - 1):
            pair = []
            ratios = []
            for i in range(n_comp):
                if math.isnan(up[k, i]) or math.isnan(down[k + 1, i]):
                    continue
                pair.append(insertion_count(up[k, i], down[k + 1, i]))
                ratios.append((up[k, i] + down[k + 1, i]) / INSERTION_LOG_TARGET)
            linear = max(pair) if pair else 0
            counts.append(linear)
            inserted_counts.append(_moderated_count(linear, max(ratios) if ratios else 0.0))
        insertions_history.append(tuple(counts))

        if not any(counts):
            log_w = np.zeros((n_levels, n_comp))
            for k in range(n_levels - 1):
                log_w[k + 1] = log_w[k] - 0.5 * (up[k] - down[k + 1])
            if not np.all(np.isfinite(log_w)):
                raise TuningFailed(round_idx, ladder)
            return TuningReport(
                ladder=ladder,
                weights=WeightTable(log_w),
                rounds=round_idx,
                insertions_per_round=tuple(insertions_history),
                median_log_up=up,
                median_log_down=down,
                n_pilot=n_pilot,
                pilot_burn_in=pilot_burn_in,
            )

        inserted = {}
        for offset, k in enumerate(range(1, n_levels - 1)):
            if inserted_counts[offset] > 0:
                inserted[k] = geometric_insert(betas[k], betas[k + 1], inserted_counts[offset])
        betas = _merge_levels(betas, inserted)

    raise TuningFailed(max_rounds, Ladder(betas))


def _zero_h(x):
    return 0.0
