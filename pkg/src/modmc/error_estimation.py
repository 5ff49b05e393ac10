"""Standard errors for recombined estimates.

Within-compartment means get block-means standard errors.  The sampling
noise of the estimated transition matrix is captured by block covariances
of counter increments, propagated through the stationary eigenvector by a
Gaussian bootstrap over matrix rows.  The two variance contributions are
then composed: the expected conditional variance of the recombined mean
plus the variance of its conditional expectation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import (
    BootstrapDegenerate,
    NegativeEigenvectorEntry,
    NotIrreducible,
    ResidualToleranceExceeded,
    TooFewBlocks,
)
from .models import WeightTable
from .sampler import CellCounterData, ModularEstimate
from .stationary import StochasticMatrix, compartment_probabilities, stationary_distribution
from .streams import BOOTSTRAP, substream

MIN_BOOTSTRAP_REPLICATES = 100


def block_se(trace: np.ndarray, s: int) -> np.ndarray:
    """Block-means standard error of the trace mean, per column.

    Splits the trace into contiguous blocks of size ``s`` (the trailing
    partial block is dropped) and scales the sample standard deviation of
    the block means by ``sqrt(s / n)`` over the blocked prefix.
    """
    trace = np.atleast_2d(np.asarray(trace, dtype=float).T).T
    n = trace.shape[0]
    n_blocks = n // s
    if n_blocks < 2:
        raise TooFewBlocks(f"{n} samples give {n_blocks} blocks of size {s}")
    used = n_blocks * s
    means = trace[:used].reshape(n_blocks, s, -1).mean(axis=1)
    sd = means.std(axis=0, ddof=1)
    return np.sqrt(s / used) * sd


def _lag1_autocorrelation(values: np.ndarray) -> float:
    v = values - values.mean()
    denom = float(v @ v)
    if denom == 0.0:
        return 0.0
    return float(v[:-1] @ v[1:]) / denom


def choose_block_size(
    traces: list[np.ndarray],
    stride: int,
    max_fraction: int = 20,
    acf_threshold: float = 0.1,
) -> int:
    """Smallest stride multiple whose block means are nearly uncorrelated.

    Doubles the candidate block size until the worst lag-1 autocorrelation
    over all traces and columns drops below ``acf_threshold``, capping at
    ``n / max_fraction`` of the shortest trace.
    """
    n_min = min(t.shape[0] for t in traces)
    cap = max(stride, (n_min // max_fraction) // stride * stride)
    s = stride
    while True:
        worst = 0.0
        for t in traces:
            t2 = np.atleast_2d(np.asarray(t, dtype=float).T).T
            n_blocks = t2.shape[0] // s
            if n_blocks < 2:
                continue
            means = t2[: n_blocks * s].reshape(n_blocks, s, -1).mean(axis=1)
            for col in range(means.shape[1]):
                worst = max(worst, abs(_lag1_autocorrelation(means[:, col])))
        if worst < acf_threshold or s * 2 > cap:
            return s
        s *= 2


def counter_block_covariance(counters: CellCounterData, s: int) -> np.ndarray:
    """Covariance of the row's rate estimates from block counter increments.

    ``s`` must be a multiple of the snapshot stride.  Returns
    ``(1 / (n s))`` times the sample covariance of the per-block increment
    vectors, with ``n`` the blocked prefix length.
    """
    stride = counters.snapshot_stride
    if s % stride != 0:
        raise ValueError(f"block size {s} is not a multiple of snapshot stride {stride}")
    n_dest = len(counters.dest_cells)
    if n_dest == 0:
        return np.zeros((0, 0))
    per_block = s // stride
    n_blocks = counters.snapshots.shape[0] // per_block
    if n_blocks < 2:
        raise TooFewBlocks(
            f"{counters.snapshots.shape[0]} snapshots give {n_blocks} blocks"
        )
    cum = np.vstack([np.zeros(n_dest), counters.snapshots])
    bounds = cum[:: per_block][: n_blocks + 1]
    deltas = np.diff(bounds, axis=0)
    cov = np.atleast_2d(np.cov(deltas, rowvar=False, ddof=1))
    # divide by n_used * s with n_used = n_blocks * s
    return cov / (n_blocks * s * s)


def project_psd(matrix: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero (sample covariances can be indefinite)."""
    if matrix.size == 0:
        return matrix
    sym = 0.5 * (matrix + matrix.T)
    evals, vecs = np.linalg.eigh(sym)
    if np.all(evals >= 0):
        return sym
    return (vecs * np.maximum(evals, 0.0)) @ vecs.T


@dataclass(frozen=True)
class BootstrapSample:
    """Replicated compartment probabilities and recombined estimates."""

    n_replicates: int
    compartment_probs: np.ndarray
    pi_h: Optional[np.ndarray]
    n_discarded: int
    matrices: Optional[list] = None


def bootstrap_compartment_probs(
    q_hat: StochasticMatrix,
    row_covariances: dict,
    weights: WeightTable,
    n_replicates: int,
    seed: int,
    level: int,
    compartment_means: Optional[np.ndarray] = None,
    keep_matrices: bool = False,
) -> BootstrapSample:
    """Propagate row-level Gaussian noise through the stationary eigenvector.

    For each row the off-diagonal entries are redrawn from a normal
    centered at the estimates with the row's block covariance (projected to
    positive semidefinite), truncated to be nonnegative, rescaled if they
    exceed unit mass, and completed on the diagonal.  Replicates whose
    eigenvector is materially negative or whose matrix loses connectivity
    are discarded and redrawn, up to ten times the requested count.
    """
    if n_replicates < MIN_BOOTSTRAP_REPLICATES:
        raise ValueError(f"need at least {MIN_BOOTSTRAP_REPLICATES} bootstrap replicates")
    n = q_hat.n
    rows = []
    for cell in sorted(row_covariances):
        dests, cov = row_covariances[cell]
        dests = np.asarray(dests, dtype=int)
        cov = project_psd(np.asarray(cov, dtype=float))
        if cov.size:
            evals, vecs = np.linalg.eigh(cov)
            factor = vecs * np.sqrt(np.maximum(evals, 0.0))
        else:
            factor = np.zeros((0, 0))
        rows.append((int(cell), dests, q_hat.entries[cell, dests].copy(), factor))

    probs_out = np.empty((n_replicates, weights.n_compartments))
    pi_h_out = None
    means = None
    if compartment_means is not None:
        means = np.atleast_2d(np.asarray(compartment_means, dtype=float))
        pi_h_out = np.empty((n_replicates, means.shape[1]))
    kept_matrices = [] if keep_matrices else None

    accepted = 0
    attempts = 0
    max_attempts = 10 * n_replicates
    while accepted < n_replicates:
        if attempts >= max_attempts:
            raise BootstrapDegenerate(
                f"only {accepted} of {n_replicates} replicates valid "
                f"after {attempts} attempts"
            )
        rng = substream(seed, BOOTSTRAP, attempts)
        attempts += 1
        entries = np.zeros((n, n))
        for cell, dests, mean, factor in rows:
            if dests.size:
                vals = mean + factor @ rng.standard_normal(dests.size)
                np.maximum(vals, 0.0, out=vals)
                total = vals.sum()
                if total > 1.0:
                    vals /= total
                entries[cell, dests] = vals
        np.fill_diagonal(entries, 1.0 - entries.sum(axis=1))
        assert np.all(entries >= 0.0) and np.all(np.abs(entries.sum(axis=1) - 1.0) < 1e-12)
        try:
            p = stationary_distribution(entries)
            probs = compartment_probabilities(p, weights, level)
        except (NegativeEigenvectorEntry, NotIrreducible, ResidualToleranceExceeded):
            continue
        probs_out[accepted] = probs
        if pi_h_out is not None:
            pi_h_out[accepted] = probs @ means
        if kept_matrices is not None:
            kept_matrices.append(entries)
        accepted += 1

    return BootstrapSample(
        n_replicates=n_replicates,
        compartment_probs=probs_out,
        pi_h=pi_h_out,
        n_discarded=attempts - n_replicates,
        matrices=kept_matrices,
    )


@dataclass(frozen=True)
class SeReport:
    """Standard errors of the recombined estimate and its ingredients."""

    se_pi_h: np.ndarray
    se_compartment_probs: np.ndarray
    within_term: np.ndarray
    between_term: np.ndarray
    block_size: int
    n_replicates: int
    n_discarded: int
    per_compartment_se: np.ndarray

    def to_dict(self) -> dict:
        return {
            "se_pi_h": self.se_pi_h.tolist(),
            "se_compartment_probs": self.se_compartment_probs.tolist(),
            "variance_within_term": self.within_term.tolist(),
            "variance_between_term": self.between_term.tolist(),
            "block_size": self.block_size,
            "n_replicates": self.n_replicates,
            "n_discarded": self.n_discarded,
            "per_compartment_se": self.per_compartment_se.tolist(),
        }


def estimate_se(
    estimate: ModularEstimate,
    s: Optional[int] = None,
    n_replicates: int = 1000,
    seed: Optional[int] = None,
) -> SeReport:
    """Standard error of the recombined estimate and of the compartment
    probabilities.

    The variance decomposes into the bootstrap-weighted within-compartment
    sampling variance and the between-replicate variance of the recombined
    mean; the reported standard error is the square root of their sum.
    """
    if seed is None:
        seed = estimate.seed
    level = estimate.level
    n_comp = estimate.n_compartments
    level_cells = [level * n_comp + i for i in range(n_comp)]
    traces = [estimate.h_traces[c] for c in level_cells]
    stride = estimate.snapshot_stride

    if s is None:
        s = choose_block_size(traces, stride)
        min_span = min(c.snapshots.shape[0] for c in estimate.counters.values())
        cap = max(1, min_span // 2) * stride
        s = min(s, cap)
    if s % stride != 0 and any(len(c.dest_cells) for c in estimate.counters.values()):
        raise ValueError(f"block size {s} must be a multiple of the snapshot stride {stride}")

    per_comp_se = np.stack([block_se(t, s) for t in traces])

    row_covs = {}
    for cell, data in estimate.counters.items():
        if len(data.dest_cells) == 0:
            row_covs[cell] = (np.zeros(0, dtype=int), np.zeros((0, 0)))
            continue
        row_covs[cell] = (np.asarray(data.dest_cells), counter_block_covariance(data, s))

    sample = bootstrap_compartment_probs(
        estimate.q_hat,
        row_covs,
        estimate.weights,
        n_replicates,
        seed,
        level,
        compartment_means=estimate.compartment_means,
    )

    mean_sq_probs = (sample.compartment_probs**2).mean(axis=0)
    within = mean_sq_probs @ per_comp_se**2
    between = sample.pi_h.var(axis=0, ddof=1)
    return SeReport(
        se_pi_h=np.sqrt(within + between),
        se_compartment_probs=sample.compartment_probs.std(axis=0, ddof=1),
        within_term=within,
        between_term=between,
        block_size=int(s),
        n_replicates=n_replicates,
        n_discarded=sample.n_discarded,
        per_compartment_se=per_comp_se,
    )
