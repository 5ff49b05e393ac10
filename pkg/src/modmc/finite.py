"""Finite-state chains used as exact oracles.

Small enumerable chains make every quantity the samplers estimate
computable in closed form: the constrained kernel, its detailed-balance
defect, the exact cross-compartment rate matrix, and the asymptotic
covariance of transition counters.  The vectorized simulators replicate
many short constrained chains at once for distributional checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import TruncationNotConverged
from .models import Partition

COUNTER_SERIES_TOL = 1e-12


@dataclass(frozen=True)
class FiniteLabelPartition(Partition):
    """Compartment labels for integer states."""

    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=int))
        object.__setattr__(self, "n_compartments", int(self.labels.max()) + 1)

    def region(self, x) -> int:
        return int(self.labels[int(x)])


@dataclass(frozen=True)
class FiniteKernelSampler:
    """Draws the next state of a finite chain from its transition matrix."""

    cumulative: np.ndarray

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "FiniteKernelSampler":
        return cls(cumulative=np.cumsum(np.asarray(matrix, dtype=float), axis=1))

    def __call__(self, rng: np.random.Generator, x) -> int:
        row = self.cumulative[int(x)]
        idx = int(np.searchsorted(row, rng.random(), side="left"))
        return min(idx, row.size - 1)


def mh_matrix(pi_w: np.ndarray, proposal: np.ndarray) -> np.ndarray:
    """Metropolis-Hastings transition matrix targeting ``pi_w``.

    ``proposal[x, y]`` is the proposal mass ``m(y; x)``; zero entries stay
    zero.  The result is exactly reversible with respect to ``pi_w``.
    """
    pi_w = np.asarray(pi_w, dtype=float)
    m = np.asarray(proposal, dtype=float)
    n = m.shape[0]
    alpha = acceptance_matrix(pi_w, m)
    out = m * alpha
    np.fill_diagonal(out, 0.0)
    np.fill_diagonal(out, 1.0 - out.sum(axis=1))
    return out


def acceptance_matrix(pi_w: np.ndarray, proposal: np.ndarray) -> np.ndarray:
    """``alpha[x, y] = min(1, pi_w[y] m[y, x] / (pi_w[x] m[x, y]))`` where
    the proposal is supported; zero elsewhere."""
    pi_w = np.asarray(pi_w, dtype=float)
    m = np.asarray(proposal, dtype=float)
    num = pi_w[:, None] * m  # pi_w[x] * m(y; x) laid out as [x, y]
    rev = pi_w[None, :] * m.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(num > 0, rev / num, 0.0)
    return np.minimum(1.0, np.where(m > 0, ratio, 0.0))


def constrained_kernel(matrix: np.ndarray, labels: np.ndarray, compartment: int):
    """Restriction of a global kernel to one compartment.

    Foreign moves become holds: ``M_i(x, y) = M(x, y)`` for ``y`` in the
    compartment and the lost mass returns to the diagonal.  Returns the
    restricted matrix together with the global indices of its states.
    """
    labels = np.asarray(labels, dtype=int)
    idx = np.flatnonzero(labels == compartment)
    block = np.asarray(matrix, dtype=float)[np.ix_(idx, idx)]
    out = block.copy()
    escape = 1.0 - block.sum(axis=1)
    out[np.diag_indices_from(out)] += escape
    return out, idx


def conditional_distribution(pi: np.ndarray, labels: np.ndarray, compartment: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=int)
    idx = np.flatnonzero(labels == compartment)
    chunk = np.asarray(pi, dtype=float)[idx]
    return chunk / chunk.sum()


def exact_rate_matrix(matrix: np.ndarray, pi: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Average cross-compartment transition probabilities at stationarity.

    ``Q[i, j]`` integrates ``M(A_j; x)`` over the conditional distribution
    on compartment ``i``; diagonals complete the rows to one.
    """
    labels = np.asarray(labels, dtype=int)
    n_comp = int(labels.max()) + 1
    matrix = np.asarray(matrix, dtype=float)
    q = np.zeros((n_comp, n_comp))
    for i in range(n_comp):
        pi_i = conditional_distribution(pi, labels, i)
        idx = np.flatnonzero(labels == i)
        for j in range(n_comp):
            if j == i:
                continue
            jdx = np.flatnonzero(labels == j)
            q[i, j] = float(pi_i @ matrix[np.ix_(idx, jdx)].sum(axis=1))
    np.fill_diagonal(q, 1.0 - q.sum(axis=1))
    return q


def detailed_balance_defect(matrix: np.ndarray, pi: np.ndarray) -> float:
    """Largest entrywise violation of ``pi(x) M(x, y) = pi(y) M(y, x)``."""
    pi = np.asarray(pi, dtype=float)
    flow = pi[:, None] * np.asarray(matrix, dtype=float)
    return float(np.max(np.abs(flow - flow.T)))


def clt_counter_covariance(
    matrix: np.ndarray,
    pi: np.ndarray,
    labels: np.ndarray,
    compartment: int,
    truncation: int = 10_000,
    proposal: np.ndarray | None = None,
    alpha: np.ndarray | None = None,
    tol: float = COUNTER_SERIES_TOL,
) -> np.ndarray:
    """Asymptotic covariance of the normalized transition counters.

    Evaluates the truncated autocovariance series of the functions
    ``c_j(x) = M(A_j; x)`` under the constrained kernel by exact matrix
    arithmetic.  Passing the proposal and acceptance matrices switches the
    instantaneous term to the one for fractional (acceptance-probability)
    counters.  Destination order is ascending compartment index, skipping
    the source compartment.
    """
    labels = np.asarray(labels, dtype=int)
    matrix = np.asarray(matrix, dtype=float)
    n_comp = int(labels.max()) + 1
    dests = [j for j in range(n_comp) if j != compartment]
    m_i, idx = constrained_kernel(matrix, labels, compartment)
    pi_i = conditional_distribution(pi, labels, compartment)

    c = np.stack(
        [matrix[np.ix_(idx, np.flatnonzero(labels == j))].sum(axis=1) for j in dests]
    )
    q_row = c @ pi_i

    n_d = len(dests)
    sigma = np.zeros((n_d, n_d))
    if proposal is None:
        sigma += np.diag(q_row)
    else:
        if alpha is None:
            raise ValueError("alpha matrix required for the fractional-counter variant")
        prop = np.asarray(proposal, dtype=float)
        alph = np.asarray(alpha, dtype=float)
        for pos, j in enumerate(dests):
            jdx = np.flatnonzero(labels == j)
            second = (alph[np.ix_(idx, jdx)] ** 2 * prop[np.ix_(idx, jdx)]).sum(axis=1)
            sigma[pos, pos] += float(pi_i @ second)
    sigma -= np.outer(q_row, q_row)

    u = c.copy()  # u[pos] = M_i^{l-1} c_j at l = 1
    converged = False
    for _ in range(truncation):
        weighted = u * pi_i  # row-wise elementwise product
        term = c @ weighted.T
        term = term + term.T - 2.0 * np.outer(q_row, q_row)
        sigma += term
        if float(np.max(np.abs(term))) < tol:
            converged = True
            break
        u = u @ m_i.T
    if not converged:
        raise TruncationNotConverged(
            f"series term still above {tol:g} after {truncation} terms"
        )
    return sigma


def _categorical_rows(cumulative: np.ndarray, states: np.ndarray, rng: np.random.Generator):
    u = rng.random(states.size)
    draws = (cumulative[states] < u[:, None]).sum(axis=1)
    return np.minimum(draws, cumulative.shape[1] - 1)


def simulate_binary_counters(
    matrix: np.ndarray,
    pi: np.ndarray,
    labels: np.ndarray,
    compartment: int,
    n_steps: int,
    n_reps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replicated constrained chains with unit counter increments.

    Chains start from the conditional stationary distribution; returns the
    ``(n_reps, L-1)`` matrix of accumulated counters.
    """
    labels = np.asarray(labels, dtype=int)
    matrix = np.asarray(matrix, dtype=float)
    n_comp = int(labels.max()) + 1
    dests = [j for j in range(n_comp) if j != compartment]
    idx = np.flatnonzero(labels == compartment)
    pi_i = conditional_distribution(pi, labels, compartment)
    states = rng.choice(idx, size=n_reps, p=pi_i)
    cumulative = np.cumsum(matrix, axis=1)
    counts = np.zeros((n_reps, len(dests)))
    for _ in range(n_steps):
        draws = _categorical_rows(cumulative, states, rng)
        drawn_labels = labels[draws]
        for pos, j in enumerate(dests):
            counts[:, pos] += drawn_labels == j
        stay = drawn_labels == compartment
        states = np.where(stay, draws, states)
    return counts


def simulate_fractional_counters(
    proposal: np.ndarray,
    alpha: np.ndarray,
    pi: np.ndarray,
    labels: np.ndarray,
    compartment: int,
    n_steps: int,
    n_reps: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Replicated constrained chains incrementing by acceptance probability.

    Same-compartment candidates are accepted or rejected as usual; foreign
    candidates add their acceptance probability to the counter without any
    accept decision.
    """
    labels = np.asarray(labels, dtype=int)
    prop = np.asarray(proposal, dtype=float)
    alph = np.asarray(alpha, dtype=float)
    n_comp = int(labels.max()) + 1
    dests = [j for j in range(n_comp) if j != compartment]
    idx = np.flatnonzero(labels == compartment)
    pi_i = conditional_distribution(pi, labels, compartment)
    states = rng.choice(idx, size=n_reps, p=pi_i)
    cumulative = np.cumsum(prop, axis=1)
    counts = np.zeros((n_reps, len(dests)))
    for _ in range(n_steps):
        cands = _categorical_rows(cumulative, states, rng)
        a = alph[states, cands]
        cand_labels = labels[cands]
        for pos, j in enumerate(dests):
            counts[:, pos] += np.where(cand_labels == j, a, 0.0)
        accept = (cand_labels == compartment) & (rng.random(n_reps) < a)
        states = np.where(accept, cands, states)
    return counts
