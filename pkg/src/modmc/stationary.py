"""Stationary left eigenvector of an estimated row-stochastic matrix.

The unit-eigenvalue left eigenvector is extracted from a dense Householder
QR factorization of ``A = I - Q``: the last column of the orthogonal factor
is orthogonal to ``range(A)``, i.e. it spans the null space of ``A^T``,
which is exactly the set of vectors ``p`` with ``p^T Q = p^T``.  A power
iteration oracle cross-validates the QR route in tests.

Flat cell layout for level-augmented matrices: cell ``(k, i)`` maps to row
``k * L + i`` with levels ``k`` in ``0..K`` and compartments ``i`` in
``0..L-1``.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import (
    MaxIterationsExceeded,
    NegativeEigenvectorEntry,
    NotIrreducible,
    ResidualToleranceExceeded,
)
from .models import WeightTable

ROW_SUM_TOL = 1e-12
RESIDUAL_TOL = 1e-10
NEGATIVE_ENTRY_TOL = 1e-8
EDGE_THRESHOLD = 1e-12


@dataclass(frozen=True)
class StochasticMatrix:
    """Dense nonnegative matrix with unit row sums.

    ``labels`` name the rows/columns (e.g. ``"(k,i)"`` cells) for CSV
    diagnostics.  ``sparsity_pattern``, when given, lists the structurally
    allowed off-diagonal ``(row, col)`` pairs; all other off-diagonal
    entries must be exactly zero.
    """

    entries: np.ndarray
    labels: Optional[tuple[str, ...]] = None
    sparsity_pattern: Optional[frozenset[tuple[int, int]]] = None

    def __post_init__(self):
        q = np.asarray(self.entries, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError("entries must be a square matrix")
        if np.any(q < 0):
            raise ValueError("entries must be nonnegative")
        if np.any(np.abs(q.sum(axis=1) - 1.0) > ROW_SUM_TOL):
            raise ValueError("every row must sum to 1 within 1e-12")
        object.__setattr__(self, "entries", q)
        if self.labels is not None:
            labels = tuple(self.labels)
            if len(labels) != q.shape[0]:
                raise ValueError("one label per row required")
            object.__setattr__(self, "labels", labels)
        if self.sparsity_pattern is not None:
            pattern = frozenset((int(r), int(c)) for r, c in self.sparsity_pattern)
            object.__setattr__(self, "sparsity_pattern", pattern)
            allowed = np.zeros(q.shape, dtype=bool)
            np.fill_diagonal(allowed, True)
            for r, c in pattern:
                allowed[r, c] = True
            if np.any(q[~allowed] != 0.0):
                raise ValueError("nonzero entry outside the declared sparsity pattern")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def from_offdiagonal_rows(
        cls,
        n: int,
        rows: Sequence[tuple[int, Sequence[int], Sequence[float]]],
        labels=None,
        sparsity_pattern=None,
    ) -> "StochasticMatrix":
        """Assemble from off-diagonal rates; diagonals complete each row to 1."""
        q = np.zeros((n, n))
        for row, cols, values in rows:
            for c, v in zip(cols, values):
                if c == row:
                    raise ValueError("off-diagonal rows must not address the diagonal")
                q[row, c] = v
        np.fill_diagonal(q, 1.0 - q.sum(axis=1))
        if np.any(np.diag(q) < -ROW_SUM_TOL):
            raise ValueError("off-diagonal mass exceeds 1 in some row")
        np.fill_diagonal(q, np.maximum(np.diag(q), 0.0))
        return cls(entries=q, labels=labels, sparsity_pattern=sparsity_pattern)


def default_cell_labels(n_levels: int, n_compartments: int) -> tuple[str, ...]:
    """Labels ``"(k,i)"`` with 1-based compartments, flat level-major order."""
    return tuple(
        f"({k},{i + 1})" for k in range(n_levels) for i in range(n_compartments)
    )


@dataclass(frozen=True)
class ConnectivityDiagnostic:
    strongly_connected: bool
    n_components: int
    component_sizes: tuple[int, ...]
    second_eigenvalue_modulus: Optional[float]
    near_unit_second_eigenvalue: bool


def connectivity_check(
    q: StochasticMatrix | np.ndarray,
    threshold: float = EDGE_THRESHOLD,
    estimate_second_eigenvalue: bool = True,
) -> tuple[bool, ConnectivityDiagnostic]:
    """Strong connectivity of the graph of entries above ``threshold``.

    The diagnostic additionally reports the modulus of the second-largest
    eigenvalue (deflated power iteration) and flags values so close to one
    that the unit eigenvector is numerically ambiguous.
    """
    entries = q.entries if isinstance(q, StochasticMatrix) else np.asarray(q, float)
    n = entries.shape[0]
    graph = csr_matrix(entries > threshold)
    n_comp, assignment = connected_components(graph, directed=True, connection="strong")
    sizes = tuple(int(np.sum(assignment == c)) for c in range(n_comp))
    lam2 = None
    if estimate_second_eigenvalue and n > 1:
        lam2 = _second_eigenvalue_modulus(entries)
    ok = n_comp == 1
    diag = ConnectivityDiagnostic(
        strongly_connected=ok,
        n_components=int(n_comp),
        component_sizes=sizes,
        second_eigenvalue_modulus=lam2,
        near_unit_second_eigenvalue=(lam2 is not None and lam2 > 1.0 - 1e-8),
    )
    return ok, diag


def _second_eigenvalue_modulus(entries: np.ndarray, max_iters: int = 5000) -> float:
    """Power iteration on the complement of the known unit right eigenvector.

    Centering each iterate removes the span of the all-ones vector, so the
    growth rate converges to ``|lambda_2|``.  A ten-step growth window damps
    the oscillation caused by complex conjugate pairs.
    """
    n = entries.shape[0]
    v = np.cos(1.0 + np.arange(n, dtype=float))
    v -= v.mean()
    norm = np.linalg.norm(v)
    if norm < 1e-300:
        return 0.0
    v /= norm
    window = 10
    estimate = None
    growth = 1.0
    for it in range(1, max_iters + 1):
        v = entries @ v
        v -= v.mean()
        norm = np.linalg.norm(v)
        if norm < 1e-300:
            return 0.0
        growth *= norm
        v /= norm
        if it % window == 0:
            current = growth ** (1.0 / window)
            growth = 1.0
            if estimate is not None and abs(current - estimate) < 1e-6:
                return float(current)
            estimate = current
    return float(estimate if estimate is not None else 0.0)


def _finalize_null_vector(v: np.ndarray) -> np.ndarray:
    """Sign-fix, screen negative entries, and normalize a raw null vector."""
    v = np.asarray(v, dtype=float)
    pivot = v[np.argmax(np.abs(v))]
    if pivot < 0:
        v = -v
    p = v / v.sum()
    worst = float(p.min())
    if worst < -NEGATIVE_ENTRY_TOL:
        raise NegativeEigenvectorEntry(p, worst)
    p = np.maximum(p, 0.0)
    return p / p.sum()


def stationary_distribution(
    q: StochasticMatrix | np.ndarray, check_connectivity: bool = True
) -> np.ndarray:
    """Probability vector ``p`` with ``p^T Q = p^T``.

    Raises :class:`NotIrreducible` when the transition graph is not
    strongly connected, :class:`NegativeEigenvectorEntry` when the computed
    eigenvector has a materially negative entry (entries in ``[-1e-8, 0)``
    are clamped to zero), and :class:`ResidualToleranceExceeded` if the
    returned vector fails ``max|p^T Q - p^T| <= 1e-10``.
    """
    entries = q.entries if isinstance(q, StochasticMatrix) else np.asarray(q, float)
    n = entries.shape[0]
    if n == 1:
        return np.array([1.0])
    if check_connectivity:
        ok, diag = connectivity_check(entries, estimate_second_eigenvalue=False)
        if not ok:
            raise NotIrreducible(
                f"transition matrix splits into {diag.n_components} closed classes "
                f"of sizes {diag.component_sizes}",
                diagnostic=diag,
            )
    a = np.eye(n) - entries
    qfac, _ = np.linalg.qr(a, mode="complete")
    p = _finalize_null_vector(qfac[:, -1])
    residual = float(np.max(np.abs(p @ entries - p)))
    if residual > RESIDUAL_TOL:
        raise ResidualToleranceExceeded(
            f"stationary residual {residual:.3e} exceeds {RESIDUAL_TOL:g}"
        )
    return p


def power_iteration_oracle(
    q: StochasticMatrix | np.ndarray,
    tol: float = 1e-13,
    max_iters: int = 10**6,
) -> np.ndarray:
    """Fixed-point iteration ``p <- p Q`` from a uniform start.

    Independent of the QR route; used to cross-validate it.
    """
    entries = q.entries if isinstance(q, StochasticMatrix) else np.asarray(q, float)
    n = entries.shape[0]
    p = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = p @ entries
        if float(np.abs(nxt - p).sum()) < tol:
            return nxt / nxt.sum()
        p = nxt
    raise MaxIterationsExceeded(f"power iteration did not converge in {max_iters} steps")


def compartment_probabilities(
    p: np.ndarray, weights: WeightTable, level: int
) -> np.ndarray:
    """Divide the level's eigenvector slice by its weights and renormalize.

    ``p`` is laid out level-major (cell ``(k, i)`` at ``k * L + i``).  The
    division is carried out in log scale because tuned weights can span
    around a hundred log units.
    """
    n_levels = weights.n_levels
    n_comp = weights.n_compartments
    p = np.asarray(p, dtype=float)
    if p.size != n_levels * n_comp:
        raise ValueError("eigenvector length does not match the weight table")
    chunk = p[level * n_comp : (level + 1) * n_comp]
    worst = float(chunk.min())
    if worst < -NEGATIVE_ENTRY_TOL:
        raise NegativeEigenvectorEntry(chunk, worst)
    chunk = np.maximum(chunk, 0.0)
    with np.errstate(divide="ignore"):
        log_ratio = np.log(chunk) - weights.row(level)
    shift = np.max(log_ratio)
    if not np.isfinite(shift):
        raise ValueError("all level entries of the eigenvector are zero")
    out = np.exp(log_ratio - shift)
    return out / out.sum()


# -- CSV diagnostics ---------------------------------------------------------


def write_csv(matrix: StochasticMatrix, path_or_buffer) -> None:
    """Row-major CSV with a header of index labels."""
    labels = matrix.labels or default_cell_labels(1, matrix.n)
    own = isinstance(path_or_buffer, (str, bytes))
    buf = open(path_or_buffer, "w") if own else path_or_buffer
    try:
        buf.write("," + ",".join(f'"{lab}"' for lab in labels) + "\n")
        for lab, row in zip(labels, matrix.entries):
            buf.write(f'"{lab}",' + ",".join(repr(v) for v in row) + "\n")
    finally:
        if own:
            buf.close()


def read_csv(path_or_buffer) -> StochasticMatrix:
    own = isinstance(path_or_buffer, (str, bytes))
    buf = open(path_or_buffer, "r") if own else path_or_buffer
    try:
        text = buf.read()
    finally:
        if own:
            buf.close()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    header = next(io.StringIO(lines[0]).__iter__()).rstrip("\n")
    labels = [part.strip('"') for part in header.split(",")[1:]]
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        rows.append([float(v) for v in parts[1:]])
    return StochasticMatrix(entries=np.array(rows), labels=tuple(labels))
