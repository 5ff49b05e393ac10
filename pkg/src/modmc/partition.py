"""Mode discovery by gradient flow and amortized nearest-anchor partitions.

Anchor points are carried uphill on the log target density; anchors whose
ascents end near each other share a mode.  The partition assigns a point to
the mode whose anchors are nearest, so no optimization runs at sampling
time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .models import Partition, TargetModel


@dataclass(frozen=True)
class OptimizerSettings:
    """Ascent controls: ``method`` is ``"ascent"`` (backtracking gradient
    ascent) or ``"adam"``; ``tol`` is the gradient-norm stopping rule."""

    method: str = "ascent"
    learning_rate: float = 0.1
    max_iters: int = 10_000
    tol: float = 1e-6
    merge_radius: float = 1e-3

    def __post_init__(self):
        if self.method not in ("ascent", "adam"):
            raise ValueError("method must be 'ascent' or 'adam'")


@dataclass(frozen=True)
class MahalanobisMetric:
    """Distance ``sqrt((x-y)^T Sigma^{-1} (x-y))`` for SPD ``Sigma``."""

    sigma: np.ndarray
    _inv_chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        s = np.asarray(self.sigma, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError("sigma must be square")
        if not np.allclose(s, s.T, atol=1e-10):
            raise ValueError("sigma must be symmetric")
        chol = np.linalg.cholesky(s)
        object.__setattr__(self, "sigma", s)
        object.__setattr__(self, "_inv_chol", np.linalg.inv(chol))

    def squared_distances(self, points: np.ndarray, x: np.ndarray) -> np.ndarray:
        z = (points - x) @ self._inv_chol.T
        return np.einsum("ij,ij->i", z, z)

    def distance(self, a, b) -> float:
        z = self._inv_chol @ (np.asarray(a, float) - np.asarray(b, float))
        return float(np.sqrt(z @ z))


def _euclidean_squared(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    diff = points - x
    return np.einsum("ij,ij->i", diff, diff)


@dataclass(frozen=True)
class AnchorSet:
    """Anchors, their mode assignments, and the deduplicated modes."""

    anchors: np.ndarray
    assignments: np.ndarray
    modes: np.ndarray
    metric: Optional[MahalanobisMetric] = None

    def __post_init__(self):
        if np.any(self.assignments < 0):
            raise ValueError("every anchor must be assigned to a mode")
        if self.modes.shape[0] < 1:
            raise ValueError("need at least one mode")


def _ascend(log_f: Callable, grad: Callable, x0: np.ndarray, settings: OptimizerSettings):
    """Monotone gradient ascent with backtracking line search."""
    x = np.asarray(x0, dtype=float).copy()
    f = float(log_f(x))
    if not math.isfinite(f):
        return x, False
    step = settings.learning_rate
    for _ in range(settings.max_iters):
        g = np.asarray(grad(x), dtype=float)
        gn = float(np.linalg.norm(g))
        if not math.isfinite(gn):
            return x, False
        if gn < settings.tol:
            return x, True
        moved = False
        while step > 1e-18:
            cand = x + step * g
            fc = float(log_f(cand))
            if math.isfinite(fc) and fc > f:
                x, f = cand, fc
                step = min(step * 1.5, 1e6)
                moved = True
                break
            step *= 0.5
        if not moved:
            # stalled at objective resolution; accept as a fixed point when
            # the gradient is within an order of magnitude of the tolerance
            return x, gn < 10.0 * settings.tol
    return x, float(np.linalg.norm(grad(x))) < 10.0 * settings.tol


def _adam_ascend(log_f: Callable, grad: Callable, x0: np.ndarray, settings: OptimizerSettings):
    x = np.asarray(x0, dtype=float).copy()
    m = np.zeros_like(x)
    v = np.zeros_like(x)
    b1, b2, eps = 0.9, 0.999, 1e-8
    lr = settings.learning_rate
    for t in range(1, settings.max_iters + 1):
        g = np.asarray(grad(x), dtype=float)
        gn = float(np.linalg.norm(g))
        if not math.isfinite(gn):
            return x, False
        if gn < settings.tol:
            return x, True
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1**t)
        vhat = v / (1 - b2**t)
        # decay keeps the iterates from orbiting the maximum
        x = x + (lr / (1.0 + t / 500.0)) * mhat / (np.sqrt(vhat) + eps)
    return x, float(np.linalg.norm(grad(x))) < settings.tol


def find_modes(
    model: TargetModel,
    anchors: Sequence,
    settings: Optional[OptimizerSettings] = None,
    metric: Optional[MahalanobisMetric] = None,
) -> AnchorSet:
    """Follow the gradient flow from each anchor and cluster the endpoints.

    Endpoints within ``merge_radius`` of an existing mode (in the chosen
    metric) join it; others found a new mode.  Anchors whose ascent does
    not converge are excluded with a warning.
    """
    settings = settings or OptimizerSettings()
    ascend = _ascend if settings.method == "ascent" else _adam_ascend
    anchors = np.atleast_2d(np.asarray(anchors, dtype=float))
    modes: list[np.ndarray] = []
    assignments = np.full(anchors.shape[0], -1)
    distance = metric.distance if metric is not None else (
        lambda a, b: float(np.linalg.norm(np.asarray(a) - np.asarray(b)))
    )
    kept = []
    for idx, a in enumerate(anchors):
        endpoint, converged = ascend(model.log_gamma, model.grad_log_gamma, a, settings)
        if not converged:
            warnings.warn(f"anchor {idx} did not converge; excluded", stacklevel=2)
            continue
        for m_idx, mode in enumerate(modes):
            if distance(endpoint, mode) <= settings.merge_radius:
                assignments[idx] = m_idx
                break
        else:
            assignments[idx] = len(modes)
            modes.append(endpoint)
        kept.append(idx)
    if not modes:
        raise ValueError("no anchor ascent converged; cannot build a partition")
    return AnchorSet(
        anchors=anchors[kept],
        assignments=assignments[kept],
        modes=np.stack(modes),
        metric=metric,
    )


@dataclass(frozen=True)
class NearestAnchorPartition(Partition):
    """Compartment of ``x`` is the mode owning the anchor nearest to ``x``.

    Ties go to the lowest mode index.
    """

    anchors: np.ndarray
    anchor_modes: np.ndarray
    n_compartments: int
    metric: Optional[MahalanobisMetric] = None

    def __post_init__(self):
        object.__setattr__(self, "anchors", np.atleast_2d(np.asarray(self.anchors, float)))
        object.__setattr__(self, "anchor_modes", np.asarray(self.anchor_modes, dtype=int))

    def region(self, x) -> int:
        x = np.asarray(x, dtype=float)
        if self.metric is not None:
            d2 = self.metric.squared_distances(self.anchors, x)
        else:
            d2 = _euclidean_squared(self.anchors, x)
        best = np.full(self.n_compartments, np.inf)
        np.minimum.at(best, self.anchor_modes, d2)
        return int(np.argmin(best))


def build_partition(anchor_set: AnchorSet) -> NearestAnchorPartition:
    return NearestAnchorPartition(
        anchors=anchor_set.anchors,
        anchor_modes=anchor_set.assignments,
        n_compartments=anchor_set.modes.shape[0],
        metric=anchor_set.metric,
    )


def nearest_mode_partition(modes, metric: Optional[MahalanobisMetric] = None) -> NearestAnchorPartition:
    """Each mode is its own anchor; regions are nearest-mode cells."""
    modes = np.atleast_2d(np.asarray(modes, dtype=float))
    return NearestAnchorPartition(
        anchors=modes,
        anchor_modes=np.arange(modes.shape[0]),
        n_compartments=modes.shape[0],
        metric=metric,
    )


def low_discrepancy_anchors(lower, upper, count: int) -> np.ndarray:
    """Deterministic Sobol points covering the box where modes are expected."""
    lower = np.atleast_1d(np.asarray(lower, dtype=float))
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    sampler = qmc.Sobol(d=lower.size, scramble=False)
    pts = sampler.random(count)
    return lower + pts * (upper - lower)
