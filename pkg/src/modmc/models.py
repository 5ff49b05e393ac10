"""Target, base, and partition abstractions shared by all samplers.

All densities are handled in log scale throughout; tuned mixture weights can
span more than a hundred log units, so linear-scale weights are never stored.
Every type here is immutable after construction and safe to share across
concurrently running chains.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import NonFiniteDensity

Point = np.ndarray


def _is_bad(value: float) -> bool:
    # -inf is a legitimate zero-density value; NaN and +inf are not.
    return math.isnan(value) or value == math.inf


@dataclass(frozen=True)
class TargetModel:
    """Unnormalized target density with its gradient.

    ``log_gamma`` returns the log of the unnormalized density and
    ``grad_log_gamma`` its gradient.  ``preconditioner``, when given, is a
    symmetric positive-definite matrix whose square root reparametrizes the
    space before any kernel runs (see :func:`preconditioned_model`); kernels
    themselves never see it.
    """

    dim: int
    log_gamma: Callable[[Point], float]
    grad_log_gamma: Callable[[Point], Point]
    preconditioner: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        if self.preconditioner is not None:
            p = np.asarray(self.preconditioner, dtype=float)
            if p.shape != (self.dim, self.dim):
                raise ValueError("preconditioner must be dim x dim")
            if not np.allclose(p, p.T, atol=1e-10):
                raise ValueError("preconditioner must be symmetric")


@dataclass(frozen=True)
class BaseDensity:
    """Wide reference density used as the hot end of a temperature ladder."""

    log_q: Callable[[Point], float]
    grad_log_q: Callable[[Point], Point]
    sampler: Callable[[np.random.Generator], Point]
    reference_point: np.ndarray
    marginal_sd: float

    def __post_init__(self):
        if not self.marginal_sd > 0:
            raise ValueError("marginal_sd must be positive")


class Partition:
    """A total, deterministic map from points to compartments ``0..L-1``.

    Boundary ties are broken toward the lowest eligible index; boundaries
    have measure zero under continuous targets, so the rule only matters
    for reproducibility.
    """

    n_compartments: int

    def region(self, x) -> int:
        raise NotImplementedError


def region_of(partition: Partition, x) -> int:
    """Compartment index of ``x`` (0-based)."""
    return partition.region(x)


@dataclass(frozen=True)
class WeightTable:
    """Per-(level, compartment) mixture weights, stored in log scale.

    Shape is ``(K+1, L)``; a plain single-level run uses ``K = 0``.
    """

    log_w: np.ndarray

    def __post_init__(self):
        lw = np.asarray(self.log_w, dtype=float)
        if lw.ndim != 2:
            raise ValueError("log_w must be a (levels, compartments) matrix")
        if not np.all(np.isfinite(lw)):
            raise ValueError("all weights must be strictly positive and finite")
        object.__setattr__(self, "log_w", lw)

    @classmethod
    def from_weights(cls, w) -> "WeightTable":
        w = np.atleast_2d(np.asarray(w, dtype=float))
        if np.any(w <= 0):
            raise ValueError("weights must be strictly positive")
        return cls(np.log(w))

    @classmethod
    def uniform(cls, n_levels: int, n_compartments: int) -> "WeightTable":
        return cls(np.zeros((n_levels, n_compartments)))

    @property
    def n_levels(self) -> int:
        return self.log_w.shape[0]

    @property
    def n_compartments(self) -> int:
        return self.log_w.shape[1]

    def row(self, level: int) -> np.ndarray:
        return self.log_w[level]


@dataclass(frozen=True)
class Ladder:
    """Inverse temperature levels ``0 = beta_0 < ... < beta_K = 1``."""

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.ndim != 1 or b.size < 2:
            raise ValueError("ladder needs at least the two endpoint levels")
        if b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("ladder must start at exactly 0 and end at exactly 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("ladder levels must be strictly increasing")
        object.__setattr__(self, "betas", b)

    @property
    def top(self) -> int:
        return self.betas.size - 1

    def __len__(self) -> int:
        return self.betas.size


def log_ratio(model: TargetModel, base: BaseDensity, x) -> float:
    """log gamma(x) - log q(x), the tempering odds at ``x``."""
    lg = float(model.log_gamma(x))
    lq = float(base.log_q(x))
    if not (math.isfinite(lg) and math.isfinite(lq)):
        raise NonFiniteDensity(x, (lg, lq))
    return lg - lq


def log_pi_aug(
    model: TargetModel,
    base: BaseDensity,
    partition: Partition,
    weights: WeightTable,
    ladder: Ladder,
    k: int,
    x,
) -> float:
    """Log of the unnormalized level-augmented mixture density at ``(k, x)``.

    Equals ``log w[k, region(x)] + beta_k * (log gamma - log q) + log q``.
    """
    if not 0 <= k <= ladder.top:
        raise ValueError(f"level {k} outside 0..{ladder.top}")
    i = partition.region(x)
    lg = float(model.log_gamma(x))
    lq = float(base.log_q(x))
    if _is_bad(lg) or _is_bad(lq):
        raise NonFiniteDensity(x, (lg, lq))
    beta = float(ladder.betas[k])
    if beta == 1.0:
        tempered = lg
    elif beta == 0.0:
        tempered = lq
    else:
        tempered = lq + beta * (lg - lq)
    return float(weights.log_w[k, i]) + tempered


@dataclass(frozen=True)
class TemperedTarget:
    """The invariant density of a state move at one fixed ladder level.

    With ``beta = 1`` and no base this is just the target.  Gradients are
    convex combinations of the target and base gradients, matching the
    Hessian interpolation used for the step-size schedule.  ``trajectory``,
    when set, is a compiled drop-in for the generic leapfrog integrator
    with signature ``(x, rho, step_size, n_steps) -> (x', rho')``.
    """

    model: TargetModel
    base: Optional[BaseDensity] = None
    beta: float = 1.0
    trajectory: Optional[Callable] = None

    def log_parts(self, x) -> tuple[float, float]:
        lg = float(self.model.log_gamma(x))
        lq = float(self.base.log_q(x)) if self.base is not None else 0.0
        return lg, lq

    def combine(self, lg: float, lq: float) -> float:
        if self.beta == 1.0:
            return lg
        if self.beta == 0.0:
            return lq
        return lq + self.beta * (lg - lq)

    def log_density(self, x) -> float:
        lg, lq = self.log_parts(x)
        return self.combine(lg, lq)

    def grad_log_density(self, x) -> np.ndarray:
        if self.beta == 1.0:
            return self.model.grad_log_gamma(x)
        g = self.base.grad_log_q(x)
        if self.beta == 0.0:
            return g
        return self.beta * self.model.grad_log_gamma(x) + (1.0 - self.beta) * g


@dataclass(frozen=True)
class IsotropicGaussianBase:
    """Isotropic normal base density N(x0, sd^2 I)."""

    x0: np.ndarray
    sd: float

    def log_density(self, x):
        d = x - self.x0
        n = d.size
        return -0.5 * float(d @ d) / (self.sd * self.sd) - n * math.log(
            self.sd * math.sqrt(2.0 * math.pi)
        )

    def grad(self, x):
        return (self.x0 - x) / (self.sd * self.sd)

    def draw(self, rng: np.random.Generator):
        return self.x0 + self.sd * rng.standard_normal(self.x0.size)

    def as_base_density(self) -> BaseDensity:
        return BaseDensity(
            log_q=self.log_density,
            grad_log_q=self.grad,
            sampler=self.draw,
            reference_point=np.asarray(self.x0, dtype=float),
            marginal_sd=float(self.sd),
        )


def gaussian_base(dim: int, sd: float, center=None) -> BaseDensity:
    x0 = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    return IsotropicGaussianBase(x0=x0, sd=float(sd)).as_base_density()


# -- optional linear reparametrization ------------------------------------


@dataclass(frozen=True)
class LinearReparam:
    """Invertible map ``latent = forward @ original`` and its inverse."""

    forward: np.ndarray
    inverse: np.ndarray

    def to_latent(self, x):
        return self.forward @ x

    def from_latent(self, c):
        return self.inverse @ c


@dataclass(frozen=True)
class _ReparamedDensity:
    model: TargetModel
    reparam: LinearReparam

    def log_density(self, c):
        return self.model.log_gamma(self.reparam.inverse @ c)

    def grad(self, c):
        # chain rule with a symmetric inverse factor
        return self.reparam.inverse @ self.model.grad_log_gamma(self.reparam.inverse @ c)


@dataclass(frozen=True)
class _ReparamedFunction:
    fn: Callable
    reparam: LinearReparam

    def __call__(self, c):
        return self.fn(self.reparam.inverse @ c)


def preconditioned_model(model: TargetModel) -> tuple[TargetModel, LinearReparam]:
    """Reparametrize by the square root of the model's preconditioner.

    Returns the model expressed in the latent coordinates together with the
    transform, so callers can map anchors, modes, and test functions.  The
    Jacobian is constant and drops out of all Metropolis ratios.
    """
    if model.preconditioner is None:
        raise ValueError("model has no preconditioner")
    omega = np.asarray(model.preconditioner, dtype=float)
    evals, vecs = np.linalg.eigh(omega)
    if np.any(evals <= 0):
        raise ValueError("preconditioner must be positive definite")
    root = (vecs * np.sqrt(evals)) @ vecs.T
    inv_root = (vecs / np.sqrt(evals)) @ vecs.T
    reparam = LinearReparam(forward=root, inverse=inv_root)
    density = _ReparamedDensity(model=model, reparam=reparam)
    latent = TargetModel(
        dim=model.dim,
        log_gamma=density.log_density,
        grad_log_gamma=density.grad,
    )
    return latent, reparam


def reparametrize_function(fn: Callable, reparam: LinearReparam) -> Callable:
    """Compose ``fn`` with the inverse transform (evaluate at original coords)."""
    return _ReparamedFunction(fn=fn, reparam=reparam)


# -- gradient validation ----------------------------------------------------


def finite_difference_gradient(f: Callable[[Point], float], x: np.ndarray, rel_step: float = 1e-5):
    """Central finite differences with per-coordinate step ``rel_step * scale``."""
    x = np.asarray(x, dtype=float)
    g = np.empty_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def check_gradient(
    log_density: Callable[[Point], float],
    grad: Callable[[Point], Point],
    points,
    rel_step: float = 1e-5,
) -> float:
    """Worst relative disagreement between ``grad`` and finite differences.

    Gradient correctness is a library-level contract: models supply their
    own gradients and this helper validates them at sample points.
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        ga = np.asarray(grad(x), dtype=float)
        gn = finite_difference_gradient(log_density, x, rel_step)
        denom = max(1.0, float(np.linalg.norm(gn)))
        worst = max(worst, float(np.linalg.norm(ga - gn)) / denom)
    return worst
