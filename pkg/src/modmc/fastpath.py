"""Compiled leapfrog trajectories for the built-in scenario models.

The generic integrator dispatches through Python for every gradient, which
dominates the per-step cost for low-dimensional targets.  When numba is
available, the resolver below recognizes the built-in mixture and
regression densities paired with an isotropic Gaussian base and swaps in a
jitted whole-trajectory integrator with identical arithmetic.  Everything
falls back to the generic path when the model is user-supplied or numba is
missing; results differ only at floating-point rounding level, and the
test suite cross-checks the two routes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .models import BaseDensity, IsotropicGaussianBase, TargetModel, TemperedTarget, _ReparamedDensity
from .scenarios import GaussianMixtureDensity, SpikeSlabRegressionDensity

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):  # pragma: no cover
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _mixture_trajectory(x, rho, means, inv_var, log_norm, beta, x0, inv_var0, eps, n_steps):
    d = x.shape[0]
    n_comp = means.shape[0]
    x = x.copy()
    rho = rho.copy()
    if n_steps == 0:
        return x, rho
    a = np.empty(n_comp)
    g = np.empty(d)
    for step in range(n_steps + 1):
        for c in range(n_comp):
            q = 0.0
            for k in range(d):
                diff = means[c, k] - x[k]
                q += diff * diff
            a[c] = log_norm[c] - 0.5 * q * inv_var[c]
        hi = a[0]
        for c in range(1, n_comp):
            if a[c] > hi:
                hi = a[c]
        total = 0.0
        for c in range(n_comp):
            a[c] = np.exp(a[c] - hi)
            total += a[c]
        for k in range(d):
            acc = 0.0
            for c in range(n_comp):
                acc += (a[c] / total) * inv_var[c] * (means[c, k] - x[k])
            g[k] = beta * acc + (1.0 - beta) * inv_var0 * (x0[k] - x[k])
        scale = 0.5 * eps if (step == 0 or step == n_steps) else eps
        for k in range(d):
            rho[k] += scale * g[k]
        if step < n_steps:
            for k in range(d):
                x[k] += eps * rho[k]
    return x, rho


@njit(cache=True)
def _regression_trajectory(
    c_lat,
    rho,
    inv_root,
    gram,
    xty,
    const_slab,
    const_spike,
    inv_var_slab,
    inv_var_spike,
    beta,
    x0,
    inv_var0,
    eps,
    n_steps,
):
    d = c_lat.shape[0]
    c_lat = c_lat.copy()
    rho = rho.copy()
    if n_steps == 0:
        return c_lat, rho
    g = np.empty(d)
    for step in range(n_steps + 1):
        b = inv_root @ c_lat
        grad_b = xty - gram @ b
        for k in range(d):
            bb = b[k] * b[k]
            gap = (const_spike - 0.5 * bb * inv_var_spike) - (
                const_slab - 0.5 * bb * inv_var_slab
            )
            r = 1.0 / (1.0 + np.exp(gap))
            grad_b[k] += -b[k] * (r * inv_var_slab + (1.0 - r) * inv_var_spike)
        grad_lat = inv_root @ grad_b
        for k in range(d):
            g[k] = beta * grad_lat[k] + (1.0 - beta) * inv_var0 * (x0[k] - c_lat[k])
        scale = 0.5 * eps if (step == 0 or step == n_steps) else eps
        for k in range(d):
            rho[k] += scale * g[k]
        if step < n_steps:
            for k in range(d):
                c_lat[k] += eps * rho[k]
    return c_lat, rho


@dataclass(frozen=True)
class MixtureTrajectory:
    means: np.ndarray
    inv_var: np.ndarray
    log_norm: np.ndarray
    beta: float
    x0: np.ndarray
    inv_var0: float

    def __call__(self, x, rho, step_size, n_steps):
        return _mixture_trajectory(
            x,
            rho,
            self.means,
            self.inv_var,
            self.log_norm,
            self.beta,
            self.x0,
            self.inv_var0,
            step_size,
            n_steps,
        )


@dataclass(frozen=True)
class RegressionTrajectory:
    inv_root: np.ndarray
    gram: np.ndarray
    xty: np.ndarray
    const_slab: float
    const_spike: float
    inv_var_slab: float
    inv_var_spike: float
    beta: float
    x0: np.ndarray
    inv_var0: float

    def __call__(self, x, rho, step_size, n_steps):
        return _regression_trajectory(
            x,
            rho,
            self.inv_root,
            self.gram,
            self.xty,
            self.const_slab,
            self.const_spike,
            self.inv_var_slab,
            self.inv_var_spike,
            self.beta,
            self.x0,
            self.inv_var0,
            step_size,
            n_steps,
        )


def _gaussian_base_owner(base: Optional[BaseDensity]) -> Optional[IsotropicGaussianBase]:
    if base is None:
        return None
    owner = getattr(base.log_q, "__self__", None)
    return owner if isinstance(owner, IsotropicGaussianBase) else None


def _base_params(base: Optional[BaseDensity], beta: float, dim: int):
    """Base center and inverse variance, or zeros when beta = 1 needs none."""
    if beta == 1.0:
        return np.zeros(dim), 0.0
    owner = _gaussian_base_owner(base)
    if owner is None:
        return None
    return np.asarray(owner.x0, dtype=float), float(1.0 / (owner.sd * owner.sd))


def resolve_state_target(
    model: TargetModel, base: Optional[BaseDensity], beta: float
) -> TemperedTarget:
    """Tempered target with a compiled trajectory when the model allows it."""
    generic = TemperedTarget(model=model, base=base, beta=beta)
    if not HAVE_NUMBA:
        return generic
    owner = getattr(model.log_gamma, "__self__", None)
    if isinstance(owner, GaussianMixtureDensity):
        params = _base_params(base, beta, model.dim)
        if params is None:
            return generic
        x0, inv_var0 = params
        traj = MixtureTrajectory(
            means=owner.means,
            inv_var=owner._inv_var,
            log_norm=owner._log_norm,
            beta=float(beta),
            x0=x0,
            inv_var0=inv_var0,
        )
        return TemperedTarget(model=model, base=base, beta=beta, trajectory=traj)
    if isinstance(owner, _ReparamedDensity):
        inner = getattr(owner.model.log_gamma, "__self__", None)
        if isinstance(inner, SpikeSlabRegressionDensity):
            params = _base_params(base, beta, model.dim)
            if params is None:
                return generic
            x0, inv_var0 = params
            traj = RegressionTrajectory(
                inv_root=owner.reparam.inverse,
                gram=inner._gram,
                xty=inner._xty,
                const_slab=inner._const_slab,
                const_spike=inner._const_spike,
                inv_var_slab=inner._inv_var_slab,
                inv_var_spike=inner._inv_var_spike,
                beta=float(beta),
                x0=x0,
                inv_var0=inv_var0,
            )
            return TemperedTarget(model=model, base=base, beta=beta, trajectory=traj)
    return generic


def warmup() -> None:
    """Trigger jit compilation once, before worker processes fork."""
    if not HAVE_NUMBA:
        return
    x = np.zeros(2)
    rho = np.zeros(2)
    _mixture_trajectory(
        x, rho, np.zeros((2, 2)), np.ones(2), np.zeros(2), 0.5, np.zeros(2), 1.0, 0.1, 2
    )
    _regression_trajectory(
        x, rho, np.eye(2), np.eye(2), np.zeros(2), -1.0, -0.5, 1.0, 0.25, 0.5,
        np.zeros(2), 1.0, 0.1, 2,
    )
