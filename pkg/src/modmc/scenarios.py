"""Built-in target models and benchmark scenario builders.

Two scenarios drive the benchmark CLI: an isotropic two-component Gaussian
mixture whose components differ in scale, and a sparse-regression
posterior whose collinear design and sparsity-inducing prior produce two
well-separated modes.  Both come with everything a run needs: model, base
density, partition, test functions, step sizes, and in-compartment
starting points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .models import (
    IsotropicGaussianBase,
    Partition,
    TargetModel,
    gaussian_base,
    preconditioned_model,
    reparametrize_function,
)
from .partition import OptimizerSettings, find_modes, nearest_mode_partition
from .streams import INIT, substream


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


# -- isotropic Gaussian mixture ----------------------------------------------


@dataclass(frozen=True)
class GaussianMixtureDensity:
    """Mixture of isotropic Gaussian components, log scale throughout."""

    means: np.ndarray
    sds: np.ndarray
    log_mix: np.ndarray
    _inv_var: np.ndarray = field(init=False, repr=False)
    _log_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        sds = np.asarray(self.sds, dtype=float)
        log_mix = np.asarray(self.log_mix, dtype=float)
        d = means.shape[1]
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)
        object.__setattr__(self, "log_mix", log_mix)
        object.__setattr__(self, "_inv_var", 1.0 / (sds * sds))
        object.__setattr__(
            self, "_log_norm", log_mix - d * np.log(sds * math.sqrt(2.0 * math.pi))
        )

    def _component_logs(self, x):
        diff = self.means - x
        q = np.einsum("ij,ij->i", diff, diff)
        return self._log_norm - 0.5 * q * self._inv_var

    def log_density(self, x) -> float:
        a = self._component_logs(x)
        m = a.max()
        return float(m + np.log(np.exp(a - m).sum()))

    def grad(self, x) -> np.ndarray:
        diff = self.means - x
        q = np.einsum("ij,ij->i", diff, diff)
        a = self._log_norm - 0.5 * q * self._inv_var
        r = np.exp(a - a.max())
        r /= r.sum()
        return (r * self._inv_var) @ diff


def gaussian_mixture_model(means, sds, weights=None) -> TargetModel:
    means = np.atleast_2d(np.asarray(means, dtype=float))
    n_comp = means.shape[0]
    if weights is None:
        log_mix = np.full(n_comp, -math.log(n_comp))
    else:
        w = np.asarray(weights, dtype=float)
        log_mix = np.log(w / w.sum())
    density = GaussianMixtureDensity(means=means, sds=np.asarray(sds, float), log_mix=log_mix)
    return TargetModel(
        dim=means.shape[1], log_gamma=density.log_density, grad_log_gamma=density.grad
    )


@dataclass(frozen=True)
class ComponentDensityPartition(Partition):
    """Assign each point to the mixture component of highest density.

    Mirrors the closed-form shortcut available for Gaussian mixtures; ties
    go to the lowest component index.
    """

    means: np.ndarray
    sds: np.ndarray
    _inv_var: np.ndarray = field(init=False, repr=False)
    _log_norm: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, float))
        sds = np.asarray(self.sds, dtype=float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sds", sds)
        object.__setattr__(self, "n_compartments", means.shape[0])
        object.__setattr__(self, "_inv_var", 1.0 / (sds * sds))
        object.__setattr__(self, "_log_norm", -means.shape[1] * np.log(sds))

    def region(self, x) -> int:
        diff = self.means - x
        q = np.einsum("ij,ij->i", diff, diff)
        return int(np.argmax(self._log_norm - 0.5 * q * self._inv_var))


@dataclass(frozen=True)
class NearerToFirstMode:
    """Indicator that a point is closer to the first mode than the second."""

    mu1: np.ndarray
    mu2: np.ndarray

    def __call__(self, x) -> float:
        d1 = x - self.mu1
        d2 = x - self.mu2
        return 1.0 if float(d1 @ d1) < float(d2 @ d2) else 0.0


def mixture_true_pi_h(mu1, mu2, sd1: float, sd2: float) -> float:
    """Exact probability of being nearer the first component's mean.

    The event is a half-space, so each component contributes a normal tail
    probability of the scaled distance between the means.
    """
    dist = float(np.linalg.norm(np.asarray(mu1, float) - np.asarray(mu2, float)))
    return 0.5 * (_phi(dist / (2.0 * sd1)) + 1.0 - _phi(dist / (2.0 * sd2)))


@dataclass(frozen=True)
class Scenario:
    """A ready-to-run benchmark problem."""

    name: str
    model: TargetModel
    base: object
    partition: Partition
    h: tuple
    modes: np.ndarray
    initial_points: tuple
    eps: float
    eps0: float
    n_leapfrog: int
    true_pi_h: Optional[float] = None
    extras: dict = field(default_factory=dict)


def _point_in_region(partition: Partition, center, i: int, scale: float, rng) -> np.ndarray:
    """Jitter around a center until the draw lands in compartment ``i``."""
    center = np.asarray(center, dtype=float)
    if partition.region(center) == i:
        return center
    spread = scale
    for attempt in range(400):
        x = center + spread * rng.standard_normal(center.size)
        if partition.region(x) == i:
            return x
        if (attempt + 1) % 20 == 0:
            spread *= 1.5
    raise ValueError(f"could not find a starting point inside compartment {i}")


def gaussian_mixture_scenario(d: int, rho: float, seed: int) -> Scenario:
    """Two isotropic components with volume ratio ``rho``.

    Component means are drawn uniformly on ``[-10, 10]^d``; the first
    component has marginal sd 0.1 and the second ``rho**(1/d)`` times
    that, so the wide component occupies about ``rho`` times the volume.
    The test function is the nearer-to-first-mode indicator and the base
    density is a broad centered normal.
    """
    if d < 1 or rho <= 0:
        raise ValueError("need d >= 1 and rho > 0")
    rng = substream(seed, INIT, 0)
    mu1 = rng.uniform(-10.0, 10.0, size=d)
    mu2 = rng.uniform(-10.0, 10.0, size=d)
    sd1 = 0.1
    sd2 = float(rho ** (1.0 / d) * sd1)
    means = np.stack([mu1, mu2])
    sds = np.array([sd1, sd2])
    model = gaussian_mixture_model(means, sds)
    partition = ComponentDensityPartition(means=means, sds=sds)
    base = gaussian_base(d, 20.0)
    h = NearerToFirstMode(mu1=mu1, mu2=mu2)
    init_rng = substream(seed, INIT, 1)
    starts = tuple(
        _point_in_region(partition, means[i], i, sds[i], init_rng) for i in range(2)
    )
    return Scenario(
        name="gaussian-mixture",
        model=model,
        base=base,
        partition=partition,
        h=(h,),
        modes=means,
        initial_points=starts,
        eps=0.1,
        eps0=10.0,
        n_leapfrog=10,
        true_pi_h=mixture_true_pi_h(mu1, mu2, sd1, sd2),
        extras={"mu1": mu1, "mu2": mu2, "sd1": sd1, "sd2": sd2, "d": d, "rho": rho},
    )


# -- sparse regression with a sparsity-inducing mixture prior ----------------


@dataclass(frozen=True)
class SpikeSlabRegressionDensity:
    """Gaussian-likelihood regression posterior with a two-component
    mixture prior on each coefficient.

    Each coefficient independently gets a wide "slab" normal with small
    prior probability and a narrow "spike" normal otherwise; coefficients
    that need to be large pay the slab's entry fee once, which is what
    separates the posterior modes under collinear designs.
    """

    design: np.ndarray
    response: np.ndarray
    sigma_slab: float = 10.0
    sigma_spike: float = 1.0
    slab_prob: float = 1e-4
    _gram: np.ndarray = field(init=False, repr=False)
    _xty: np.ndarray = field(init=False, repr=False)
    _yty: float = field(init=False, repr=False)
    _const_slab: float = field(init=False, repr=False)
    _const_spike: float = field(init=False, repr=False)
    _inv_var_slab: float = field(init=False, repr=False)
    _inv_var_spike: float = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.design, dtype=float)
        y = np.asarray(self.response, dtype=float)
        object.__setattr__(self, "design", x)
        object.__setattr__(self, "response", y)
        object.__setattr__(self, "_gram", x.T @ x)
        object.__setattr__(self, "_xty", x.T @ y)
        object.__setattr__(self, "_yty", float(y @ y))
        object.__setattr__(self, "_const_slab", math.log(self.slab_prob) - math.log(self.sigma_slab))
        object.__setattr__(self, "_const_spike", math.log1p(-self.slab_prob) - math.log(self.sigma_spike))
        object.__setattr__(self, "_inv_var_slab", self.sigma_slab**-2)
        object.__setattr__(self, "_inv_var_spike", self.sigma_spike**-2)

    def _prior_component_logs(self, b):
        bb = b * b
        a_slab = self._const_slab - 0.5 * bb * self._inv_var_slab
        a_spike = self._const_spike - 0.5 * bb * self._inv_var_spike
        return a_slab, a_spike

    def log_density(self, b) -> float:
        # residual form: the expanded quadratic cancels catastrophically near the mode
        resid = self.response - self.design @ b
        a_slab, a_spike = self._prior_component_logs(b)
        hi = np.maximum(a_slab, a_spike)
        prior = hi + np.log(np.exp(a_slab - hi) + np.exp(a_spike - hi))
        return -0.5 * float(resid @ resid) + float(prior.sum())

    def grad(self, b) -> np.ndarray:
        lik = self._xty - self._gram @ b
        a_slab, a_spike = self._prior_component_logs(b)
        r = 1.0 / (1.0 + np.exp(a_spike - a_slab))  # slab responsibility
        prior = -b * (r * self._inv_var_slab + (1.0 - r) * self._inv_var_spike)
        return lik + prior


def spike_slab_regression_model(
    design, response, sigma_slab=10.0, sigma_spike=1.0, slab_prob=1e-4
) -> TargetModel:
    density = SpikeSlabRegressionDensity(
        design=design,
        response=response,
        sigma_slab=sigma_slab,
        sigma_spike=sigma_spike,
        slab_prob=slab_prob,
    )
    d = density.design.shape[1]
    omega = density._gram + np.eye(d) / sigma_slab**2
    return TargetModel(
        dim=d,
        log_gamma=density.log_density,
        grad_log_gamma=density.grad,
        preconditioner=omega,
    )


@dataclass(frozen=True)
class FirstCoordinates:
    count: int

    def __call__(self, x):
        return np.asarray(x, dtype=float)[: self.count]


def sparse_regression_scenario(seed: int, n_obs: int = 100, dim: int = 30) -> Scenario:
    """Collinear-design regression with a sparsity-inducing prior.

    The first two design columns are identical, so only the sum of the
    first two coefficients is identified by the likelihood; the prior then
    concentrates the posterior on two symmetric modes where one of the two
    takes the whole effect.  Sampling runs in coordinates whitened by the
    curvature proxy ``X^T X + I / sigma_slab^2``.
    """
    rng = substream(seed, INIT, 0)
    design = rng.standard_normal((n_obs, dim))
    design[:, 1] = design[:, 0]
    b_true = np.zeros(dim)
    b_true[:4] = (10.0, 15.0, -10.0, -15.0)
    response = design @ b_true + rng.standard_normal(n_obs)

    model_b = spike_slab_regression_model(design, response)
    model, reparam = preconditioned_model(model_b)

    # ridge solution sits on the likelihood ridge between the two modes
    omega = model_b.preconditioner
    ridge = np.linalg.solve(omega, design.T @ response)
    split = np.zeros(dim)
    split[0], split[1] = 8.0, -8.0
    anchors_b = [ridge + split, ridge - split]
    anchors = [reparam.to_latent(a) for a in anchors_b]
    found = find_modes(
        model,
        anchors,
        OptimizerSettings(method="ascent", learning_rate=1.0, tol=1e-6, merge_radius=1e-3),
    )
    if found.modes.shape[0] != 2:
        raise ValueError(
            f"expected two posterior modes, found {found.modes.shape[0]}"
        )
    modes_b = np.stack([reparam.from_latent(m) for m in found.modes])
    order = np.argsort(-modes_b[:, 0])  # mode with the larger first coefficient first
    modes_latent = found.modes[order]
    modes_b = modes_b[order]

    partition = nearest_mode_partition(modes_latent)
    base = gaussian_base(dim, 20.0)
    h = reparametrize_function(FirstCoordinates(6), reparam)
    return Scenario(
        name="sparse-regression",
        model=model,
        base=base,
        partition=partition,
        h=(h,),
        modes=modes_latent,
        initial_points=tuple(modes_latent),
        eps=0.5,
        eps0=10.0,
        n_leapfrog=10,
        true_pi_h=None,
        extras={
            "design": design,
            "response": response,
            "b_true": b_true,
            "modes_b": modes_b,
            "reparam": reparam,
            "d": dim,
        },
    )
