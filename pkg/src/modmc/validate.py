"""Finite-state oracle suite behind ``modmc validate``.

Each check compares a sampler ingredient against an exactly computable
quantity on a small enumerable chain: the QR stationary vector against
power iteration, the constrained kernel against detailed balance, the
weighted stationary identity, fractional-counter unbiasedness and variance
reduction, and the counter central-limit covariance against replicated
simulation.  The acceptance test suite runs the same fixtures at full
scale.
"""

from __future__ import annotations

import time

import numpy as np

from . import finite
from .models import WeightTable
from .stationary import (
    compartment_probabilities,
    power_iteration_oracle,
    stationary_distribution,
)


def path_random_walk(n: int) -> np.ndarray:
    """Symmetric +/-1 proposal on a path; mass held at the reflecting ends."""
    m = np.zeros((n, n))
    for s in range(n):
        for t in (s - 1, s + 1):
            if 0 <= t < n:
                m[s, t] = 0.5
    m[0, 0] = 0.5
    m[n - 1, n - 1] = 0.5
    return m


def six_state_example(weights=(3.0, 1.0)):
    """The canonical two-compartment chain used across the oracle checks."""
    pi = np.array([0.22, 0.10, 0.15, 0.20, 0.18, 0.15])
    pi = pi / pi.sum()
    labels = np.array([0, 0, 0, 1, 1, 1])
    w = np.asarray(weights, dtype=float)
    pi_w = pi * w[labels]
    pi_w = pi_w / pi_w.sum()
    proposal = path_random_walk(6)
    matrix = finite.mh_matrix(pi_w, proposal)
    return pi, labels, w, pi_w, proposal, matrix


def four_state_example():
    pi = np.array([0.35, 0.20, 0.30, 0.15])
    pi = pi / pi.sum()
    labels = np.array([0, 0, 1, 1])
    proposal = path_random_walk(4)
    matrix = finite.mh_matrix(pi, proposal)
    return pi, labels, proposal, matrix


def random_irreducible_matrix(rng: np.random.Generator) -> np.ndarray:
    n = int(rng.integers(2, 9))
    m = rng.random((n, n)) + 1e-3
    return m / m.sum(axis=1, keepdims=True)


def check_eigenvector_oracle(n_matrices: int = 1000, seed: int = 2024):
    rng = np.random.default_rng(seed)
    worst = 0.0
    start = time.perf_counter()
    for _ in range(n_matrices):
        q = random_irreducible_matrix(rng)
        worst = max(
            worst,
            float(np.max(np.abs(stationary_distribution(q) - power_iteration_oracle(q)))),
        )
    elapsed = time.perf_counter() - start
    return worst <= 1e-9, f"worst deviation {worst:.2e} over {n_matrices} matrices in {elapsed:.1f}s"


def check_constrained_reversibility():
    pi, labels, w, pi_w, proposal, matrix = six_state_example()
    worst = 0.0
    for i in (0, 1):
        m_i, _ = finite.constrained_kernel(matrix, labels, i)
        pi_i = finite.conditional_distribution(pi, labels, i)
        worst = max(worst, finite.detailed_balance_defect(m_i, pi_i))
    return worst <= 1e-14, f"worst detailed-balance defect {worst:.2e}"


def check_weighted_stationary_identity():
    pi, labels, w, pi_w, proposal, matrix = six_state_example(weights=(3.0, 1.0))
    q = finite.exact_rate_matrix(matrix, pi, labels)
    p = stationary_distribution(q)
    pi_a = np.array([pi[labels == 0].sum(), pi[labels == 1].sum()])
    expected = w * pi_a / (w * pi_a).sum()
    err = float(np.max(np.abs(p - expected)))
    recovered = compartment_probabilities(p, WeightTable.from_weights(w), 0)
    err2 = float(np.max(np.abs(recovered - pi_a)))
    return err <= 1e-12 and err2 <= 1e-12, f"eigenvector error {err:.2e}, recovery error {err2:.2e}"


def check_rao_blackwell(n_reps: int = 10_000, seed: int = 7):
    pi, labels, w, pi_w, proposal, matrix = six_state_example()
    alpha = finite.acceptance_matrix(pi_w, proposal)
    i, j = 0, 1
    pi_i = finite.conditional_distribution(pi, labels, i)
    idx = np.flatnonzero(labels == i)
    jdx = np.flatnonzero(labels == j)
    expected_binary = float(pi_i @ matrix[np.ix_(idx, jdx)].sum(axis=1))
    expected_fractional = float(
        pi_i @ (alpha[np.ix_(idx, jdx)] * proposal[np.ix_(idx, jdx)]).sum(axis=1)
    )
    identity_err = abs(expected_binary - expected_fractional)

    rng_b = np.random.default_rng(seed)
    rng_f = np.random.default_rng(seed + 1)
    binary = finite.simulate_binary_counters(matrix, pi, labels, i, 1, n_reps, rng_b)[:, 0]
    frac = finite.simulate_fractional_counters(
        proposal, alpha, pi, labels, i, 1, n_reps, rng_f
    )[:, 0]
    var_b = binary.var(ddof=1)
    var_f = frac.var(ddof=1)

    def var_se(x):
        c = x - x.mean()
        m4 = (c**4).mean()
        s2 = c.var(ddof=1)
        return np.sqrt(max(m4 - s2**2, 0.0) / x.size)

    margin = 3.0 * float(np.hypot(var_se(binary), var_se(frac)))
    ok = identity_err <= 1e-14 and var_f <= var_b + margin
    return ok, (
        f"expected-increment gap {identity_err:.2e}; "
        f"var fractional {var_f:.4f} vs binary {var_b:.4f} (+3se {margin:.4f})"
    )


def check_counter_clt(n_reps: int = 10_000, t_steps: int = 10_000, seed: int = 13):
    pi, labels, proposal, matrix = four_state_example()
    i = 0
    sigma = finite.clt_counter_covariance(matrix, pi, labels, i, truncation=100_000)[0, 0]
    rng = np.random.default_rng(seed)
    counts = finite.simulate_binary_counters(matrix, pi, labels, i, t_steps, n_reps, rng)[:, 0]
    q01 = finite.exact_rate_matrix(matrix, pi, labels)[0, 1]
    normalized = (counts - t_steps * q01) / np.sqrt(t_steps)
    emp = normalized.var(ddof=1)
    se = emp * np.sqrt(2.0 / (n_reps - 1))
    ok = abs(emp - sigma) <= 3.0 * se
    return ok, f"series {sigma:.5f} vs empirical {emp:.5f} (3se {3 * se:.5f})"


def run_validation_suite(quick: bool = True) -> int:
    checks = [
        (
            "stationary eigenvector vs power iteration",
            lambda: check_eigenvector_oracle(200 if quick else 1000),
        ),
        ("constrained kernel detailed balance", check_constrained_reversibility),
        ("weighted stationary identity", check_weighted_stationary_identity),
        (
            "fractional counter unbiasedness and variance",
            lambda: check_rao_blackwell(2000 if quick else 10_000),
        ),
        (
            "counter central-limit covariance",
            lambda: check_counter_clt(*(2000, 2000) if quick else (10_000, 10_000)),
        ),
    ]
    failures = 0
    for name, fn in checks:
        ok, detail = fn()
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(f"{status} {name}: {detail}")
    return 1 if failures else 0
