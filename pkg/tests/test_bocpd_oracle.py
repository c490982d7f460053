"""Cross-validation of the run-length recursion against independent oracles.

Three implementations of the same posterior: the production recursion, a
direct-summation oracle over last-changepoint placements, and (for short
streams) literal enumeration of every binary changepoint sequence.
"""

import math

import numpy as np
import pytest

from driftwatch.detectors import (
    NominalProfile,
    bocpd_init,
    bocpd_oracle,
    bocpd_posterior_dense,
    bocpd_update,
)
from driftwatch.errors import ConfigurationError

PROFILE = NominalProfile(mu0=-1.2, sigma0_sq=0.49, n_samples=1000)


def brute_force_posteriors(q, mu0, s2, hazard):
    """Enumerate all 2^T changepoint placements and group weight by run length."""
    paths = [(mu0, 1.0, 0, 1.0)]  # (seg mean, seg count, run length, weight)
    posteriors = []
    for t, x in enumerate(q):
        nxt = []
        for mean, count, rl, w in paths:
            var = s2 * (1.0 + 1.0 / count)
            pred = math.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(
                2 * math.pi * var
            )
            nxt.append(
                ((mean * count + x) / (count + 1), count + 1, rl + 1,
                 w * (1 - hazard) * pred)
            )
            nxt.append((mu0, 1.0, 0, w * hazard * pred))
        paths = nxt
        dist = np.zeros(t + 2)
        for _, _, rl, w in paths:
            dist[rl] += w
        posteriors.append(dist / dist.sum())
    return posteriors


def total_variation(a, b):
    return 0.5 * float(np.abs(np.asarray(a) - np.asarray(b)).sum())


def recursion_posteriors(q, profile, hazard, prune):
    state = bocpd_init(profile, hazard)
    out = []
    for x in q:
        state, _ = bocpd_update(state, float(x), prune=prune)
        out.append(bocpd_posterior_dense(state))
    return out


def test_oracle_matches_exhaustive_enumeration():
    rng = np.random.default_rng(99)
    worst = 0.0
    for trial in range(20):
        n = int(rng.integers(2, 9))
        q = list(PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=n))
        if trial % 3 == 0:
            q[n // 2:] = [v - 6 * PROFILE.sigma0 for v in q[n // 2:]]
        hazard = float(rng.uniform(0.005, 0.2))
        oracle = bocpd_oracle(q, PROFILE, hazard)
        brute = brute_force_posteriors(
            q, PROFILE.mu0, PROFILE.sigma0_sq, hazard
        )
        for a, b in zip(oracle, brute):
            worst = max(worst, total_variation(a, b))
    assert worst < 1e-12


def test_recursion_matches_oracle_without_pruning():
    rng = np.random.default_rng(424242)
    worst = 0.0
    for trial in range(50):
        q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=30)
        if trial % 2 == 0:
            q[15:] -= 8 * PROFILE.sigma0
        hazard = 0.01 if trial % 3 else 0.05
        oracle = bocpd_oracle(q, PROFILE, hazard)
        rec = recursion_posteriors(q, PROFILE, hazard, prune=0.0)
        for a, b in zip(rec, oracle):
            worst = max(worst, total_variation(a, b))
    assert worst < 1e-9


def test_recursion_with_default_pruning_stays_close():
    rng = np.random.default_rng(31415)
    worst = 0.0
    for trial in range(50):
        q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=30)
        if trial % 2 == 0:
            q[15:] -= 8 * PROFILE.sigma0
        oracle = bocpd_oracle(q, PROFILE, 0.01)
        rec = recursion_posteriors(q, PROFILE, 0.01, prune=1e-8)
        for a, b in zip(rec, oracle):
            worst = max(worst, total_variation(a, b))
    assert worst < 1e-6


def test_two_step_posterior_matches_hand_derivation():
    # mu0=0, sigma0^2=1, H=0.01, observations q1=0.7, q2=-0.4.
    # After q2 the three run lengths carry weights proportional to
    #   l=2: (1-H)^2 * A          with A = N(q2; (0+q1)/2, 1.5)
    #   l=1: H(1-H) * B           with B = N(q2; 0, 2)   (reset after q1)
    #   l=0: H * ((1-H) A + H B)  (pooled changepoint mass)
    profile = NominalProfile(mu0=0.0, sigma0_sq=1.0, n_samples=200)
    q1, q2 = 0.7, -0.4
    a = math.exp(-0.5 * (q2 - q1 / 2) ** 2 / 1.5) / math.sqrt(2 * math.pi * 1.5)
    b = math.exp(-0.5 * q2**2 / 2.0) / math.sqrt(2 * math.pi * 2.0)
    raw = np.array([
        0.01 * (0.99 * a + 0.01 * b),
        0.01 * 0.99 * b,
        0.99 * 0.99 * a,
    ])
    expected = raw / raw.sum()

    rec = recursion_posteriors([q1, q2], profile, hazard=0.01, prune=0.0)
    assert np.max(np.abs(rec[-1] - expected)) < 1e-12
    oracle = bocpd_oracle([q1, q2], profile, 0.01)
    assert np.max(np.abs(oracle[-1] - expected)) < 1e-12


def test_oracle_rejects_long_streams_and_bad_hazard():
    q = np.zeros(65)
    with pytest.raises(ConfigurationError):
        bocpd_oracle(q, PROFILE, 0.01)
    with pytest.raises(ConfigurationError):
        bocpd_oracle(np.zeros(5), PROFILE, 0.0)
    with pytest.raises(ConfigurationError):
        bocpd_oracle(np.zeros(5), PROFILE, 1.0)
