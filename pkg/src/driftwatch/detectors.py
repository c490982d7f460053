"""Online detectors over the critic value stream, plus an exhaustive oracle.

The main detector maintains a run-length posterior with a constant hazard
and a known-variance Gaussian predictive whose mean follows the conjugate
update (the prior counts as one pseudo-observation).  Baselines: a
one-sided Page-Hinkley test, pseudorange-residual thresholding with a
kinematic jump gate, and a fixed-window autoencoder scored by
reconstruction error.
"""

from __future__ import annotations

import json
import warnings
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigurationError,
    CorruptCheckpointError,
    InsufficientDataError,
)
from .gnss import PvtSolution
from .nets import Adam, Mlp

PROFILE_SCHEMA = "driftwatch-profile-v1"
AE_SCHEMA = "driftwatch-ae-v1"

# Variance floor keeps predictives proper on near-constant nominal streams.
_VAR_FLOOR_SCALE = 1e-6
_UNDERFLOW_LIMIT = 1e-300


@dataclass(frozen=True)
class NominalProfile:
    """Attack-free value statistics: the detector's prior."""

    mu0: float
    sigma0_sq: float
    n_samples: int
    source_episodes: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.sigma0_sq > 0:
            raise ConfigurationError("sigma0_sq must be > 0")
        if self.n_samples < 100:
            raise ConfigurationError("profile needs n_samples >= 100")

    @property
    def sigma0(self) -> float:
        return float(np.sqrt(self.sigma0_sq))

    def to_dict(self) -> dict:
        return {
            "schema": PROFILE_SCHEMA,
            "mu0": self.mu0,
            "sigma0_sq": self.sigma0_sq,
            "n_samples": self.n_samples,
            "source_episodes": list(self.source_episodes),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "NominalProfile":
        if doc.get("schema") != PROFILE_SCHEMA:
            raise ConfigurationError(
                f"unexpected profile schema: {doc.get('schema')!r}"
            )
        return cls(
            mu0=float(doc["mu0"]),
            sigma0_sq=float(doc["sigma0_sq"]),
            n_samples=int(doc["n_samples"]),
            source_episodes=tuple(int(e) for e in doc.get("source_episodes", ())),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "NominalProfile":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DetectorVerdict:
    """One detector's per-step output."""

    flag: bool
    statistic: float
    detector: str
    t: int


def fit_nominal_profile(
    nominal_q_streams, source_episodes: tuple[int, ...] = ()
) -> NominalProfile:
    """Pooled mean and population variance over attack-free value streams."""
    streams = [np.asarray(s, dtype=float) for s in nominal_q_streams]
    if any(s.ndim != 1 for s in streams):
        raise ConfigurationError("each stream must be one-dimensional")
    pooled = np.concatenate(streams) if streams else np.array([])
    if pooled.size < 100:
        raise InsufficientDataError(
            f"need >= 100 nominal samples, got {pooled.size}"
        )
    if not np.all(np.isfinite(pooled)):
        raise ConfigurationError("nominal streams contain non-finite values")
    mu0 = float(pooled.mean())
    var = float(pooled.var())
    floored = max(var, _VAR_FLOOR_SCALE * (1.0 + mu0 * mu0))
    return NominalProfile(
        mu0=mu0,
        sigma0_sq=floored,
        n_samples=int(pooled.size),
        source_episodes=tuple(source_episodes),
    )


def _gauss_pdf(x: float, mean: float, var: float) -> float:
    return float(np.exp(-0.5 * (x - mean) ** 2 / var) / np.sqrt(2.0 * np.pi * var))


@dataclass
class BocpdState:
    """Run-length posterior with per-run-length conjugate segment stats.

    Pruning makes the support sparse, so explicit run-length values are
    carried alongside the weights.
    """

    run_lengths: np.ndarray  # int, ascending
    weights: np.ndarray  # normalized posterior over run_lengths
    seg_means: np.ndarray
    seg_counts: np.ndarray  # prior counts as one pseudo-observation
    mu0: float
    sigma0_sq: float
    hazard: float
    t: int = 0
    underflow_resets: int = 0


def bocpd_init(profile: NominalProfile, hazard: float) -> BocpdState:
    if not 0.0 < hazard < 1.0:
        raise ConfigurationError(f"hazard must be in (0,1), got {hazard}")
    return BocpdState(
        run_lengths=np.array([0]),
        weights=np.array([1.0]),
        seg_means=np.array([profile.mu0]),
        seg_counts=np.array([1.0]),
        mu0=profile.mu0,
        sigma0_sq=profile.sigma0_sq,
        hazard=hazard,
        t=0,
    )


def bocpd_update(
    state: BocpdState, q: float, prune: float = 1e-8
) -> tuple[BocpdState, int]:
    """Advance the posterior with one observation; returns the argmax run length.

    Growth weights get the (1-H) branch, the changepoint entry pools the H
    branch across all segments; the new segment starts from the prior and
    does not absorb q until it grows.
    """
    h = state.hazard
    pred_var = state.sigma0_sq * (1.0 + 1.0 / state.seg_counts)
    pred = np.exp(-0.5 * (q - state.seg_means) ** 2 / pred_var) / np.sqrt(
        2.0 * np.pi * pred_var
    )

    growth = state.weights * (1.0 - h) * pred
    cp = float(np.sum(state.weights * h * pred))
    unnormalized = np.concatenate([[cp], growth])

    if np.all(unnormalized < _UNDERFLOW_LIMIT):
        warnings.warn(
            "run-length posterior underflowed; resetting to the prior",
            RuntimeWarning,
            stacklevel=2,
        )
        fresh = BocpdState(
            run_lengths=np.array([0]),
            weights=np.array([1.0]),
            seg_means=np.array([state.mu0]),
            seg_counts=np.array([1.0]),
            mu0=state.mu0,
            sigma0_sq=state.sigma0_sq,
            hazard=h,
            t=state.t + 1,
            underflow_resets=state.underflow_resets + 1,
        )
        return fresh, 0

    run_lengths = np.concatenate([[0], state.run_lengths + 1])
    seg_means = np.concatenate([
        [state.mu0],
        (state.seg_means * state.seg_counts + q) / (state.seg_counts + 1.0),
    ])
    seg_counts = np.concatenate([[1.0], state.seg_counts + 1.0])
    weights = unnormalized / unnormalized.sum()

    if prune > 0.0:
        keep = weights >= prune
        keep[np.argmax(weights)] = True
        run_lengths = run_lengths[keep]
        seg_means = seg_means[keep]
        seg_counts = seg_counts[keep]
        weights = weights[keep]
        weights = weights / weights.sum()

    new_state = BocpdState(
        run_lengths=run_lengths.astype(int),
        weights=weights,
        seg_means=seg_means,
        seg_counts=seg_counts,
        mu0=state.mu0,
        sigma0_sq=state.sigma0_sq,
        hazard=h,
        t=state.t + 1,
        underflow_resets=state.underflow_resets,
    )
    l_hat = int(run_lengths[np.argmax(weights)])
    return new_state, l_hat


def bocpd_flag(l_hat: int, t: int, tau: int, warmup: int) -> DetectorVerdict:
    """Short argmax run length after the warmup means a recent change."""
    return DetectorVerdict(
        flag=(t > warmup) and (l_hat <= tau),
        statistic=float(l_hat),
        detector="bocpd",
        t=t,
    )


def bocpd_posterior_dense(state: BocpdState) -> np.ndarray:
    """Posterior as a dense array over run lengths 0..t (testing helper)."""
    dense = np.zeros(state.t + 1)
    dense[state.run_lengths] = state.weights
    return dense


def bocpd_oracle(q_stream, profile: NominalProfile, hazard: float,
                 max_len: int = 64) -> list[np.ndarray]:
    """Run-length posteriors computed by direct summation, for validation.

    For every step, each possible last-changepoint time contributes the
    product of its segment's predictive densities, recomputed from the raw
    data with no carried state.  Shared sufficient statistics collapse the
    exponential number of changepoint placements to O(T^2) segment terms.
    O(T^3) time, so the length is capped.
    """
    q = [float(x) for x in q_stream]
    t_max = len(q)
    if t_max > max_len:
        raise ConfigurationError(
            f"oracle supports streams up to {max_len}, got {t_max}"
        )
    if not 0.0 < hazard < 1.0:
        raise ConfigurationError(f"hazard must be in (0,1), got {hazard}")
    mu0, s2, h = profile.mu0, profile.sigma0_sq, hazard

    def segment_product(start: int, end: int) -> float:
        """Product of predictives for q[start:end] as one fresh segment."""
        prod = 1.0
        mean, count = mu0, 1.0
        for k in range(start, end):
            prod *= _gauss_pdf(q[k], mean, s2 * (1.0 + 1.0 / count))
            mean = (mean * count + q[k]) / (count + 1.0)
            count += 1.0
        return prod

    # cp_weight[s]: unnormalized weight of being freshly reset after s steps
    cp_weight = np.zeros(t_max + 1)
    cp_weight[0] = 1.0
    for s in range(1, t_max + 1):
        total = 0.0
        for s0 in range(s):
            total += (cp_weight[s0] * (1.0 - h) ** (s - 1 - s0)
                      * segment_product(s0, s))
        cp_weight[s] = h * total

    posteriors = []
    for s in range(1, t_max + 1):
        joint = np.zeros(s + 1)
        joint[0] = cp_weight[s]
        for l in range(1, s + 1):
            joint[l] = (cp_weight[s - l] * (1.0 - h) ** l
                        * segment_product(s - l, s))
        posteriors.append(joint / joint.sum())
    return posteriors


def calibrate_tau(
    l_hat_streams,
    warmup: int,
    fp_budget: float = 0.05,
    tau_grid=range(1, 13),
) -> tuple[int, float]:
    """Largest flag threshold whose nominal false-flag episode rate fits budget.

    Streams are per-episode argmax run-length sequences from attack-free
    runs; an episode counts as a false positive when any post-warmup step
    would flag.  Returns (tau, achieved rate).
    """
    streams = [np.asarray(s) for s in l_hat_streams]
    if not streams:
        raise InsufficientDataError("tau calibration needs at least one stream")
    best = None
    for tau in sorted(tau_grid):
        fp = 0
        for s in streams:
            steps = np.arange(1, len(s) + 1)
            if np.any((steps > warmup) & (s <= tau)):
                fp += 1
        rate = fp / len(streams)
        if rate <= fp_budget:
            best = (int(tau), rate)
    if best is None:
        tau = int(min(tau_grid))
        fp = sum(
            bool(np.any((np.arange(1, len(s) + 1) > warmup) & (s <= tau)))
            for s in streams
        )
        best = (tau, fp / len(streams))
    return best


class PageHinkley:
    """One-sided (downward) Page-Hinkley test over a scalar stream."""

    def __init__(self, delta: float, lam: float):
        if delta < 0 or lam <= 0:
            raise ConfigurationError("delta must be >= 0 and lambda > 0")
        self.delta = delta
        self.lam = lam
        self.n = 0
        self.mean = 0.0
        self.m = 0.0
        self.m_min = 0.0
        self.t = 0

    @classmethod
    def from_profile(cls, profile: NominalProfile, delta_scale: float,
                     lambda_scale: float) -> "PageHinkley":
        return cls(delta=delta_scale * profile.sigma0,
                   lam=lambda_scale * profile.sigma0)

    def update(self, x: float) -> DetectorVerdict:
        self.t += 1
        self.n += 1
        self.mean += (x - self.mean) / self.n
        self.m += self.mean - x - self.delta
        self.m_min = min(self.m_min, self.m)
        ph = self.m - self.m_min
        return DetectorVerdict(flag=ph > self.lam, statistic=ph,
                               detector="ph", t=self.t)


class ResidualThreshold:
    """Residual-norm test plus a kinematic jump gate on the implied position."""

    def __init__(self, k_sigma: float, noise_sigma: float, jump_gate: float):
        if k_sigma <= 0 or noise_sigma < 0 or jump_gate <= 0:
            raise ConfigurationError("invalid residual detector parameters")
        # absolute floor so zero-noise configs do not flag solver round-off
        self.threshold = max(k_sigma * noise_sigma, 1e-6)
        self.jump_gate = jump_gate
        self.prev_position: np.ndarray | None = None
        self.t = 0

    def update(self, pvt: PvtSolution) -> DetectorVerdict:
        self.t += 1
        stat = pvt.final_residual_norm / np.sqrt(len(pvt.residuals))
        pos = pvt.estimate.position
        jump = (0.0 if self.prev_position is None
                else float(np.linalg.norm(pos - self.prev_position)))
        self.prev_position = pos.copy()
        return DetectorVerdict(
            flag=(stat > self.threshold) or (jump > self.jump_gate),
            statistic=float(stat),
            detector="residual",
            t=self.t,
        )


@dataclass
class WindowAutoencoder:
    """Fixed-window reconstruction model with a frozen flag threshold."""

    net: Mlp
    window: int
    mean: float
    std: float
    threshold: float

    def reconstruction_error(self, window_values: np.ndarray) -> float:
        x = (np.asarray(window_values, dtype=float) - self.mean) / self.std
        recon = self.net.forward(x)
        return float(np.mean((recon - x) ** 2))

    def save(self, path) -> None:
        arrays = {
            "schema": np.array(AE_SCHEMA),
            "window": np.array(self.window),
            "mean": np.array(self.mean),
            "std": np.array(self.std),
            "threshold": np.array(self.threshold),
            "sizes": np.array(self.net.layer_sizes),
            "acts": np.array(self.net.activations),
        }
        for i, (w, b) in enumerate(zip(self.net.weights, self.net.biases)):
            arrays[f"w{i}"] = w
            arrays[f"b{i}"] = b
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "WindowAutoencoder":
        try:
            data = np.load(path, allow_pickle=False)
        except (OSError, ValueError, zipfile.BadZipFile) as exc:
            raise CorruptCheckpointError(f"cannot read AE model {path}: {exc}")
        try:
            if "schema" not in data or str(data["schema"]) != AE_SCHEMA:
                raise CorruptCheckpointError(f"not a {AE_SCHEMA} file: {path}")
            sizes = [int(s) for s in data["sizes"]]
            acts = [str(a) for a in data["acts"]]
            weights = [data[f"w{i}"] for i in range(len(sizes) - 1)]
            biases = [data[f"b{i}"] for i in range(len(sizes) - 1)]
            net = Mlp.from_parameters(sizes, acts, weights, biases)
            return cls(
                net=net,
                window=int(data["window"]),
                mean=float(data["mean"]),
                std=float(data["std"]),
                threshold=float(data["threshold"]),
            )
        except KeyError as exc:
            raise CorruptCheckpointError(f"AE model {path} is missing {exc}")
        finally:
            data.close()


def window_ae_train(
    nominal_q_streams,
    window: int = 32,
    bottleneck: int = 4,
    hidden: int = 16,
    epochs: int = 200,
    lr: float = 1e-3,
    threshold_stds: float = 3.0,
    seed: int = 0,
) -> tuple[WindowAutoencoder, list[float]]:
    """Train the reconstruction model on nominal sliding windows.

    Full-batch Adam on standardized windows; the flag threshold freezes at
    mean + threshold_stds * std of the training reconstruction errors.
    Returns the model and the per-epoch loss curve.
    """
    streams = [np.asarray(s, dtype=float) for s in nominal_q_streams]
    slices = []
    for s in streams:
        for i in range(0, len(s) - window + 1):
            slices.append(s[i:i + window])
    if len(slices) < 500:
        raise InsufficientDataError(
            f"need >= 500 training windows, got {len(slices)}"
        )
    x_raw = np.stack(slices)
    mu = float(x_raw.mean())
    sd = float(max(x_raw.std(), 1e-6))
    x = (x_raw - mu) / sd

    rng = np.random.default_rng(seed)
    net = Mlp(
        [window, hidden, bottleneck, hidden, window],
        ["relu", "linear", "relu", "linear"],
        rng,
    )
    opt = Adam(net.parameters(), lr)
    curve = []
    n = x.shape[0]
    for _ in range(epochs):
        recon = net.forward(x)
        err = recon - x
        curve.append(float(np.mean(err**2)))
        _, grads = net.backward(2.0 * err / err.size)
        opt.step(grads)

    recon = net.forward(x)
    per_window = np.mean((recon - x) ** 2, axis=1)
    threshold = float(per_window.mean() + threshold_stds * per_window.std())
    model = WindowAutoencoder(net=net, window=window, mean=mu, std=sd,
                              threshold=threshold)
    return model, curve


def window_ae_score(model: WindowAutoencoder, recent_values, t: int
                    ) -> DetectorVerdict:
    """Score the trailing window; NaN statistic while the window is filling."""
    vals = np.asarray(recent_values, dtype=float)
    if vals.size < model.window:
        return DetectorVerdict(flag=False, statistic=float("nan"),
                               detector="window_ae", t=t)
    err = model.reconstruction_error(vals[-model.window:])
    return DetectorVerdict(flag=err > model.threshold, statistic=err,
                           detector="window_ae", t=t)
