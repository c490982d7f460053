"""Behavioral tests for the detector bank."""

import numpy as np
import pytest

from driftwatch.detectors import (
    NominalProfile,
    PageHinkley,
    ResidualThreshold,
    WindowAutoencoder,
    bocpd_flag,
    bocpd_init,
    bocpd_oracle,
    bocpd_posterior_dense,
    bocpd_update,
    calibrate_tau,
    fit_nominal_profile,
    window_ae_score,
    window_ae_train,
)
from driftwatch.errors import (
    ConfigurationError,
    CorruptCheckpointError,
    InsufficientDataError,
)
from driftwatch.gnss import (
    ReceiverEstimate,
    make_constellation,
    measure_pseudoranges,
    solve_pvt,
)

PROFILE = NominalProfile(mu0=-1.2, sigma0_sq=0.49, n_samples=1000)


def run_argmaxes(q, profile, hazard, prune=1e-8):
    state = bocpd_init(profile, hazard)
    hats = []
    for x in q:
        state, l_hat = bocpd_update(state, float(x), prune=prune)
        hats.append(l_hat)
    return hats, state


class TestNominalProfile:
    def test_pooled_mean_and_population_variance(self):
        prof = fit_nominal_profile(
            [np.zeros(50), np.full(50, 2.0)], source_episodes=(0, 1)
        )
        assert prof.mu0 == 1.0
        assert prof.sigma0_sq == 1.0
        assert prof.n_samples == 100
        assert prof.source_episodes == (0, 1)

    def test_variance_floor_on_constant_stream(self):
        prof = fit_nominal_profile([np.full(200, 5.0)])
        assert prof.sigma0_sq == pytest.approx(1e-6 * (1 + 25.0))

    def test_insufficient_data(self):
        with pytest.raises(InsufficientDataError):
            fit_nominal_profile([np.zeros(99)])
        with pytest.raises(InsufficientDataError):
            fit_nominal_profile([])

    def test_rejects_bad_streams(self):
        with pytest.raises(ConfigurationError):
            fit_nominal_profile([np.zeros((10, 10))])
        bad = np.zeros(200)
        bad[7] = np.nan
        with pytest.raises(ConfigurationError):
            fit_nominal_profile([bad])

    def test_constructor_guards(self):
        with pytest.raises(ConfigurationError):
            NominalProfile(mu0=0.0, sigma0_sq=0.0, n_samples=500)
        with pytest.raises(ConfigurationError):
            NominalProfile(mu0=0.0, sigma0_sq=1.0, n_samples=99)

    def test_save_load_round_trip(self, tmp_path):
        path = tmp_path / "profile.json"
        PROFILE.save(path)
        loaded = NominalProfile.load(path)
        assert loaded == PROFILE

    def test_load_rejects_wrong_schema(self, tmp_path):
        path = tmp_path / "bad.json"
        doc = PROFILE.to_dict()
        doc["schema"] = "something-else"
        import json

        path.write_text(json.dumps(doc))
        with pytest.raises(ConfigurationError):
            NominalProfile.load(path)


class TestBocpd:
    def test_init_state(self):
        state = bocpd_init(PROFILE, 0.01)
        assert state.run_lengths.tolist() == [0]
        assert state.weights.tolist() == [1.0]
        assert state.seg_means.tolist() == [PROFILE.mu0]
        assert state.seg_counts.tolist() == [1.0]
        assert state.t == 0

    def test_init_rejects_bad_hazard(self):
        for h in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ConfigurationError):
                bocpd_init(PROFILE, h)

    def test_posterior_stays_normalized_and_well_formed(self):
        rng = np.random.default_rng(7)
        for trial in range(30):
            q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=40)
            if trial % 2 == 0:
                q[20:] -= 6 * PROFILE.sigma0
            prune = 0.0 if trial % 3 == 0 else 1e-8
            state = bocpd_init(PROFILE, 0.02)
            for x in q:
                state, _ = bocpd_update(state, float(x), prune=prune)
                assert abs(state.weights.sum() - 1.0) < 1e-9
                assert np.all(state.weights >= 0)
                rl = state.run_lengths
                assert np.all(np.diff(rl) > 0)
                assert np.array_equal(state.seg_counts, rl + 1.0)

    def test_constant_stream_argmax_tracks_time(self):
        hats, _ = run_argmaxes([PROFILE.mu0] * 200, PROFILE, 0.01)
        assert hats == list(range(1, 201))

    def test_constant_stream_never_flags_after_warmup(self):
        state = bocpd_init(PROFILE, 0.01)
        for t in range(1, 1001):
            state, l_hat = bocpd_update(state, PROFILE.mu0)
            verdict = bocpd_flag(l_hat, t, tau=5, warmup=10)
            assert not verdict.flag

    def test_downward_step_detected_within_five_steps(self):
        # 10 sigma drop at index 50; argmax collapses immediately
        for seed in range(12):
            rng = np.random.default_rng(seed)
            q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=80)
            q[50:] -= 10 * PROFILE.sigma0
            hats, _ = run_argmaxes(q, PROFILE, 0.01)
            post = hats[50:55]
            assert any(l <= 5 for l in post), f"seed {seed}: {post}"
            pre = [
                bocpd_flag(l, t, tau=5, warmup=10).flag
                for t, l in enumerate(hats[:50], start=1)
            ]
            assert not any(pre), f"seed {seed} flagged before the step"

    def test_higher_hazard_shortens_argmax_after_change(self):
        for seed in range(20):
            rng = np.random.default_rng([7, seed])
            q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=60)
            q[30:] -= 8 * PROFILE.sigma0
            hats_fast, _ = run_argmaxes(q, PROFILE, 0.05)
            hats_slow, _ = run_argmaxes(q, PROFILE, 0.005)
            for t in range(30, 40):
                assert hats_fast[t] <= hats_slow[t]

    def test_affine_scale_equivariance(self):
        rng = np.random.default_rng(2024)
        q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=50)
        q[25:] -= 7 * PROFILE.sigma0
        a, c = 3.7, -11.0
        scaled_profile = NominalProfile(
            mu0=a * PROFILE.mu0 + c,
            sigma0_sq=a * a * PROFILE.sigma0_sq,
            n_samples=PROFILE.n_samples,
        )
        state1 = bocpd_init(PROFILE, 0.01)
        state2 = bocpd_init(scaled_profile, 0.01)
        for x in q:
            state1, l1 = bocpd_update(state1, float(x))
            state2, l2 = bocpd_update(state2, float(a * x + c))
            assert l1 == l2
            d1 = bocpd_posterior_dense(state1)
            d2 = bocpd_posterior_dense(state2)
            assert np.max(np.abs(d1 - d2)) < 1e-9

    def test_pruning_preserves_argmax_sequence(self):
        rng = np.random.default_rng(55)
        q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=60)
        q[30:] -= 8 * PROFILE.sigma0
        exact, _ = run_argmaxes(q, PROFILE, 0.01, prune=0.0)
        pruned, state = run_argmaxes(q, PROFILE, 0.01, prune=1e-8)
        assert exact == pruned
        assert len(state.weights) < state.t + 1  # something was pruned

    def test_underflow_resets_with_warning(self):
        state = bocpd_init(PROFILE, 0.01)
        state, _ = bocpd_update(state, PROFILE.mu0)
        with pytest.warns(RuntimeWarning):
            state, l_hat = bocpd_update(state, PROFILE.mu0 + 1e6)
        assert l_hat == 0
        assert state.underflow_resets == 1
        assert state.weights.tolist() == [1.0]
        assert state.t == 2

    def test_flag_respects_warmup_boundary(self):
        assert not bocpd_flag(0, t=10, tau=5, warmup=10).flag
        assert bocpd_flag(5, t=11, tau=5, warmup=10).flag
        assert not bocpd_flag(6, t=11, tau=5, warmup=10).flag
        v = bocpd_flag(3, t=11, tau=5, warmup=10)
        assert v.statistic == 3.0 and v.detector == "bocpd"


class TestCalibrateTau:
    def test_clean_streams_pick_largest_viable_tau(self):
        # argmax equals t on clean streams, so tau cannot exceed warmup:
        # at t = warmup+1 any tau >= warmup+1 would flag immediately
        streams = [list(range(1, 41)) for _ in range(10)]
        tau, rate = calibrate_tau(streams, warmup=10)
        assert tau == 10 and rate == 0.0

    def test_one_dipping_stream_forces_smaller_tau(self):
        streams = [list(range(1, 41)) for _ in range(10)]
        dip = list(range(1, 41))
        dip[20] = 3  # post-warmup dip to run length 3
        streams[0] = dip
        tau, rate = calibrate_tau(streams, warmup=10)
        assert tau == 2 and rate == 0.0

    def test_dip_during_warmup_is_ignored(self):
        streams = [list(range(1, 41)) for _ in range(10)]
        dip = list(range(1, 41))
        dip[4] = 1  # t=5 <= warmup
        streams[0] = dip
        tau, rate = calibrate_tau(streams, warmup=10)
        assert tau == 10 and rate == 0.0

    def test_fallback_when_no_tau_fits(self):
        streams = []
        for _ in range(10):
            s = list(range(1, 41))
            s[25] = 1
            streams.append(s)
        tau, rate = calibrate_tau(streams, warmup=10)
        assert tau == 1 and rate == 1.0

    def test_requires_streams(self):
        with pytest.raises(InsufficientDataError):
            calibrate_tau([], warmup=10)


class TestPageHinkley:
    def test_constant_stream_never_flags(self):
        ph = PageHinkley.from_profile(PROFILE, 0.005, 50.0)
        for _ in range(500):
            v = ph.update(PROFILE.mu0)
            assert not v.flag
            assert v.statistic == 0.0

    def test_upward_step_never_flags(self):
        ph = PageHinkley.from_profile(PROFILE, 0.005, 50.0)
        rng = np.random.default_rng(3)
        q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=200)
        q[100:] += 10 * PROFILE.sigma0
        assert not any(ph.update(float(x)).flag for x in q)

    def test_downward_step_flags_within_twenty_steps(self):
        for seed in range(8):
            rng = np.random.default_rng(seed)
            q = PROFILE.mu0 + PROFILE.sigma0 * rng.normal(size=120)
            q[50:] -= 10 * PROFILE.sigma0
            ph = PageHinkley.from_profile(PROFILE, 0.005, 50.0)
            first = None
            for t, x in enumerate(q, start=1):
                if ph.update(float(x)).flag and first is None:
                    first = t
            assert first is not None and 50 < first <= 70, f"seed {seed}: {first}"

    def test_statistic_is_nonnegative(self):
        ph = PageHinkley(delta=0.0, lam=1.0)
        rng = np.random.default_rng(11)
        for x in rng.normal(size=300):
            assert ph.update(float(x)).statistic >= 0.0

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            PageHinkley(delta=-0.1, lam=1.0)
        with pytest.raises(ConfigurationError):
            PageHinkley(delta=0.1, lam=0.0)


@pytest.fixture(scope="module")
def constellation():
    return make_constellation(n_sats=8, seed=7)


class TestResidualThreshold:
    def solve_at(self, constellation, position, noise_sigma=0.0, rng=None):
        truth = ReceiverEstimate(position=np.asarray(position, dtype=float),
                                 clock_bias=12.0)
        meas = measure_pseudoranges(truth, constellation, noise_sigma, rng)
        return solve_pvt(meas, constellation)

    def test_clean_solution_stays_quiet(self, constellation):
        det = ResidualThreshold(k_sigma=3.0, noise_sigma=0.0, jump_gate=50.0)
        pvt = self.solve_at(constellation, [100.0, -50.0, 30.0])
        assert not det.update(pvt).flag

    def test_nominal_noise_stays_under_threshold(self, constellation):
        rng = np.random.default_rng(5)
        det = ResidualThreshold(k_sigma=3.0, noise_sigma=2.0, jump_gate=50.0)
        flags = 0
        pos = np.array([0.0, 0.0, 100.0])
        for k in range(50):
            pvt = self.solve_at(constellation, pos + [k, 0, 0],
                                noise_sigma=2.0, rng=rng)
            flags += int(det.update(pvt).flag)
        assert flags == 0

    def test_inconsistent_measurements_flag(self, constellation):
        truth = ReceiverEstimate(position=np.array([0.0, 0.0, 100.0]))
        meas = measure_pseudoranges(truth, constellation, 0.0, None)
        values = meas.values.copy()
        values[:3] += 30.0  # corrupt three of eight channels
        from driftwatch.gnss import PseudorangeSet

        pvt = solve_pvt(PseudorangeSet(values=values), constellation)
        det = ResidualThreshold(k_sigma=3.0, noise_sigma=2.0, jump_gate=50.0)
        assert det.update(pvt).flag

    def test_jump_gate_catches_teleport_but_not_drift(self, constellation):
        det = ResidualThreshold(k_sigma=3.0, noise_sigma=0.0, jump_gate=50.0)
        a = self.solve_at(constellation, [0.0, 0.0, 100.0])
        b = self.solve_at(constellation, [30.0, 0.0, 100.0])
        c = self.solve_at(constellation, [630.0, 0.0, 100.0])
        assert not det.update(a).flag  # first step has no jump reference
        assert not det.update(b).flag  # 30 m, drift-sized
        assert det.update(c).flag  # 600 m teleport

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            ResidualThreshold(k_sigma=0.0, noise_sigma=1.0, jump_gate=50.0)
        with pytest.raises(ConfigurationError):
            ResidualThreshold(k_sigma=3.0, noise_sigma=-1.0, jump_gate=50.0)
        with pytest.raises(ConfigurationError):
            ResidualThreshold(k_sigma=3.0, noise_sigma=1.0, jump_gate=0.0)


def make_streams(rng, n, length, profile=PROFILE):
    return [profile.mu0 + profile.sigma0 * rng.normal(size=length)
            for _ in range(n)]


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(1234)
    train_streams = make_streams(rng, 8, 100)
    held_streams = make_streams(rng, 6, 100)
    model, curve = window_ae_train(train_streams, seed=5)
    return model, curve, train_streams, held_streams


class TestWindowAutoencoder:
    def test_requires_enough_windows(self):
        rng = np.random.default_rng(0)
        with pytest.raises(InsufficientDataError):
            window_ae_train(make_streams(rng, 3, 100))

    def test_training_curve_decreases(self, trained):
        _, curve, _, _ = trained
        assert len(curve) == 200
        assert curve[-1] < 0.5 * curve[0]

    def test_heldout_nominal_rarely_flags(self, trained):
        model, _, _, held = trained
        flags, total = 0, 0
        for s in held:
            for i in range(len(s) - model.window + 1):
                v = window_ae_score(model, s[: i + model.window], t=i)
                flags += int(v.flag)
                total += 1
        assert total > 400
        assert flags / total <= 0.05

    def test_shifted_windows_flag(self, trained):
        model, _, _, _ = trained
        for k in range(20):
            s = PROFILE.mu0 + PROFILE.sigma0 * np.random.default_rng(k).normal(
                size=64
            )
            s[48:] -= 10 * PROFILE.sigma0
            assert window_ae_score(model, s, t=64).flag

    def test_partial_window_gives_nan_and_no_flag(self, trained):
        model, _, _, _ = trained
        v = window_ae_score(model, np.zeros(model.window - 1), t=3)
        assert not v.flag
        assert np.isnan(v.statistic)

    def test_training_is_deterministic(self, trained):
        model, curve, train_streams, _ = trained
        model2, curve2 = window_ae_train(train_streams, seed=5)
        assert curve == curve2
        for w1, w2 in zip(model.net.parameters(), model2.net.parameters()):
            assert np.array_equal(w1, w2)
        assert model.threshold == model2.threshold

    def test_save_load_round_trip(self, trained, tmp_path):
        model, _, _, held = trained
        path = tmp_path / "ae.npz"
        model.save(path)
        loaded = WindowAutoencoder.load(path)
        assert loaded.window == model.window
        assert loaded.threshold == model.threshold
        window = held[0][: model.window]
        assert loaded.reconstruction_error(window) == pytest.approx(
            model.reconstruction_error(window), abs=0.0
        )

    def test_load_rejects_garbage(self, tmp_path):
        path = tmp_path / "junk.npz"
        path.write_bytes(b"not a zip archive")
        with pytest.raises(CorruptCheckpointError):
            WindowAutoencoder.load(path)
