"""World generation and the forward observation model."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindaccess.arrays import ArrayConfig, UserChannel
from blindaccess.scenario import (
    MOBILE,
    STATIONARY,
    Scenario,
    ScenarioConfig,
    UserProfile,
    build_scenario,
    compute_snr,
    delay_gain_vector,
    standard_codebook,
    synthesize_received,
    time_domain_oracle,
)


def _basic_channel(theta=1.4):
    return UserChannel(angles=(theta,), gains=(1.0 + 0j,), spread=(theta - 0.01, theta + 0.01))


def _profile(uid=0, t_len=4, delay=0.0, active=True, mobility=STATIONARY, gain_error=None):
    phi = np.zeros(t_len)
    phi[0] = 1.0
    return UserProfile(
        user_id=uid,
        mobility=mobility,
        channel=_basic_channel(1.2 + 0.3 * uid),
        preamble=phi,
        delay=delay,
        gain_error=gain_error,
        active=active,
    )


class TestDelayGainVector:
    def test_zero_delay_no_error_is_ones(self):
        np.testing.assert_array_equal(delay_gain_vector(0.0, None, 4), np.ones(4))

    def test_phase_ramp(self):
        e = delay_gain_vector(1.0, None, 4)
        t = np.arange(4)
        np.testing.assert_allclose(e, np.exp(2j * np.pi * t / 4), atol=1e-14)

    def test_gain_error_bound_enforced(self):
        with pytest.raises(ValueError):
            delay_gain_vector(0.0, np.full(4, 0.2), 4, zeta=0.1)

    @settings(max_examples=100, deadline=None)
    @given(
        delay=st.floats(0.0, 3.0),
        zeta=st.floats(0.0, 0.5),
        data=st.data(),
    )
    def test_spectral_norm_bounded_by_ce(self, delay, zeta, data):
        t_len = 6
        g = np.asarray(
            data.draw(
                st.lists(
                    st.floats(-zeta, zeta, allow_nan=False),
                    min_size=t_len,
                    max_size=t_len,
                )
            )
        )
        e = delay_gain_vector(delay, g, t_len, zeta)
        # the diagonal operator's spectral norm is the max entry magnitude
        assert np.max(np.abs(e)) <= 1.0 + zeta + 1e-9


class TestForwardModel:
    def _scenario(self, users, t_len=4, tau_max=2.0, **kw):
        return Scenario(
            array=ArrayConfig(n_antennas=8),
            users=tuple(users),
            t_len=t_len,
            tau_max=tau_max,
            **kw,
        )

    def test_frequency_time_agreement_integer_delays(self):
        for delay in [0.0, 1.0, 2.0]:
            sc = self._scenario([_profile(0, delay=delay)])
            a = synthesize_received(sc, 0)
            b = time_domain_oracle(sc, 0)
            np.testing.assert_allclose(a.y, b.y, atol=1e-12)

    def test_superposition_of_users(self):
        u0, u1 = _profile(0), _profile(1)
        both = synthesize_received(self._scenario([u0, u1]), 0).y
        only0 = synthesize_received(self._scenario([u0]), 0).y
        only1 = synthesize_received(self._scenario([u1]), 0).y
        np.testing.assert_allclose(both, only0 + only1, atol=1e-12)

    def test_inactive_users_contribute_nothing(self):
        u0 = _profile(0)
        idle = _profile(1, active=False)
        with_idle = synthesize_received(self._scenario([u0, idle]), 0).y
        without = synthesize_received(self._scenario([u0]), 0).y
        np.testing.assert_array_equal(with_idle, without)

    def test_noiseless_bound_is_floor(self):
        sc = self._scenario([_profile(0)])
        sig = synthesize_received(sc, 0)
        assert sig.noise_bound == sc.noise_floor

    def test_noise_respects_snr(self):
        sc = self._scenario([_profile(0)], snr_db=20.0)
        clean = synthesize_received(self._scenario([_profile(0)]), 0)
        noisy = synthesize_received(sc, 0)
        noise = noisy.y - clean.y
        sigma = np.sqrt(np.mean(np.abs(noise) ** 2))
        snr = compute_snr(clean.y, sigma)
        assert abs(snr - 20.0) < 2.0  # one random draw, loose check
        assert abs(np.linalg.norm(noise) - noisy.noise_bound) < 1e-12

    def test_noise_deterministic_in_seed(self):
        sc = self._scenario([_profile(0)], snr_db=10.0)
        a = synthesize_received(sc, 5)
        b = synthesize_received(sc, 5)
        np.testing.assert_array_equal(a.y, b.y)

    def test_uniform_noise_kind(self):
        sc = self._scenario([_profile(0)], snr_db=10.0, noise_kind="uniform")
        sig = synthesize_received(sc, 1)
        assert np.all(np.isfinite(sig.y))

    def test_antenna_subset(self):
        sc = Scenario(
            array=ArrayConfig(n_antennas=8),
            users=(_profile(0),),
            t_len=4,
            omega=np.array([0, 2, 5]),
        )
        sig = synthesize_received(sc, 0)
        assert sig.y.shape == (3, 4)
        full = synthesize_received(
            Scenario(array=ArrayConfig(n_antennas=8), users=(_profile(0),), t_len=4),
            0,
        )
        np.testing.assert_allclose(sig.y, full.y[[0, 2, 5]], atol=1e-14)

    def test_delay_beyond_tau_max_rejected(self):
        with pytest.raises(ValueError):
            self._scenario([_profile(0, delay=3.0)], tau_max=2.0)

    def test_compute_snr_zero_signal(self):
        assert compute_snr(np.zeros((2, 2)), 1.0) == -np.inf


class TestStandardCodebook:
    def test_orthonormal_nonnegative(self):
        cb = standard_codebook(8, 4, max_shift=1)
        assert np.all(cb >= 0)
        np.testing.assert_allclose(cb.T @ cb, np.eye(4), atol=1e-14)

    def test_shift_distinguishable(self):
        # no cyclic shift up to max_shift of one column collides with another
        cb = standard_codebook(8, 2, max_shift=3)
        for i in range(2):
            for j in range(2):
                for s in range(4):
                    shifted = np.roll(cb[:, i], s)
                    if i == j and s == 0:
                        continue
                    assert not np.allclose(shifted, cb[:, j])

    def test_capacity_enforced(self):
        with pytest.raises(ValueError):
            standard_codebook(8, 5, max_shift=1)


class TestScenarioConfig:
    def test_dict_round_trip(self):
        cfg = ScenarioConfig(
            n_antennas=16,
            t_len=8,
            k_stationary=5,
            k_mobile=5,
            snr_db=20.0,
            tau_max=1.0,
            guaranteed_recovery=True,
        )
        assert ScenarioConfig.from_dict(cfg.to_dict()) == cfg

    def test_noiseless_serializes_as_none(self):
        cfg = ScenarioConfig(snr_db=np.inf)
        d = cfg.to_dict()
        assert d["snr_db"] is None
        assert not np.isfinite(ScenarioConfig.from_dict(d).snr_db)

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            ScenarioConfig.from_dict({"N": 8, "T": 2, "K_S": 1, "K_M": 1,
                                      "K_aS": 1, "K_aM": 1, "bogus": 3})


class TestBuildScenario:
    CFG = ScenarioConfig(
        n_antennas=16,
        t_len=4,
        k_stationary=6,
        k_mobile=6,
        k_active_stationary=2,
        k_active_mobile=1,
        l_max=2,
        tau_max=1.0,
        zeta=0.1,
        guaranteed_recovery=True,
    )

    def test_counts_and_classes(self):
        sc = build_scenario(self.CFG, 0)
        assert len(sc.users) == 12
        assert len(sc.active_ids(STATIONARY)) == 2
        assert len(sc.active_ids(MOBILE)) == 1

    def test_deterministic_in_seed(self):
        a = build_scenario(self.CFG, 3)
        b = build_scenario(self.CFG, 3)
        for ua, ub in zip(a.users, b.users):
            assert ua.channel == ub.channel
            assert ua.delay == ub.delay
            assert ua.active == ub.active
            np.testing.assert_array_equal(ua.preamble, ub.preamble)

    def test_guaranteed_recovery_separation(self):
        from blindaccess.arrays import min_separation

        for seed in range(10):
            sc = build_scenario(self.CFG, seed)
            sep = min_separation([u.channel for u in sc.active_users()])
            assert sep > 1.0 / 16

    def test_mobile_combos_unique(self):
        for seed in range(10):
            sc = build_scenario(self.CFG, seed)
            edges = sc.sector_edges()
            combos = set()
            for u in sc.users:
                if u.mobility == MOBILE and u.preamble_index is not None:
                    s = int(np.searchsorted(edges, u.channel.los_angle, "right")) - 1
                    key = (s, u.preamble_index)
                    assert key not in combos
                    combos.add(key)

    def test_active_delays_within_bound(self):
        sc = build_scenario(self.CFG, 1)
        for u in sc.active_users():
            assert 0.0 <= u.delay <= 1.0
            assert u.delay == int(u.delay)

    def test_gain_errors_only_on_active_mobiles(self):
        sc = build_scenario(self.CFG, 2)
        for u in sc.users:
            if u.gain_error is not None:
                assert u.active and u.mobility == MOBILE
                assert np.max(np.abs(u.gain_error)) <= 0.1

    def test_over_allocation_rejected(self):
        bad = ScenarioConfig(k_stationary=1, k_active_stationary=2)
        with pytest.raises(ValueError):
            build_scenario(bad, 0)
