"""Alternating-minimization factor recovery with known angles."""

import numpy as np
import pytest

from blindaccess.arrays import ArrayConfig, UserChannel
from blindaccess.recovery import (
    AmEstimate,
    AmOptions,
    align_cyclic,
    am_solve,
    extract_delay,
)
from blindaccess.scenario import (
    Scenario,
    UserProfile,
    synthesize_received,
)
from blindaccess.spectrum import ClusterResult


def _planted(seed=0, n=16, t=4, delays=(0.0, 1.0), zeta=0.0, paths=(1, 1)):
    """Two active users with known angles; returns scenario, signal, clusters."""
    rng = np.random.default_rng(seed)
    centers = [1.0, 2.0]
    users = []
    clusters = []
    for k, (c, d, L) in enumerate(zip(centers, delays, paths)):
        angles = tuple(c + 0.06 * i for i in range(L))
        gains = tuple(
            (1.0 if i == 0 else 0.5) * np.exp(2j * np.pi * rng.uniform())
            for i in range(L)
        )
        ch = UserChannel(angles=angles, gains=gains,
                         spread=(min(angles) - 0.01, max(angles) + 0.01))
        phi = rng.uniform(0.2, 1.0, size=t)
        phi /= np.linalg.norm(phi)
        g = rng.uniform(-zeta, zeta, size=t) if zeta > 0 else None
        users.append(UserProfile(user_id=k, mobility="stationary", channel=ch,
                                 preamble=phi, delay=d, gain_error=g, active=True))
        clusters.append(angles)
    sc = Scenario(array=ArrayConfig(n_antennas=n), users=tuple(users),
                  t_len=t, tau_max=max(delays), zeta=zeta)
    sig = synthesize_received(sc, seed)
    cl = ClusterResult(clusters=tuple(clusters),
                       los_angles=tuple(c[0] for c in clusters))
    return sc, sig, cl


class TestAmSolve:
    def test_noiseless_preamble_recovery(self):
        for seed in range(5):
            sc, sig, cl = _planted(seed, delays=(0.0, 0.0))
            est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
            assert est.converged
            for k, u in enumerate(sc.active_users()):
                _, aligned = align_cyclic(est.preambles[:, k], u.preamble)
                err = np.linalg.norm(aligned - u.preamble)
                assert err <= 1e-3, f"seed {seed} user {k}: error {err:.2e}"

    def test_delays_recovered_exactly_after_rounding(self):
        sc, sig, cl = _planted(2, delays=(0.0, 1.0))
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
        t_len = sc.t_len
        for k, u in enumerate(sc.active_users()):
            shift, _ = align_cyclic(est.preambles[:, k], u.preamble)
            d = (extract_delay(est.delay_gain[k], round_to_integer=True) + shift) % t_len
            err = min(abs(d - u.delay), t_len - abs(d - u.delay))
            assert err == 0.0

    def test_gain_error_case_converges(self):
        sc, sig, cl = _planted(3, delays=(0.0, 1.0), zeta=0.1)
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e, opts=AmOptions(max_iter=400))
        assert est.residual < 1e-2 * np.linalg.norm(sig.y)

    def test_multipath_gain_ordering(self):
        # the line-of-sight path is planted strongest and must come back strongest
        sc, sig, cl = _planted(4, delays=(0.0, 0.0), paths=(2, 2))
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
        for k in range(2):
            mags = np.abs(est.gains[k])
            assert mags[0] == max(mags)

    def test_truth_is_fixed_point(self):
        sc, sig, cl = _planted(5, delays=(0.0, 1.0))
        users = sc.active_users()
        t = sc.t_len
        from blindaccess.scenario import delay_gain_vector

        init = AmEstimate(
            gains=[np.asarray(u.channel.gains, complex) for u in users],
            preambles=np.column_stack([u.preamble for u in users]),
            delay_gain=[
                delay_gain_vector(u.delay, u.gain_error, t, sc.zeta) for u in users
            ],
            residual=0.0,
            iterations=0,
            converged=False,
        )
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e, init=init)
        assert est.residual <= 1e-8
        for k, u in enumerate(users):
            assert np.linalg.norm(est.preambles[:, k] - u.preamble) < 1e-6

    def test_delay_gain_magnitude_bounded(self):
        sc, sig, cl = _planted(6, delays=(1.0, 0.0), zeta=0.1)
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
        for e in est.delay_gain:
            assert np.max(np.abs(e)) <= sc.c_e + 1e-9

    def test_preambles_nonnegative_unit_norm(self):
        sc, sig, cl = _planted(7)
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
        assert np.all(est.preambles >= 0)
        np.testing.assert_allclose(
            np.linalg.norm(est.preambles, axis=0), 1.0, atol=1e-9
        )

    def test_gauge_pin_first_delay_gain_entry(self):
        sc, sig, cl = _planted(8)
        est = am_solve(sig, cl, sc.array, c_e=sc.c_e)
        for e in est.delay_gain:
            assert abs(e[0].imag) < 1e-9
            assert e[0].real > 0

    def test_requires_clusters(self):
        sc, sig, _ = _planted(9)
        with pytest.raises(ValueError):
            am_solve(sig, ClusterResult(clusters=(), los_angles=()), sc.array)


class TestExtractDelay:
    def test_pure_ramp(self):
        t = np.arange(8)
        for d in [0.0, 1.0, 2.5]:
            e = np.exp(2j * np.pi * d * t / 8)
            assert abs(extract_delay(e) - d) < 1e-9

    def test_rounding(self):
        t = np.arange(8)
        e = np.exp(2j * np.pi * 1.02 * t / 8)
        assert extract_delay(e, round_to_integer=True) == 1.0

    def test_single_bin(self):
        assert extract_delay(np.array([1.0 + 0j])) == 0.0


class TestAlignCyclic:
    def test_recovers_shift(self):
        rng = np.random.default_rng(0)
        ref = rng.uniform(size=8)
        for s in range(8):
            shifted = np.roll(ref, s)
            found, aligned = align_cyclic(shifted, ref)
            assert found == s
            np.testing.assert_allclose(aligned, ref, atol=1e-14)
