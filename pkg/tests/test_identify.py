"""Identity matching and detection metrics."""

import numpy as np
import pytest

from blindaccess.identify import (
    ClusterMatch,
    Registry,
    compute_metrics,
    match_mobile,
    match_stationary,
    score_report,
)
from blindaccess.recovery import AmEstimate
from blindaccess.scenario import (
    MOBILE,
    STATIONARY,
    ScenarioConfig,
    build_scenario,
    standard_codebook,
)
from blindaccess.spectrum import ClusterResult


def _registry(angles=None, codebook=None, assignment=None, n_sectors=4):
    return Registry(
        stationary_angles=angles or {},
        sector_edges=np.linspace(0.0, np.pi, n_sectors + 1),
        codebook=codebook if codebook is not None else standard_codebook(4, 4),
        assignment=assignment or {},
    )


def _estimate(preambles):
    k = preambles.shape[1]
    return AmEstimate(
        gains=[np.ones(1, complex) for _ in range(k)],
        preambles=preambles,
        delay_gain=[np.ones(preambles.shape[0], complex) for _ in range(k)],
        residual=0.0,
        iterations=1,
        converged=True,
    )


class TestComputeMetrics:
    def test_hand_example_exact(self):
        m = compute_metrics({1, 2, 4}, {1, 2, 3}, set(range(100)))
        assert m.p_d == 2 / 3
        assert m.p_fa == 1 / 97

    def test_perfect_detection(self):
        m = compute_metrics({1, 2}, {1, 2}, set(range(10)))
        assert m.p_d == 1.0 and m.p_fa == 0.0

    def test_empty_detection(self):
        m = compute_metrics(set(), {1, 2}, set(range(10)))
        assert m.p_d == 0.0 and m.p_fa == 0.0

    def test_no_active_users_flagged(self):
        m = compute_metrics(set(), set(), set(range(5)))
        assert m.p_d == 1.0 and m.trivial_detection

    def test_all_active_flagged(self):
        m = compute_metrics({0, 1}, {0, 1}, {0, 1})
        assert m.p_fa == 0.0 and m.trivial_false_alarm

    def test_unknown_ids_rejected(self):
        with pytest.raises(ValueError):
            compute_metrics({99}, {1}, {1, 2})


class TestMatchStationary:
    def test_nearest_within_tolerance(self):
        reg = _registry(angles={7: 1.00, 8: 2.00})
        cl = ClusterResult(clusters=((1.004,),), los_angles=(1.004,))
        out = match_stationary(cl, reg, angle_tol=np.deg2rad(1.0))
        assert out[0].user_id == 7

    def test_outside_tolerance_unmatched(self):
        reg = _registry(angles={7: 1.00})
        cl = ClusterResult(clusters=((1.2,),), los_angles=(1.2,))
        out = match_stationary(cl, reg, angle_tol=np.deg2rad(1.0))
        assert out[0].user_id is None

    def test_each_user_matched_once_greedy(self):
        # two clusters near one registered angle: the closer one wins
        reg = _registry(angles={7: 1.00})
        cl = ClusterResult(clusters=((1.001,), (1.005,)), los_angles=(1.001, 1.005))
        out = match_stationary(cl, reg, angle_tol=np.deg2rad(1.0))
        matched = [m.user_id for m in out]
        assert matched.count(7) == 1
        assert out[0].user_id == 7

    def test_permutation_invariant(self):
        reg = _registry(angles={1: 0.5, 2: 1.5, 3: 2.5})
        a = ClusterResult(clusters=((0.5,), (1.5,), (2.5,)),
                          los_angles=(0.5, 1.5, 2.5))
        b = ClusterResult(clusters=((2.5,), (0.5,), (1.5,)),
                          los_angles=(2.5, 0.5, 1.5))
        ma = {m.cluster_index: m.user_id for m in match_stationary(a, reg, 0.01)}
        mb = {m.cluster_index: m.user_id for m in match_stationary(b, reg, 0.01)}
        assert sorted(ma.values()) == sorted(mb.values())
        assert mb[0] == 3 and mb[1] == 1 and mb[2] == 2

    def test_empty_registry(self):
        cl = ClusterResult(clusters=((1.0,),), los_angles=(1.0,))
        out = match_stationary(cl, _registry(), 0.1)
        assert out[0].user_id is None


class TestMatchMobile:
    def test_orthonormal_codebook_exact_correlation(self):
        cb = standard_codebook(4, 4)
        # correlation of a column with itself is 1, with others 0
        np.testing.assert_allclose(cb.T @ cb, np.eye(4), atol=1e-14)

    def test_identifies_by_sector_and_column(self):
        cb = standard_codebook(4, 4)
        reg = _registry(codebook=cb, assignment={(1, 2): 42})
        theta = 1.0  # sector 1 of 4
        cl = ClusterResult(clusters=((theta,),), los_angles=(theta,))
        est = _estimate(cb[:, [2]].astype(float))
        base = [ClusterMatch(0, None, None, np.inf)]
        out = match_mobile(base, cl, est, reg)
        assert out[0].user_id == 42
        assert out[0].mobility == MOBILE

    def test_shift_search_recovers_delayed_preamble(self):
        cb = standard_codebook(8, 4, max_shift=1)
        reg = _registry(codebook=cb, assignment={(0, 1): 5})
        theta = 0.3
        cl = ClusterResult(clusters=((theta,),), los_angles=(theta,))
        delayed = np.roll(cb[:, 1], 1).reshape(-1, 1)
        out = match_mobile([ClusterMatch(0, None, None, np.inf)], cl,
                           _estimate(delayed), reg, max_shift=1)
        assert out[0].user_id == 5
        assert out[0].shift == 1

    def test_low_correlation_left_unmatched(self):
        cb = standard_codebook(4, 2)
        reg = _registry(codebook=cb, assignment={(0, 0): 1})
        flat = np.full((4, 1), 0.5)
        cl = ClusterResult(clusters=((0.3,),), los_angles=(0.3,))
        out = match_mobile([ClusterMatch(0, None, None, np.inf)], cl,
                           _estimate(flat), reg, corr_threshold=0.8)
        assert out[0].user_id is None

    def test_stationary_matches_untouched(self):
        cb = standard_codebook(4, 4)
        reg = _registry(codebook=cb, assignment={(0, 0): 9})
        cl = ClusterResult(clusters=((0.3,),), los_angles=(0.3,))
        pre = cb[:, [0]]
        base = [ClusterMatch(0, 3, STATIONARY, 0.001)]
        out = match_mobile(base, cl, _estimate(pre), reg)
        assert out[0].user_id == 3 and out[0].mobility == STATIONARY


class TestRegistryFromScenario:
    CFG = ScenarioConfig(
        n_antennas=16, t_len=4, k_stationary=5, k_mobile=5,
        k_active_stationary=1, k_active_mobile=1, tau_max=1.0,
        guaranteed_recovery=True,
    )

    def test_covers_all_stationary_users(self):
        sc = build_scenario(self.CFG, 0)
        reg = Registry.from_scenario(sc)
        assert set(reg.stationary_angles) == sc.ids(STATIONARY)

    def test_assignment_maps_to_mobile_ids(self):
        sc = build_scenario(self.CFG, 0)
        reg = Registry.from_scenario(sc)
        assert set(reg.assignment.values()) <= sc.ids(MOBILE)

    def test_duplicate_assignment_rejected(self):
        sc = build_scenario(self.CFG, 0)
        users = list(sc.users)
        mobiles = [u for u in users if u.mobility == MOBILE]
        # force two mobiles onto the same sector/column pair
        import dataclasses

        clone = dataclasses.replace(
            mobiles[1],
            channel=mobiles[0].channel,
            preamble_index=mobiles[0].preamble_index,
            preamble=mobiles[0].preamble,
        )
        users[users.index(mobiles[1])] = clone
        sc2 = dataclasses.replace(sc, users=tuple(users))
        with pytest.raises(ValueError):
            Registry.from_scenario(sc2)


class TestDecomposition:
    def test_class_metrics_recompose(self):
        cfg = ScenarioConfig(
            n_antennas=16, t_len=4, k_stationary=6, k_mobile=6,
            k_active_stationary=2, k_active_mobile=2, tau_max=1.0,
            guaranteed_recovery=True,
        )
        sc = build_scenario(cfg, 1)
        from blindaccess.identify import DetectionReport

        # fabricate a class-consistent report: one stationary + one mobile hit
        s_hit = sorted(sc.active_ids(STATIONARY))[0]
        m_hit = sorted(sc.active_ids(MOBILE))[0]
        report = DetectionReport(
            matches=[
                ClusterMatch(0, s_hit, STATIONARY, 0.0),
                ClusterMatch(1, m_hit, MOBILE, 1.0),
            ],
            clusters=ClusterResult(clusters=((1.0,), (2.0,)), los_angles=(1.0, 2.0)),
        )
        tm = score_report(report, sc)
        k_a = len(sc.active_ids())
        k_s = len(sc.active_ids(STATIONARY))
        k_m = len(sc.active_ids(MOBILE))
        assert abs(
            k_a * tm.overall.p_d - (k_s * tm.stationary.p_d + k_m * tm.mobile.p_d)
        ) < 1e-12
