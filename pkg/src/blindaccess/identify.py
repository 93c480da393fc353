"""Mapping recovered clusters back to user identities and scoring detection.

Stationary users are identified by their registered line-of-sight angle;
mobile users by correlating the recovered preamble against the sector's
codebook. Detection quality is scored as detection / false-alarm rates
against the ground-truth active sets.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .recovery import AmEstimate, extract_delay
from .scenario import MOBILE, STATIONARY, Scenario
from .spectrum import ClusterResult


@dataclass(frozen=True)
class Registry:
    """Base-station side knowledge: who could transmit, and how.

    ``stationary_angles`` maps user id -> registered line-of-sight angle.
    ``assignment`` maps (sector, codebook column) -> mobile user id.
    """

    stationary_angles: dict[int, float]
    sector_edges: np.ndarray
    codebook: np.ndarray  # T x P, orthonormal nonnegative columns
    assignment: dict[tuple[int, int], int]

    @property
    def n_sectors(self) -> int:
        return self.sector_edges.size - 1

    def sector_of(self, theta: float) -> int:
        s = int(np.searchsorted(self.sector_edges, theta, side="right")) - 1
        return min(max(s, 0), self.n_sectors - 1)

    def min_stationary_gap(self) -> float:
        angles = np.sort(np.asarray(list(self.stationary_angles.values())))
        if angles.size < 2:
            return np.inf
        return float(np.min(np.diff(angles)))

    @classmethod
    def from_scenario(
        cls,
        scenario: Scenario,
        sector_edges: np.ndarray | None = None,
        codebook: np.ndarray | None = None,
    ) -> "Registry":
        if sector_edges is None:
            sector_edges = scenario.sector_edges()
        if codebook is None:
            codebook = scenario.mobile_codebook()
        stationary = {
            u.user_id: u.channel.los_angle
            for u in scenario.users
            if u.mobility == STATIONARY
        }
        assignment: dict[tuple[int, int], int] = {}
        for u in scenario.users:
            if u.mobility == MOBILE and u.preamble_index is not None:
                edges = np.asarray(sector_edges)
                s = int(np.searchsorted(edges, u.channel.los_angle, "right")) - 1
                s = min(max(s, 0), edges.size - 2)
                key = (s, u.preamble_index)
                if key in assignment:
                    raise ValueError(f"duplicate sector/preamble assignment {key}")
                assignment[key] = u.user_id
        return cls(
            stationary_angles=stationary,
            sector_edges=np.asarray(sector_edges, dtype=float),
            codebook=np.asarray(codebook, dtype=float),
            assignment=assignment,
        )


@dataclass
class ClusterMatch:
    cluster_index: int
    user_id: int | None
    mobility: str | None
    score: float  # angle error (stationary) or correlation (mobile)
    shift: int = 0  # cyclic preamble shift used for mobile correlation


@dataclass
class DetectionReport:
    matches: list[ClusterMatch]
    clusters: ClusterResult
    estimate: AmEstimate | None = None
    converged: bool = True

    def detected_ids(self, mobility: str | None = None) -> set[int]:
        return {
            m.user_id
            for m in self.matches
            if m.user_id is not None
            and (mobility is None or m.mobility == mobility)
        }


def match_stationary(
    clusters: ClusterResult, registry: Registry, angle_tol: float
) -> list[ClusterMatch]:
    """Associate each cluster's line-of-sight angle with the nearest
    registered stationary user within tolerance; each user matches at most
    one cluster (the closest)."""
    if not registry.stationary_angles:
        return [
            ClusterMatch(i, None, None, np.inf) for i in range(clusters.k_hat)
        ]
    ids = np.asarray(list(registry.stationary_angles.keys()))
    angles = np.asarray([registry.stationary_angles[i] for i in ids])
    candidates = []  # (error, cluster_index, user_id)
    for i, los in enumerate(clusters.los_angles):
        errs = np.abs(angles - los)
        j = int(np.argmin(errs))
        if errs[j] <= angle_tol:
            candidates.append((float(errs[j]), i, int(ids[j])))
    candidates.sort()
    taken_users: set[int] = set()
    taken_clusters: set[int] = set()
    by_cluster: dict[int, ClusterMatch] = {}
    for err, i, uid in candidates:
        if uid in taken_users or i in taken_clusters:
            continue
        taken_users.add(uid)
        taken_clusters.add(i)
        by_cluster[i] = ClusterMatch(i, uid, STATIONARY, err)
    return [
        by_cluster.get(i, ClusterMatch(i, None, None, np.inf))
        for i in range(clusters.k_hat)
    ]


def match_mobile(
    matches: list[ClusterMatch],
    clusters: ClusterResult,
    estimate: AmEstimate,
    registry: Registry,
    corr_threshold: float = 0.8,
    max_shift: int = 0,
) -> list[ClusterMatch]:
    """Fill unmatched clusters with mobile identities.

    The recovered preamble is only determined up to a cyclic shift of at
    most the maximum delay, so the correlation search runs over back-shifts
    0..max_shift. The winning codebook column plus the cluster's sector
    look up the user id; low correlation leaves the cluster unidentified.
    """
    out = list(matches)
    for i, m in enumerate(out):
        if m.user_id is not None:
            continue
        phi = estimate.preambles[:, m.cluster_index]
        best = (-np.inf, 0, 0)  # (correlation, column, shift)
        for s in range(max_shift + 1):
            corr = np.abs(registry.codebook.T @ np.roll(phi, -s))
            p = int(np.argmax(corr))
            if corr[p] > best[0]:
                best = (float(corr[p]), p, s)
        score, col, shift = best
        if score < corr_threshold:
            continue
        sector = registry.sector_of(clusters.los_angles[m.cluster_index])
        uid = registry.assignment.get((sector, col))
        if uid is None:
            continue
        out[i] = ClusterMatch(m.cluster_index, uid, MOBILE, score, shift)
    return out


def estimated_delays(
    report: DetectionReport, t_len: int, round_to_integer: bool = True
) -> dict[int, float]:
    """Per-identified-user delay: phase-ramp slope plus the matching shift."""
    if report.estimate is None:
        return {}
    out: dict[int, float] = {}
    for m in report.matches:
        if m.user_id is None:
            continue
        d = extract_delay(report.estimate.delay_gain[m.cluster_index]) + m.shift
        d = d % t_len
        if round_to_integer:
            d = float(np.rint(d) % t_len)
        out[m.user_id] = d
    return out


@dataclass(frozen=True)
class Metrics:
    """Detection and false-alarm rates with degenerate-denominator flags."""

    p_d: float
    p_fa: float
    n_active: int
    n_users: int
    trivial_detection: bool = False  # no active users: p_d fixed to 1
    trivial_false_alarm: bool = False  # no inactive users: p_fa fixed to 0


def compute_metrics(
    detected: set[int], active: set[int], all_ids: set[int]
) -> Metrics:
    """p_d = |detected ∩ active| / |active|, p_fa = |detected \\ active| / |inactive|."""
    if not detected <= all_ids:
        raise ValueError("detected set contains unknown user ids")
    if not active <= all_ids:
        raise ValueError("active set contains unknown user ids")
    k_a = len(active)
    k = len(all_ids)
    trivial_d = k_a == 0
    trivial_fa = k == k_a
    p_d = 1.0 if trivial_d else len(detected & active) / k_a
    p_fa = 0.0 if trivial_fa else len(detected - active) / (k - k_a)
    return Metrics(
        p_d=p_d,
        p_fa=p_fa,
        n_active=k_a,
        n_users=k,
        trivial_detection=trivial_d,
        trivial_false_alarm=trivial_fa,
    )


@dataclass(frozen=True)
class TrialMetrics:
    """Combined, stationary-only, and mobile-only rates for one trial."""

    overall: Metrics
    stationary: Metrics
    mobile: Metrics


def score_report(report: DetectionReport, scenario: Scenario) -> TrialMetrics:
    det = report.detected_ids()
    return TrialMetrics(
        overall=compute_metrics(det, scenario.active_ids(), scenario.ids()),
        stationary=compute_metrics(
            report.detected_ids(STATIONARY),
            scenario.active_ids(STATIONARY),
            scenario.ids(STATIONARY),
        ),
        mobile=compute_metrics(
            report.detected_ids(MOBILE),
            scenario.active_ids(MOBILE),
            scenario.ids(MOBILE),
        ),
    )
