"""End-to-end blind detection for one coherence block.

Observation -> dual semidefinite program -> angular spectrum -> peak
clustering -> alternating-minimization factor recovery -> identity
matching -> detection metrics.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .arrays import DEFAULT_SPREAD_WIDTH
from .identify import (
    DetectionReport,
    Registry,
    TrialMetrics,
    match_mobile,
    match_stationary,
    score_report,
)
from .recovery import AmOptions, am_solve
from .scenario import ReceivedSignal, Scenario
from .sdp import SolverOptions, build_problem, solve_admm
from .spectrum import ClusterResult, cluster_angles, eval_dual_polynomial, find_peaks


@dataclass(frozen=True)
class PipelineConfig:
    grid_size: int = 8192
    rel_threshold: float | None = None  # None: 0.5, or 0.6 under noise
    gap_threshold: float | None = None  # None: 2 x expected spread width
    spread_width: float = DEFAULT_SPREAD_WIDTH
    angle_tol: float | None = None  # None: one degree
    corr_threshold: float = 0.8
    eta_floor: float = 1e-3
    solver: SolverOptions = SolverOptions(tolerance=1e-8, max_iter=20000)
    am: AmOptions = AmOptions(max_iter=300)
    max_clusters: int = 64  # refuse obviously degenerate spectra

    def resolved_rel_threshold(self, noisy: bool) -> float:
        if self.rel_threshold is not None:
            return self.rel_threshold
        # under noise the floor of the spectrum rises toward ~0.3-0.4, so
        # the cut must sit above it; saturated user peaks stay at 1
        return 0.6 if noisy else 0.5

    def resolved_gap_threshold(self) -> float:
        if self.gap_threshold is not None:
            return self.gap_threshold
        return max(2.0 * self.spread_width, 4.0 * np.pi / self.grid_size)

    def resolved_angle_tol(self, registry: Registry) -> float:
        if self.angle_tol is not None:
            return self.angle_tol
        # matching picks the nearest registered angle; the tolerance only
        # needs to reject clusters that belong to nobody (mobile users),
        # which the world keeps at least two degrees away from registrants,
        # so it must track the localization error, not the registry density
        return np.deg2rad(1.0)


def detect(
    signal: ReceivedSignal,
    scenario: Scenario,
    config: PipelineConfig | None = None,
    registry: Registry | None = None,
) -> DetectionReport:
    """Run the full blind detection chain on one observation."""
    config = config or PipelineConfig()
    registry = registry or Registry.from_scenario(scenario)
    n = scenario.array.n_antennas

    problem = build_problem(
        signal, n, zeta=scenario.zeta, eta_floor=config.eta_floor
    )
    sol = solve_admm(problem, config.solver)
    spectrum = eval_dual_polynomial(
        sol, signal.omega, n, config.grid_size, problem.c1
    )
    noisy = np.isfinite(scenario.snr_db)
    peaks = find_peaks(spectrum, config.resolved_rel_threshold(noisy))
    clusters = cluster_angles(peaks, config.resolved_gap_threshold())

    if clusters.k_hat == 0 or clusters.k_hat > config.max_clusters:
        return DetectionReport(
            matches=[],
            clusters=clusters,
            estimate=None,
            converged=sol.converged,
        )

    estimate = am_solve(
        signal, clusters, scenario.array, c_e=scenario.c_e, opts=config.am
    )
    # Spectrum values saturate at the constraint bound for every active
    # path, so they cannot rank paths within a cluster; the recovered path
    # gains can, and the line of sight is the strongest path.
    los = tuple(
        cluster[int(np.argmax(np.abs(estimate.gains[k])))]
        for k, cluster in enumerate(clusters.clusters)
    )
    clusters = replace(clusters, los_angles=los)
    matches = match_stationary(
        clusters, registry, config.resolved_angle_tol(registry)
    )
    matches = match_mobile(
        matches,
        clusters,
        estimate,
        registry,
        corr_threshold=config.corr_threshold,
        max_shift=int(np.floor(scenario.tau_max)),
    )
    return DetectionReport(
        matches=matches,
        clusters=clusters,
        estimate=estimate,
        converged=sol.converged and estimate.converged,
    )


def detect_and_score(
    signal: ReceivedSignal,
    scenario: Scenario,
    config: PipelineConfig | None = None,
    registry: Registry | None = None,
) -> tuple[DetectionReport, TrialMetrics]:
    report = detect(signal, scenario, config, registry)
    return report, score_report(report, scenario)
