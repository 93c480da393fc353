"""Angular spectrum of the dual matrix: evaluation, peak picking, clustering.

The l2 norm of the dual polynomial peaks at the arrival angles of active
users; nearby peaks are grouped into per-user clusters at jump points of
the sorted angle sequence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sdp import SdpSolution, adjoint_expand, _steering_grid


def default_grid(grid_size: int) -> np.ndarray:
    """Uniform angles strictly inside (0, pi), cell width pi/grid_size."""
    step = np.pi / grid_size
    return (np.arange(grid_size) + 0.5) * step


@dataclass(frozen=True)
class AngularSpectrum:
    grid: np.ndarray  # strictly increasing angles in (0, pi)
    values: np.ndarray  # ||q_G(theta)||_2 per grid point
    c1: float

    @property
    def cell_width(self) -> float:
        return float(self.grid[1] - self.grid[0])

    def to_text(self) -> str:
        """Two-column (theta, value) table, one row per grid point."""
        lines = ["theta value"]
        lines += [f"{t:.8f} {v:.8e}" for t, v in zip(self.grid, self.values)]
        return "\n".join(lines) + "\n"


def eval_dual_polynomial(
    sol: SdpSolution,
    omega: np.ndarray,
    n_antennas: int,
    grid_size: int = 8192,
    c1: float = 1.0,
    spacing_ratio: float = 0.5,
) -> AngularSpectrum:
    """Vectorized evaluation of ||(expanded V)^H a(theta)|| on a dense grid."""
    if grid_size < 4 * n_antennas:
        raise ValueError("grid_size must be at least 4N")
    a = adjoint_expand(sol.v, omega, n_antennas)
    grid = default_grid(grid_size)
    proj = _steering_grid(n_antennas, grid, spacing_ratio).conj() @ a
    values = np.linalg.norm(proj, axis=1)
    return AngularSpectrum(grid=grid, values=values, c1=c1)


def eval_dual_polynomial_direct(
    sol: SdpSolution,
    omega: np.ndarray,
    n_antennas: int,
    grid_size: int = 8192,
    spacing_ratio: float = 0.5,
) -> np.ndarray:
    """Scalar-loop evaluation of the same quantity; slow oracle for tests."""
    a = adjoint_expand(sol.v, omega, n_antennas)
    grid = default_grid(grid_size)
    values = np.zeros(grid_size)
    for g, theta in enumerate(grid):
        acc = 0.0
        for col in range(a.shape[1]):
            z = 0j
            for row in range(n_antennas):
                phase = -2 * np.pi * spacing_ratio * row * np.cos(theta)
                z += np.conj(np.exp(1j * phase) / np.sqrt(n_antennas)) * a[row, col]
            acc += abs(z) ** 2
        values[g] = np.sqrt(acc)
    return values


@dataclass(frozen=True)
class Peak:
    theta: float
    value: float


def find_peaks(
    spectrum: AngularSpectrum, rel_threshold: float = 0.5, refine: bool = True
) -> list[Peak]:
    """Strict local maxima above a fraction of the global maximum.

    Each peak is optionally refined by a 3-point quadratic fit, which gives
    sub-cell angle accuracy for smooth lobes.
    """
    if not 0.0 < rel_threshold < 1.0:
        raise ValueError("rel_threshold must lie in (0, 1)")
    v = spectrum.values
    top = v.max(initial=0.0)
    if top <= 0.0:
        return []
    cut = rel_threshold * top
    peaks = []
    for i in range(1, v.size - 1):
        if v[i] > v[i - 1] and v[i] > v[i + 1] and v[i] >= cut:
            theta = spectrum.grid[i]
            if refine:
                denom = v[i - 1] - 2 * v[i] + v[i + 1]
                if denom < 0:
                    shift = 0.5 * (v[i - 1] - v[i + 1]) / denom
                    theta = theta + shift * spectrum.cell_width
            peaks.append(Peak(theta=float(theta), value=float(v[i])))
    return peaks


@dataclass(frozen=True)
class ClusterResult:
    clusters: tuple[tuple[float, ...], ...]  # sorted angle groups
    los_angles: tuple[float, ...]  # strongest angle per cluster

    @property
    def k_hat(self) -> int:
        return len(self.clusters)

    @property
    def l_hat(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.clusters)


def cluster_angles(peaks, gap_threshold: float) -> ClusterResult:
    """Split the sorted peak angles at gaps larger than the threshold.

    Accepts ``Peak`` objects or bare angles. The per-cluster line-of-sight
    angle is the member with the largest spectrum value (first member when
    no values are available).
    """
    items = [
        p if isinstance(p, Peak) else Peak(theta=float(p), value=0.0) for p in peaks
    ]
    items.sort(key=lambda p: p.theta)
    if not items:
        return ClusterResult(clusters=(), los_angles=())
    groups: list[list[Peak]] = [[items[0]]]
    for p in items[1:]:
        if p.theta - groups[-1][-1].theta > gap_threshold:
            groups.append([p])
        else:
            groups[-1].append(p)
    clusters = tuple(tuple(p.theta for p in g) for g in groups)
    los = tuple(max(g, key=lambda p: p.value).theta for g in groups)
    return ClusterResult(clusters=clusters, los_angles=los)
