"""Uniform linear array manifold and angular group-sparse channels."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SPREAD_WIDTH = np.pi / 12


@dataclass(frozen=True)
class ArrayConfig:
    """ULA geometry: antenna count and element spacing in wavelengths."""

    n_antennas: int
    spacing_ratio: float = 0.5

    def __post_init__(self):
        if self.n_antennas < 2:
            raise ValueError(f"need at least 2 antennas, got {self.n_antennas}")
        if self.spacing_ratio <= 0:
            raise ValueError("spacing_ratio must be positive")


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not 0.0 < theta < np.pi:
        raise ValueError(f"angle of arrival must lie in (0, pi), got {theta}")
    return theta


@dataclass(frozen=True)
class AngleOfArrival:
    """An arrival direction in radians, open interval (0, pi)."""

    theta: float

    def __post_init__(self):
        _check_theta(self.theta)


@dataclass(frozen=True)
class UserChannel:
    """Multipath channel of one user: a few arrival angles in a narrow spread.

    The first angle is the line-of-sight path and carries the largest gain
    magnitude. ``spread`` is the (theta_min, theta_max) interval containing
    every path angle.
    """

    angles: tuple[float, ...]
    gains: tuple[complex, ...]
    spread: tuple[float, float]
    max_spread_width: float = field(default=DEFAULT_SPREAD_WIDTH, compare=False)

    def __post_init__(self):
        if len(self.angles) == 0 or len(self.angles) != len(self.gains):
            raise ValueError("angles and gains must be nonempty and equal-length")
        lo, hi = self.spread
        if hi - lo > self.max_spread_width:
            raise ValueError(
                f"spread width {hi - lo:.4f} exceeds limit {self.max_spread_width:.4f}"
            )
        for th in self.angles:
            _check_theta(th)
            if not lo <= th <= hi:
                raise ValueError(f"angle {th} outside spread {self.spread}")

    @property
    def n_paths(self) -> int:
        return len(self.angles)

    @property
    def los_angle(self) -> float:
        return self.angles[0]


def steering_vector(config: ArrayConfig, theta: float | AngleOfArrival) -> np.ndarray:
    """Unit-norm ULA response: entry n is exp(-j*2*pi*(d/lambda)*n*cos(theta))/sqrt(N)."""
    if isinstance(theta, AngleOfArrival):
        theta = theta.theta
    n = np.arange(config.n_antennas)
    phase = -2j * np.pi * config.spacing_ratio * n * np.cos(theta)
    return np.exp(phase) / np.sqrt(config.n_antennas)


def steering_matrix(config: ArrayConfig, thetas) -> np.ndarray:
    """Column-stacked steering vectors for a sequence of angles (N x L)."""
    thetas = np.asarray(thetas, dtype=float)
    n = np.arange(config.n_antennas)[:, None]
    phase = -2j * np.pi * config.spacing_ratio * n * np.cos(thetas)[None, :]
    return np.exp(phase) / np.sqrt(config.n_antennas)


def synthesize_channel(config: ArrayConfig, channel: UserChannel) -> np.ndarray:
    """Sum of gain-weighted steering vectors over the user's paths."""
    a = steering_matrix(config, channel.angles)
    return a @ np.asarray(channel.gains, dtype=complex)


def _circle_distance(x: float, y: float) -> float:
    # separation between cosine values is measured around a unit-
    # circumference circle: distance(0.2, 0.8) = min(0.6, 1 - 0.6) = 0.4
    d = abs(x - y) % 1.0
    return min(d, 1.0 - d)


def min_separation(all_channels) -> float:
    """Smallest wrap-around cosine gap between any two paths of one user.

    Users with a single path contribute nothing; +inf if no user has
    two or more paths.
    """
    best = np.inf
    for ch in all_channels:
        cosines = np.cos(np.asarray(ch.angles, dtype=float))
        for i in range(len(cosines)):
            for q in range(i + 1, len(cosines)):
                best = min(best, _circle_distance(cosines[i], cosines[q]))
    return best


def random_user_channel(
    config: ArrayConfig,
    rng: np.random.Generator,
    n_paths: int,
    center: float,
    spread_width: float = DEFAULT_SPREAD_WIDTH,
    los_amplitude: float = 1.0,
    nlos_amplitude: float = 0.5,
    min_cos_separation: float = 0.0,
    max_tries: int = 200,
) -> UserChannel:
    """Draw a channel with uniformly placed angles inside a spread.

    The line-of-sight path gets amplitude ``los_amplitude``; the remaining
    paths get ``nlos_amplitude``. All gains carry i.i.d. random phases.
    Without a separation floor the line of sight sits at ``center`` and the
    other paths fall uniformly at random in the spread. With
    ``min_cos_separation`` > 0 the paths are spread evenly with jitter and
    resampled until every intra-user cosine gap exceeds the floor (the
    unique-identifiability condition of the angular separation bound).
    """
    lo = center - spread_width / 2
    hi = center + spread_width / 2
    if lo <= 0 or hi >= np.pi:
        raise ValueError("spread must fit inside (0, pi)")
    for _ in range(max_tries):
        if n_paths == 1:
            angles = np.array([center])
            break
        if min_cos_separation > 0:
            base = np.linspace(lo, hi, n_paths)
            gap = (hi - lo) / (n_paths - 1)
            angles = base + rng.uniform(-0.15, 0.15, size=n_paths) * gap
            # line of sight first: the path nearest the spread center
            k = int(np.argmin(np.abs(angles - center)))
            angles[[0, k]] = angles[[k, 0]]
        else:
            others = rng.uniform(lo, hi, size=n_paths - 1)
            angles = np.concatenate([[center], others])
        cosines = np.cos(angles)
        sep = min(
            _circle_distance(cosines[i], cosines[q])
            for i in range(n_paths)
            for q in range(i + 1, n_paths)
        )
        if sep > min_cos_separation:
            break
    else:
        raise RuntimeError(
            f"could not place {n_paths} angles with cosine separation "
            f"{min_cos_separation} inside a width-{spread_width} spread"
        )
    amps = np.full(n_paths, nlos_amplitude)
    amps[0] = los_amplitude
    gains = amps * np.exp(2j * np.pi * rng.uniform(size=n_paths))
    span = (float(np.min(angles)) - 1e-9, float(np.max(angles)) + 1e-9)
    return UserChannel(
        angles=tuple(float(t) for t in angles),
        gains=tuple(complex(g) for g in gains),
        spread=span,
        max_spread_width=1.5 * float(spread_width) + 1e-9,
    )
