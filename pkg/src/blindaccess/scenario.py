"""Ground-truth world construction and the uplink forward model.

The observed matrix is the antenna-selected superposition of rank-1 user
contributions h_k (F phi_k)^H E_k, where E_k is a diagonal phase-ramp /
gain-error matrix, plus bounded-norm noise.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .arrays import (
    DEFAULT_SPREAD_WIDTH,
    ArrayConfig,
    UserChannel,
    random_user_channel,
    steering_matrix,
    synthesize_channel,
)

STATIONARY = "stationary"
MOBILE = "mobile"


@dataclass(frozen=True)
class UserProfile:
    """One user's ground truth: channel, transmitted vector, impairments."""

    user_id: int
    mobility: str
    channel: UserChannel
    preamble: np.ndarray  # nonnegative, unit l2 norm, length T
    delay: float = 0.0
    gain_error: np.ndarray | None = None
    active: bool = False
    preamble_index: int | None = None  # codebook column for mobile users

    def __post_init__(self):
        if self.mobility not in (STATIONARY, MOBILE):
            raise ValueError(f"unknown mobility {self.mobility!r}")
        p = np.asarray(self.preamble, dtype=float)
        if np.any(p < -1e-12) or not np.isclose(np.linalg.norm(p), 1.0):
            raise ValueError("preamble must be nonnegative with unit l2 norm")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")


@dataclass(frozen=True)
class Scenario:
    """Complete ground-truth world for one coherence block."""

    array: ArrayConfig
    users: tuple[UserProfile, ...]
    t_len: int
    tau_max: float = 0.0
    zeta: float = 0.0
    omega: np.ndarray | None = None  # 0-based antenna indices, None = all
    snr_db: float = np.inf
    noise_kind: str = "gaussian"  # or "uniform"
    eta_multiplier: float = 1.0
    noise_floor: float = 1e-3  # eta reported in the noiseless limit
    n_sectors: int = 4
    codebook: np.ndarray | None = None  # defaults to the standard codebook

    def sector_edges(self) -> np.ndarray:
        return np.linspace(0.0, np.pi, self.n_sectors + 1)

    def mobile_codebook(self) -> np.ndarray:
        if self.codebook is not None:
            return np.asarray(self.codebook, dtype=float)
        max_shift = int(np.floor(self.tau_max))
        return standard_codebook(
            self.t_len, self.t_len // (max_shift + 1), max_shift
        )

    def __post_init__(self):
        if self.t_len < 1:
            raise ValueError("t_len must be positive")
        if not self.tau_max < self.t_len:
            raise ValueError("tau_max must be smaller than t_len")
        om = self.antenna_set()
        if om.size == 0 or np.any(np.diff(om) <= 0):
            raise ValueError("omega must be nonempty and strictly increasing")
        if om[0] < 0 or om[-1] >= self.array.n_antennas:
            raise ValueError("omega indices out of antenna range")
        for u in self.users:
            if u.active:
                if u.delay > self.tau_max:
                    raise ValueError(f"user {u.user_id} delay exceeds tau_max")
                g = u.gain_error
                if g is not None and np.max(np.abs(g)) > self.zeta + 1e-12:
                    raise ValueError(f"user {u.user_id} gain error exceeds zeta")

    def antenna_set(self) -> np.ndarray:
        if self.omega is None:
            return np.arange(self.array.n_antennas)
        return np.asarray(self.omega, dtype=int)

    @property
    def n_selected(self) -> int:
        return self.antenna_set().size

    @property
    def c_e(self) -> float:
        return 1.0 + self.zeta

    def active_users(self) -> tuple[UserProfile, ...]:
        return tuple(u for u in self.users if u.active)

    def active_ids(self, mobility: str | None = None) -> set[int]:
        return {
            u.user_id
            for u in self.users
            if u.active and (mobility is None or u.mobility == mobility)
        }

    def ids(self, mobility: str | None = None) -> set[int]:
        return {
            u.user_id
            for u in self.users
            if mobility is None or u.mobility == mobility
        }


@dataclass(frozen=True)
class ReceivedSignal:
    """Observed M x T matrix with its antenna set and noise-norm bound."""

    y: np.ndarray
    omega: np.ndarray
    noise_bound: float


def delay_gain_vector(
    delay: float, gain_error: np.ndarray | None, t_len: int, zeta: float = np.inf
) -> np.ndarray:
    """Diagonal of the delay-gain matrix: phase ramp times (1 + gain error).

    The induced diagonal operator has spectral norm max_t |entry|, which is
    bounded by 1 + zeta when the gain error respects the bound.
    """
    if gain_error is None:
        gain_error = np.zeros(t_len)
    gain_error = np.asarray(gain_error, dtype=float)
    if gain_error.shape != (t_len,):
        raise ValueError("gain_error must have length t_len")
    if np.max(np.abs(gain_error), initial=0.0) > zeta + 1e-12:
        raise ValueError("gain error violates the zeta bound")
    t = np.arange(t_len)
    return np.exp(2j * np.pi * delay * t / t_len) * (1.0 + gain_error)


def _frequency_row(profile: UserProfile, t_len: int, zeta: float) -> np.ndarray:
    """Row factor of the user's rank-1 contribution: conj(F phi) * delay-gain."""
    psi = np.fft.fft(np.asarray(profile.preamble, dtype=float), norm="ortho")
    e = delay_gain_vector(profile.delay, profile.gain_error, t_len, zeta)
    return np.conj(psi) * e


def _signal_part(scenario: Scenario) -> np.ndarray:
    om = scenario.antenna_set()
    y = np.zeros((om.size, scenario.t_len), dtype=complex)
    for u in scenario.active_users():
        h = synthesize_channel(scenario.array, u.channel)[om]
        y += np.outer(h, _frequency_row(u, scenario.t_len, scenario.zeta))
    return y


def compute_snr(signal_part: np.ndarray, sigma: float) -> float:
    """SNR in dB: signal Frobenius energy over M*T*sigma^2; -inf for zero signal."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    energy = np.linalg.norm(signal_part) ** 2
    if energy == 0:
        return -np.inf
    m, t = signal_part.shape
    return 10.0 * np.log10(energy / (m * t * sigma**2))


def _draw_noise(
    shape: tuple[int, int], sigma: float, kind: str, rng: np.random.Generator
) -> np.ndarray:
    if kind == "gaussian":
        re = rng.standard_normal(shape)
        im = rng.standard_normal(shape)
        return (re + 1j * im) * (sigma / np.sqrt(2))
    if kind == "uniform":
        # matches the per-entry variance sigma^2 of the Gaussian draw
        half = sigma * np.sqrt(1.5)
        re = rng.uniform(-half, half, shape)
        im = rng.uniform(-half, half, shape)
        return re + 1j * im
    raise ValueError(f"unknown noise kind {kind!r}")


def _finalize(scenario: Scenario, signal: np.ndarray, rng_seed: int) -> ReceivedSignal:
    om = scenario.antenna_set()
    if not np.isfinite(scenario.snr_db):
        return ReceivedSignal(y=signal, omega=om, noise_bound=scenario.noise_floor)
    m, t = signal.shape
    energy = np.linalg.norm(signal) ** 2
    sigma = np.sqrt(energy / (m * t * 10.0 ** (scenario.snr_db / 10.0)))
    rng = np.random.default_rng(np.random.SeedSequence([rng_seed, 0x5E1]))
    noise = _draw_noise((m, t), sigma, scenario.noise_kind, rng)
    eta = max(np.linalg.norm(noise) * scenario.eta_multiplier, scenario.noise_floor)
    return ReceivedSignal(y=signal + noise, omega=om, noise_bound=eta)


def synthesize_received(
    scenario: Scenario, rng_seed: int, strict: bool = False
) -> ReceivedSignal:
    """Forward model via the frequency-domain phase-ramp representation."""
    if strict and not scenario.active_users():
        raise ValueError("no active users in strict mode")
    return _finalize(scenario, _signal_part(scenario), rng_seed)


def time_domain_oracle(scenario: Scenario, rng_seed: int) -> ReceivedSignal:
    """Independent synthesis path for integer delays.

    Places the preamble in a zero-padded buffer at its delay offset, folds
    the buffer into one coherence frame, and takes the unitary DFT. Must
    agree with the phase-ramp model to high precision.
    """
    om = scenario.antenna_set()
    t_len = scenario.t_len
    pad = int(np.ceil(scenario.tau_max))
    y = np.zeros((om.size, t_len), dtype=complex)
    for u in scenario.active_users():
        d = u.delay
        if d != int(d):
            raise ValueError(f"user {u.user_id} has non-integer delay {d}")
        d = int(d)
        buf = np.zeros(t_len + pad)
        buf[d : d + t_len] = np.asarray(u.preamble, dtype=float)
        frame = np.zeros(t_len)
        for s in range(buf.size):
            frame[s % t_len] += buf[s]
        psi = np.fft.fft(frame, norm="ortho")
        gain = 1.0 if u.gain_error is None else 1.0 + np.asarray(u.gain_error)
        h = synthesize_channel(scenario.array, u.channel)[om]
        y += np.outer(h, np.conj(psi) * gain)
    return _finalize(scenario, y, rng_seed)


def standard_codebook(t_len: int, n_columns: int, max_shift: int = 0) -> np.ndarray:
    """Orthonormal nonnegative preamble codebook (spaced standard basis columns).

    Columns are placed ``max_shift + 1`` samples apart so that cyclic
    shifts of up to ``max_shift`` samples (unknown delays) never make one
    column collide with a shifted version of another; identification by
    correlation-with-shift-search then has a unique answer.
    """
    spacing = int(max_shift) + 1
    capacity = t_len // spacing
    if n_columns > capacity:
        raise ValueError(
            f"at most {capacity} shift-distinguishable columns fit in "
            f"t_len={t_len} with max_shift={max_shift}"
        )
    out = np.zeros((t_len, n_columns))
    out[np.arange(n_columns) * spacing, np.arange(n_columns)] = 1.0
    return out


@dataclass(frozen=True)
class ScenarioConfig:
    """Generator knobs for random scenarios; serializable to/from plain dicts."""

    n_antennas: int = 32
    t_len: int = 2
    k_stationary: int = 20
    k_mobile: int = 20
    k_active_stationary: int = 2
    k_active_mobile: int = 1
    l_max: int = 2
    snr_db: float = np.inf
    tau_max: float = 0.0
    zeta: float = 0.0
    spread_width: float = DEFAULT_SPREAD_WIDTH
    m_antennas: int | None = None  # random antenna subset size, None = all
    n_sectors: int = 4
    codebook_size: int | None = None  # defaults to t_len
    los_amplitude: float = 1.0
    nlos_amplitude: float = 0.5
    guaranteed_recovery: bool = False  # enforce cos separation > 1/N per user
    min_cos_separation: float | None = None
    active_los_gap: float | None = None  # min LoS gap between active users
    integer_delays: bool = True
    noise_kind: str = "gaussian"
    eta_multiplier: float = 1.0
    noise_floor: float = 1e-3

    def to_dict(self) -> dict:
        d = {
            "N": self.n_antennas,
            "T": self.t_len,
            "K_S": self.k_stationary,
            "K_M": self.k_mobile,
            "K_aS": self.k_active_stationary,
            "K_aM": self.k_active_mobile,
            "L_max": self.l_max,
            "snr_db": None if not np.isfinite(self.snr_db) else float(self.snr_db),
            "tau_max": self.tau_max,
            "zeta": self.zeta,
            "spread_width": self.spread_width,
        }
        if self.m_antennas is not None:
            d["M"] = self.m_antennas
        for key, default in _OPTIONAL_KEYS.items():
            val = getattr(self, key)
            if val != default:
                d[key] = val
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        snr = d.pop("snr_db", None)
        kwargs = {
            "n_antennas": d.pop("N"),
            "t_len": d.pop("T"),
            "k_stationary": d.pop("K_S"),
            "k_mobile": d.pop("K_M"),
            "k_active_stationary": d.pop("K_aS"),
            "k_active_mobile": d.pop("K_aM"),
            "l_max": d.pop("L_max", 2),
            "snr_db": np.inf if snr is None else float(snr),
            "tau_max": d.pop("tau_max", 0.0),
            "zeta": d.pop("zeta", 0.0),
            "spread_width": d.pop("spread_width", DEFAULT_SPREAD_WIDTH),
            "m_antennas": d.pop("M", None),
        }
        for key in _OPTIONAL_KEYS:
            if key in d:
                kwargs[key] = d.pop(key)
        d.pop("seed", None)
        if d:
            raise ValueError(f"unknown scenario keys: {sorted(d)}")
        return cls(**kwargs)


_OPTIONAL_KEYS = {
    "n_sectors": 4,
    "codebook_size": None,
    "los_amplitude": 1.0,
    "nlos_amplitude": 0.5,
    "guaranteed_recovery": False,
    "min_cos_separation": None,
    "active_los_gap": None,
    "integer_delays": True,
    "noise_kind": "gaussian",
    "eta_multiplier": 1.0,
    "noise_floor": 1e-3,
}


def _spaced_angles(
    rng: np.random.Generator, count: int, lo: float, hi: float, gap: float
) -> np.ndarray:
    """Sorted angles in [lo, hi] with guaranteed pairwise gap."""
    span = hi - lo - (count - 1) * gap
    if span <= 0:
        raise ValueError(
            f"cannot place {count} angles with gap {gap:.4g} in [{lo:.3f}, {hi:.3f}]"
        )
    u = np.sort(rng.uniform(0.0, 1.0, size=count))
    return lo + u * span + np.arange(count) * gap


def build_scenario(config: ScenarioConfig, seed: int) -> Scenario:
    """Generate a full random world from a config and a seed."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5C0]))
    array = ArrayConfig(n_antennas=config.n_antennas)
    n = config.n_antennas
    t_len = config.t_len
    k_s, k_m = config.k_stationary, config.k_mobile
    k_total = k_s + k_m
    if config.k_active_stationary > k_s or config.k_active_mobile > k_m:
        raise ValueError("more active users than users")

    margin = config.spread_width / 2 + 0.05
    lo, hi = margin, np.pi - margin
    active_gap = config.active_los_gap
    if active_gap is None:
        # keeps inter-user path gaps above and intra-user gaps below the
        # default clustering threshold of two spread widths
        active_gap = 3.2 * config.spread_width
    n_active = config.k_active_stationary + config.k_active_mobile

    min_sep = config.min_cos_separation
    if min_sep is None:
        min_sep = (1.0 / n) if config.guaranteed_recovery else 0.0

    # Multipath separation in the cosine domain shrinks by sin(theta), so
    # spreads that must hold separated paths stay near broadside. Active
    # paths are additionally kept off the endfire ends, where the cosine
    # manifold wraps around and atoms near theta=0 alias with atoms near
    # theta=pi, degrading the angular spectrum.
    sin_floor = 0.2
    if min_sep > 0 and config.l_max > 1:
        sin_floor = max(
            sin_floor,
            min(0.95, 1.25 * min_sep * (config.l_max - 1) / config.spread_width),
        )
    band = np.arcsin(sin_floor) + 0.75 * config.spread_width
    act_lo, act_hi = max(lo, band), min(hi, np.pi - band)
    if (
        config.active_los_gap is None
        and n_active > 1
        and (act_hi - act_lo) < (n_active - 1) * active_gap
    ):
        active_gap = 0.98 * (act_hi - act_lo) / (n_active - 1)

    def make_channel(center: float, active: bool) -> UserChannel:
        n_paths = int(rng.integers(1, config.l_max + 1)) if config.l_max > 1 else 1
        return random_user_channel(
            array,
            rng,
            n_paths=n_paths if active else 1,
            center=float(center),
            spread_width=config.spread_width,
            los_amplitude=config.los_amplitude,
            nlos_amplitude=config.nlos_amplitude,
            min_cos_separation=min_sep,
        )

    # Active users first, generously separated so clusters stay disjoint.
    # Channels are realized immediately because the line of sight can move
    # away from the spread center; inactive placement must avoid the
    # realized angles, not the centers.
    active_centers = _spaced_angles(rng, n_active, act_lo, act_hi, active_gap)
    rng.shuffle(active_centers)
    active_channels = [make_channel(float(c), True) for c in active_centers]
    active_los = np.asarray([ch.los_angle for ch in active_channels])

    # Inactive users anywhere, but kept clear of each other and of actives
    # so the line-of-sight registry stays unambiguous.
    n_inactive = k_total - n_active
    inactive_gap = min(2.0 * np.deg2rad(1.0), 0.6 * (hi - lo) / max(k_total, 1))
    # the clearance between active users and everyone else must not shrink
    # with the population: only the few active users need breathing room,
    # and identity matching by angle needs them clear of other registrants
    clearance = max(inactive_gap, 2.0 * np.deg2rad(1.0))
    inactive_los = []
    if n_inactive > 0:
        candidates = _spaced_angles(rng, n_inactive, lo, hi, inactive_gap)
        for ang in candidates:
            if np.min(np.abs(active_los - ang)) < clearance:
                ang = ang + 1.5 * clearance
                if ang > hi or np.min(np.abs(active_los - ang)) < clearance:
                    ang = max(lo, ang - 3.0 * clearance)
            inactive_los.append(ang)
    inactive_los = np.asarray(inactive_los)
    rng.shuffle(inactive_los)

    max_shift = int(np.floor(config.tau_max))
    codebook_size = config.codebook_size or t_len // (max_shift + 1)
    codebook = standard_codebook(t_len, codebook_size, max_shift)
    sector_edges = np.linspace(0.0, np.pi, config.n_sectors + 1)

    def sector_of(theta: float) -> int:
        s = int(np.searchsorted(sector_edges, theta, side="right")) - 1
        return min(max(s, 0), config.n_sectors - 1)

    def draw_delay() -> float:
        if config.tau_max <= 0:
            return 0.0
        if config.integer_delays:
            return float(rng.integers(0, int(config.tau_max) + 1))
        return float(rng.uniform(0.0, config.tau_max))

    def draw_gain_error() -> np.ndarray | None:
        if config.zeta <= 0:
            return None
        return rng.uniform(-config.zeta, config.zeta, size=t_len)

    users = []
    used_combos: set[tuple[int, int]] = set()
    mobile_combo_cursor: dict[int, int] = {}

    def next_index(sector: int) -> int | None:
        start = mobile_combo_cursor.get(sector, 0)
        for p in range(start, codebook_size):
            if (sector, p) not in used_combos:
                mobile_combo_cursor[sector] = p + 1
                return p
        return None

    uid = 0
    active_chan_iter = iter(active_channels)
    inactive_iter = iter(inactive_los)

    def channel_for(active: bool) -> UserChannel:
        if active:
            return next(active_chan_iter)
        return make_channel(float(next(inactive_iter)), False)

    for i in range(k_s):
        active = i < config.k_active_stationary
        phi = rng.uniform(0.0, 1.0, size=t_len)
        phi /= np.linalg.norm(phi)
        users.append(
            UserProfile(
                user_id=uid,
                mobility=STATIONARY,
                channel=channel_for(active),
                preamble=phi,
                delay=draw_delay() if active else 0.0,
                gain_error=None,
                active=active,
            )
        )
        uid += 1

    for i in range(k_m):
        active = i < config.k_active_mobile
        channel = channel_for(active)
        # the realized line of sight can differ from the spread center, so
        # the sector is taken from the channel the registry will see
        sector = sector_of(channel.los_angle)
        idx = next_index(sector)
        if idx is None and active:
            raise ValueError(
                f"ran out of preambles in sector {sector}: "
                f"increase t_len, codebook_size, or n_sectors"
            )
        if idx is not None:
            used_combos.add((sector, idx))
        phi = codebook[:, idx if idx is not None else 0].copy()
        users.append(
            UserProfile(
                user_id=uid,
                mobility=MOBILE,
                channel=channel,
                preamble=phi,
                delay=draw_delay() if active else 0.0,
                gain_error=draw_gain_error() if active else None,
                active=active,
                preamble_index=idx,
            )
        )
        uid += 1

    omega = None
    if config.m_antennas is not None and config.m_antennas < n:
        omega = np.sort(rng.choice(n, size=config.m_antennas, replace=False))

    return Scenario(
        array=array,
        users=tuple(users),
        t_len=t_len,
        tau_max=config.tau_max,
        zeta=config.zeta,
        omega=omega,
        snr_db=config.snr_db,
        noise_kind=config.noise_kind,
        eta_multiplier=config.eta_multiplier,
        noise_floor=config.noise_floor,
        n_sectors=config.n_sectors,
        codebook=codebook,
    )
