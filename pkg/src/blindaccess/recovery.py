"""Alternating minimization over path gains, preambles, and delay-gain
diagonals, with the arrival angles held fixed at their clustered estimates.

The data term is linear in each block, so every update is a (projected)
least-squares step; the full-cycle residual never increases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .arrays import ArrayConfig, steering_matrix
from .scenario import ReceivedSignal
from .spectrum import ClusterResult


@dataclass(frozen=True)
class AmOptions:
    tol: float = 1e-8  # relative residual change per cycle
    max_iter: int = 200
    ridge_eps: float = 1e-8
    min_bin_weight: float = 1e-12  # skip frequency bins with no regressor mass
    structured_delay_gain: bool = True  # snap the diagonal to ramp*(1+gain)


@dataclass
class AmEstimate:
    gains: list[np.ndarray]  # per-cluster complex path gains
    preambles: np.ndarray  # T x K_hat, nonnegative unit-norm columns
    delay_gain: list[np.ndarray]  # per-cluster length-T complex diagonals
    residual: float
    iterations: int
    converged: bool
    stalled: bool = False


@dataclass
class _AmState:
    steering: list[np.ndarray]  # per-cluster M x L_k selected steering matrices
    alpha: list[np.ndarray]
    phi: np.ndarray  # T x K real nonnegative columns
    e_diag: list[np.ndarray]
    c_e: float

    def rows(self) -> list[np.ndarray]:
        """Per-cluster frequency-domain row factors conj(F phi_k) * E_k."""
        psi = np.fft.fft(self.phi, axis=0, norm="ortho")
        return [np.conj(psi[:, k]) * self.e_diag[k] for k in range(self.phi.shape[1])]

    def model(self) -> np.ndarray:
        rows = self.rows()
        out = np.zeros(
            (self.steering[0].shape[0], self.phi.shape[0]), dtype=complex
        )
        for k, a in enumerate(self.steering):
            out += np.outer(a @ self.alpha[k], rows[k])
        return out


def _residual(y: np.ndarray, state: _AmState) -> float:
    return float(np.linalg.norm(y - state.model()))


def update_gains(y: np.ndarray, state: _AmState, ridge_eps: float) -> None:
    """Joint exact least squares over all path gains (model is linear)."""
    rows = state.rows()
    cols = []
    for k, a in enumerate(state.steering):
        for l in range(a.shape[1]):
            cols.append(np.outer(a[:, l], rows[k]).ravel())
    design = np.column_stack(cols)
    target = y.ravel()
    sol, _, rank, _ = np.linalg.lstsq(design, target, rcond=None)
    if rank < design.shape[1]:
        gram = design.conj().T @ design
        gram[np.diag_indices_from(gram)] += ridge_eps
        sol = np.linalg.solve(gram, design.conj().T @ target)
    pos = 0
    old = [a.copy() for a in state.alpha]
    for k, a in enumerate(state.steering):
        state.alpha[k] = sol[pos : pos + a.shape[1]]
        pos += a.shape[1]
    # ridge is a fallback heuristic; never let it move uphill
    if rank < design.shape[1]:
        before = state.alpha
        state.alpha = old
        r_old = _residual(y, state)
        state.alpha = before
        if _residual(y, state) > r_old:
            state.alpha = old


def _cluster_residual(y: np.ndarray, state: _AmState, k: int) -> np.ndarray:
    """Observation minus every cluster's contribution except cluster k."""
    rows = state.rows()
    out = y.astype(complex).copy()
    for j, a in enumerate(state.steering):
        if j != k:
            out -= np.outer(a @ state.alpha[j], rows[j])
    return out


def update_preamble(
    y: np.ndarray, state: _AmState, opts: AmOptions
) -> bool:
    """Per-cluster time-domain least squares, projected to the nonnegative
    unit sphere, with backtracking so the residual cannot grow.

    Returns True if any cluster stalled on an all-zero projection.
    """
    t_len, n_clusters = state.phi.shape
    stalled = False
    for k in range(n_clusters):
        r_k = _cluster_residual(y, state, k)
        b = state.steering[k] @ state.alpha[k]
        bb = np.linalg.norm(b) ** 2
        if bb < opts.min_bin_weight:
            continue
        e = state.e_diag[k]
        psi = np.fft.fft(state.phi[:, k], norm="ortho")
        c = b.conj() @ r_k / bb  # optimal conj(psi_t) * E_t per bin
        ok = np.abs(e) > opts.min_bin_weight
        psi_new = psi.copy()
        psi_new[ok] = np.conj(c[ok] / e[ok])
        phi_ls = np.real(np.fft.ifft(psi_new, norm="ortho"))
        phi_proj = np.clip(phi_ls, 0.0, None)
        norm = np.linalg.norm(phi_proj)
        if norm == 0.0:
            stalled = True
            continue
        prev = state.phi[:, k].copy()
        r_before = _residual(y, state)
        candidate = phi_proj / norm
        for _ in range(8):
            state.phi[:, k] = candidate
            if _residual(y, state) <= r_before + 1e-12:
                break
            step = 0.5 * (candidate + prev)
            nstep = np.linalg.norm(step)
            if nstep == 0.0:
                break
            candidate = step / nstep
        else:
            state.phi[:, k] = prev
    return stalled


def _fit_structured_diagonal(
    e_free: np.ndarray, weights: np.ndarray, c_e: float, n_grid: int = 1024
) -> np.ndarray:
    """Weighted best fit of ramp(tau) * (1 + gain) to a free diagonal.

    Minimizes sum_t w_t |ramp_t(tau) (1+g_t) - e_t|^2 with |g_t| bounded by
    c_e - 1: the gains are per-bin closed form given tau, and tau is found
    by a dense cyclic grid search with quadratic refinement.
    """
    t_len = e_free.size
    zeta = max(c_e - 1.0, 0.0)
    t = np.arange(t_len)

    def assemble(tau: float) -> tuple[float, np.ndarray]:
        ramp = np.exp(2j * np.pi * tau * t / t_len)
        gain = np.clip(np.real(e_free * np.conj(ramp)) - 1.0, -zeta, zeta)
        cand = ramp * (1.0 + gain)
        cost = float(np.sum(weights * np.abs(cand - e_free) ** 2))
        return cost, cand

    taus = np.arange(n_grid) * (t_len / n_grid)
    costs = np.array([assemble(tau)[0] for tau in taus])
    i = int(np.argmin(costs))
    # 3-point quadratic refinement on the cyclic grid
    lo, hi = costs[(i - 1) % n_grid], costs[(i + 1) % n_grid]
    denom = lo - 2 * costs[i] + hi
    tau = taus[i]
    if denom > 0:
        refined = tau + 0.5 * (lo - hi) / denom * (t_len / n_grid)
        if assemble(refined)[0] <= costs[i]:
            tau = refined
    return assemble(tau)[1]


def update_delay_gain(
    y: np.ndarray, state: _AmState, opts: AmOptions, structured: bool = False
) -> None:
    """Closed-form scalar least squares per frequency bin, magnitude-clipped
    to the delay-gain spectral bound; empty bins keep their previous value.

    In structured mode the diagonal is instead the best fit within the
    ramp*(1+gain) model class. A free magnitude-bounded diagonal leaves
    the preamble determined only up to per-bin phases (time reversal, for
    one), so a refinement pass on the physical class is what makes the
    factors identifiable up to cyclic shifts.
    """
    t_len, n_clusters = state.phi.shape
    for k in range(n_clusters):
        r_k = _cluster_residual(y, state, k)
        b = state.steering[k] @ state.alpha[k]
        bb = np.linalg.norm(b) ** 2
        if bb < opts.min_bin_weight:
            continue
        psi = np.fft.fft(state.phi[:, k], norm="ortho")
        e = state.e_diag[k].copy()
        proj = b.conj() @ r_k / bb  # = conj(psi_t) * E_t at the optimum
        ok = np.abs(psi) > opts.min_bin_weight
        e[ok] = psi[ok] * proj[ok] / np.abs(psi[ok]) ** 2
        if structured:
            weights = np.abs(psi) ** 2
            state.e_diag[k] = _fit_structured_diagonal(e, weights, state.c_e)
            continue
        mags = np.abs(e)
        over = mags > state.c_e
        e[over] *= state.c_e / mags[over]
        state.e_diag[k] = e


def _canonicalize(state: _AmState) -> None:
    # split of a unit-modulus factor between gains and delay-gain diagonal
    # is arbitrary; pin the first diagonal entry to the positive real axis
    for k in range(len(state.e_diag)):
        e0 = state.e_diag[k][0]
        if abs(e0) > 1e-12:
            u = e0 / abs(e0)
            state.e_diag[k] = state.e_diag[k] * np.conj(u)
            state.alpha[k] = state.alpha[k] * u


def am_solve(
    signal: ReceivedSignal,
    clusters: ClusterResult,
    array: ArrayConfig,
    c_e: float = 1.0,
    opts: AmOptions | None = None,
    init: AmEstimate | None = None,
) -> AmEstimate:
    """Cyclic block minimization: gains, then preambles, then delay-gains."""
    opts = opts or AmOptions()
    if clusters.k_hat == 0:
        raise ValueError("need at least one cluster")
    y = signal.y
    om = np.asarray(signal.omega, dtype=int)
    t_len = y.shape[1]

    steering = [
        steering_matrix(array, np.asarray(c))[om, :] for c in clusters.clusters
    ]
    if init is not None:
        state = _AmState(
            steering=steering,
            alpha=[g.astype(complex).copy() for g in init.gains],
            phi=init.preambles.copy(),
            e_diag=[e.astype(complex).copy() for e in init.delay_gain],
            c_e=c_e,
        )
    else:
        flat = np.full((t_len, clusters.k_hat), 1.0 / np.sqrt(t_len))
        state = _AmState(
            steering=steering,
            alpha=[np.zeros(a.shape[1], dtype=complex) for a in steering],
            phi=flat,
            e_diag=[np.ones(t_len, dtype=complex) for _ in range(clusters.k_hat)],
            c_e=c_e,
        )

    residual, iters, converged, stalled = _am_loop(
        y, state, opts, structured=False
    )
    if opts.structured_delay_gain:
        # refinement pass on the physical diagonal class; its first cycle
        # re-bases the residual because the free-phase diagonal need not
        # lie in the class
        residual, it2, converged, st2 = _am_loop(
            y, state, opts, structured=True
        )
        iters += it2
        stalled |= st2
    _canonicalize(state)

    return AmEstimate(
        gains=[a.copy() for a in state.alpha],
        preambles=state.phi.copy(),
        delay_gain=[e.copy() for e in state.e_diag],
        residual=residual,
        iterations=iters,
        converged=converged,
        stalled=stalled,
    )


def _am_loop(
    y: np.ndarray, state: _AmState, opts: AmOptions, structured: bool
) -> tuple[float, int, bool, bool]:
    """Cyclic minimization until the residual drop stalls.

    The residual cannot increase from one full cycle to the next (hard
    error if it does); the first cycle is exempt because the incoming
    state may not satisfy the cycle's constraint class.
    """
    residual = np.inf
    stalled = False
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        update_gains(y, state, opts.ridge_eps)
        stalled |= update_preamble(y, state, opts)
        update_delay_gain(y, state, opts, structured=structured)
        new_residual = _residual(y, state)
        if new_residual > residual + 1e-9 * max(1.0, residual):
            raise RuntimeError(
                f"residual increased in cycle {it}: {residual} -> {new_residual}"
            )
        drop = residual - new_residual
        residual = new_residual
        if drop <= opts.tol * max(residual, 1e-30):
            converged = True
            break
    return residual, it, converged, stalled


def extract_delay(e_diag: np.ndarray, round_to_integer: bool = False) -> float:
    """Delay implied by the phase ramp of a delay-gain diagonal.

    Linear regression of the unwrapped phase against the bin index; the
    slope is 2*pi*delay/T.
    """
    t_len = e_diag.size
    phase = np.unwrap(np.angle(e_diag))
    t = np.arange(t_len)
    if t_len == 1:
        slope = 0.0
    else:
        slope = np.polyfit(t, phase, 1)[0]
    delay = slope * t_len / (2.0 * np.pi)
    return float(np.rint(delay)) if round_to_integer else float(delay)


def align_cyclic(estimate: np.ndarray, reference: np.ndarray) -> tuple[int, np.ndarray]:
    """Best cyclic shift of ``estimate`` onto ``reference``.

    The factorization only determines the preamble up to a cyclic shift
    absorbed by the delay-gain phase ramp; factor comparisons must quotient
    that out. Returns (shift, shifted estimate) where shifting the estimate
    back by ``shift`` samples best matches the reference.
    """
    t_len = estimate.size
    errs = [
        np.linalg.norm(np.roll(estimate, -s) - reference) for s in range(t_len)
    ]
    s = int(np.argmin(errs))
    return s, np.roll(estimate, -s)
