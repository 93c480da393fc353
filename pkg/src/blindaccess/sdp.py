"""Goal-oriented dual SDP: maximize the data correlation of a dual matrix
subject to a Schur-complement PSD block and Toeplitz trace constraints.

Solved by a purpose-built ADMM (exact PSD projection by Hermitian
eigendecomposition, exact per-diagonal affine projection). A CVXPY-based
reference solver over the identical program is provided for cross-checks
on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .scenario import ReceivedSignal


def adjoint_expand(v: np.ndarray, omega: np.ndarray, n: int) -> np.ndarray:
    """Embed an M x T matrix into N rows: selected rows carry v, rest zero."""
    omega = np.asarray(omega, dtype=int)
    if omega.size != v.shape[0]:
        raise ValueError("omega size must match row count of v")
    if omega.size and (omega.min() < 0 or omega.max() >= n):
        raise IndexError("omega index out of range")
    out = np.zeros((n, v.shape[1]), dtype=complex)
    out[omega] = v
    return out


@dataclass(frozen=True)
class SdpProblem:
    y: np.ndarray  # observed M x T matrix
    omega: np.ndarray
    gamma: float
    c1: float
    n: int
    t: int

    def __post_init__(self):
        if self.gamma <= 0 or self.c1 <= 0:
            raise ValueError("gamma and c1 must be positive")


@dataclass
class SdpSolution:
    v: np.ndarray  # dual matrix, M x T
    q: np.ndarray  # Hermitian N x N Gram-like matrix
    objective: float
    primal_residual: float
    dual_residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SolverOptions:
    tolerance: float = 1e-6
    max_iter: int = 5000
    rho: float = 1.0
    adapt_rho: bool = True
    grid_size: int = 4096


def build_problem(
    signal: ReceivedSignal,
    n_antennas: int,
    zeta: float = 0.0,
    beta: float | np.ndarray = 1.0,
    max_preamble_norm: float = 1.0,
    eta_floor: float = 1e-6,
) -> SdpProblem:
    """Assemble the dual program from an observation.

    gamma defaults to 1/eta; c1 couples the gain-error bound, the largest
    preamble norm, and the per-user weights: (1+zeta)*max||phi|| /
    (min beta * sqrt(N)).
    """
    eta = max(signal.noise_bound, eta_floor)
    beta_min = float(np.min(beta))
    if beta_min <= 0:
        raise ValueError("beta weights must be positive")
    c1 = (1.0 + zeta) * max_preamble_norm / (beta_min * np.sqrt(n_antennas))
    return SdpProblem(
        y=signal.y,
        omega=np.asarray(signal.omega, dtype=int),
        gamma=1.0 / eta,
        c1=c1,
        n=n_antennas,
        t=signal.y.shape[1],
    )


@dataclass(frozen=True)
class ToeplitzConstraintSet:
    """The 2N-1 real trace functionals forcing unit diagonal mass.

    Each superdiagonal of the Gram matrix must sum to zero except the main
    diagonal, which sums to one; the q=0 functional is the plain trace.
    """

    order: int

    def residuals(self, q: np.ndarray) -> np.ndarray:
        """Complex deviation per diagonal offset 0..N-1."""
        n = self.order
        out = np.empty(n, dtype=complex)
        for d in range(n):
            target = 1.0 if d == 0 else 0.0
            out[d] = np.trace(q, offset=d) - target
        return out

    def max_violation(self, q: np.ndarray) -> float:
        return float(np.max(np.abs(self.residuals(q))))

    def project(self, q: np.ndarray) -> np.ndarray:
        """Nearest Hermitian matrix with the prescribed diagonal sums."""
        n = self.order
        q = 0.5 * (q + q.conj().T)
        out = q.copy()
        for d in range(n):
            target = 1.0 if d == 0 else 0.0
            idx = np.arange(n - d)
            shift = (np.trace(q, offset=d) - target) / (n - d)
            out[idx, idx + d] -= shift
            if d > 0:
                out[idx + d, idx] -= np.conj(shift)
        if n > 0:
            out[np.arange(n), np.arange(n)] = out.diagonal().real
        return out


def _assemble_block(q: np.ndarray, a: np.ndarray, c1: float, t: int) -> np.ndarray:
    n = q.shape[0]
    s = np.zeros((n + t, n + t), dtype=complex)
    s[:n, :n] = q
    s[:n, n:] = c1 * a
    s[n:, :n] = c1 * a.conj().T
    s[n:, n:] = np.eye(t)
    return s


def _psd_project(w: np.ndarray) -> np.ndarray:
    w = 0.5 * (w + w.conj().T)
    vals, vecs = np.linalg.eigh(w)
    vals = np.clip(vals, 0.0, None)
    return (vecs * vals) @ vecs.conj().T


def objective_value(v: np.ndarray, y: np.ndarray, gamma: float) -> float:
    return float(
        np.real(np.sum(np.conj(y) * v)) - np.linalg.norm(v) ** 2 / (2.0 * gamma)
    )


def solve_admm(
    problem: SdpProblem, opts: SolverOptions | None = None
) -> SdpSolution:
    """ADMM on the split (V, Q) vs a consensus copy of the PSD block."""
    opts = opts or SolverOptions()
    n, t = problem.n, problem.t
    omega = problem.omega
    y, gamma, c1 = problem.y, problem.gamma, problem.c1
    toeplitz = ToeplitzConstraintSet(n)
    rho = opts.rho

    v = np.zeros_like(y)
    q = np.eye(n, dtype=complex) / n
    s = _assemble_block(q, adjoint_expand(v, omega, n), c1, t)
    u = np.zeros_like(s)

    primal = dual = np.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        w = s - u
        w = 0.5 * (w + w.conj().T)

        q = toeplitz.project(w[:n, :n])
        b_omega = w[:n, n:][omega, :]
        v = (y + 2.0 * rho * c1 * b_omega) * (gamma / (1.0 + 2.0 * rho * gamma * c1**2))

        g = _assemble_block(q, adjoint_expand(v, omega, n), c1, t)
        s_prev = s
        s = _psd_project(g + u)
        u = u + g - s

        primal = np.linalg.norm(g - s) / max(1.0, np.linalg.norm(g))
        dual = rho * np.linalg.norm(s - s_prev) / max(1.0, np.linalg.norm(u) * rho)

        if primal <= opts.tolerance and dual <= opts.tolerance:
            break
        if opts.adapt_rho and it % 10 == 0:
            if primal > 10.0 * dual:
                rho *= 2.0
                u /= 2.0
            elif dual > 10.0 * primal:
                rho /= 2.0
                u *= 2.0

    converged = primal <= opts.tolerance and dual <= opts.tolerance
    return SdpSolution(
        v=v,
        q=q,
        objective=objective_value(v, y, gamma),
        primal_residual=float(primal),
        dual_residual=float(dual),
        iterations=it,
        converged=converged,
    )


_REFERENCE_SIZE_LIMIT = 24


def solve_reference(problem: SdpProblem) -> SdpSolution:
    """Same program through CVXPY/SCS; test oracle for small instances."""
    import cvxpy as cp

    n, t = problem.n, problem.t
    if n > _REFERENCE_SIZE_LIMIT:
        raise ValueError(f"reference solver limited to N <= {_REFERENCE_SIZE_LIMIT}")
    m = problem.omega.size
    embed = np.zeros((n, m))
    embed[problem.omega, np.arange(m)] = 1.0

    v = cp.Variable((m, t), complex=True)
    z = cp.Variable((n + t, n + t), hermitian=True)
    a = embed @ v
    constraints = [
        z >> 0,
        z[:n, n:] == problem.c1 * a,
        z[n:, n:] == np.eye(t),
    ]
    for d in range(n):
        target = 1.0 if d == 0 else 0.0
        mask = np.eye(n, k=-d)  # trace(Q @ mask) sums superdiagonal d
        constraints.append(cp.trace(z[:n, :n] @ mask) == target)
    obj = cp.Maximize(
        cp.real(cp.sum(cp.multiply(np.conj(problem.y), v)))
        - cp.sum_squares(v) / (2.0 * problem.gamma)
    )
    prob = cp.Problem(obj, constraints)
    prob.solve(solver=cp.SCS, eps=1e-8, max_iters=200_000)
    if prob.status not in ("optimal", "optimal_inaccurate"):
        raise RuntimeError(f"reference solver failed: {prob.status}")

    v_val = np.asarray(v.value)
    q_val = np.asarray(z.value)[:n, :n]
    return SdpSolution(
        v=v_val,
        q=0.5 * (q_val + q_val.conj().T),
        objective=objective_value(v_val, problem.y, problem.gamma),
        primal_residual=0.0,
        dual_residual=0.0,
        iterations=int(prob.solver_stats.num_iters or 0),
        converged=True,
    )


def _steering_grid(n: int, grid: np.ndarray, spacing_ratio: float = 0.5) -> np.ndarray:
    """Rows of normalized steering vectors for each grid angle (G x N)."""
    idx = np.arange(n)[None, :]
    return np.exp(
        -2j * np.pi * spacing_ratio * idx * np.cos(grid)[:, None]
    ) / np.sqrt(n)


def dual_atomic_norm_grid(
    x: np.ndarray, c1: float, grid_size: int, spacing_ratio: float = 0.5
) -> float:
    """Grid approximation of the dual atomic norm: max c1*||X^H a(theta)||."""
    n = x.shape[0]
    if grid_size < 2 * n:
        raise ValueError("grid must be at least Nyquist-dense (>= 2N points)")
    grid = np.linspace(0.0, np.pi, grid_size, endpoint=False)[1:]
    proj = _steering_grid(n, grid).conj() @ x  # G x T
    return float(c1 * np.max(np.linalg.norm(proj, axis=1)))


@dataclass(frozen=True)
class FeasibilityReport:
    min_block_eigenvalue: float
    max_toeplitz_violation: float
    grid_max: float  # max over theta of the scaled dual-polynomial norm
    tolerance: float = 1e-3

    @property
    def feasible(self) -> bool:
        return (
            self.min_block_eigenvalue >= -self.tolerance
            and self.max_toeplitz_violation <= self.tolerance
            and self.grid_max <= 1.0 + self.tolerance
        )


def check_feasibility(
    sol: SdpSolution, problem: SdpProblem, grid_size: int = 4096
) -> FeasibilityReport:
    """Verify the PSD block, the trace constraints, and the induced
    boundedness of the dual polynomial on a dense angle grid.

    The grid bound uses the unnormalized array manifold, which is the
    quantity the Schur block actually controls; with the 1/sqrt(N)
    steering normalization this equals sqrt(N) times the plain
    dual-polynomial norm.
    """
    n, t = problem.n, problem.t
    a = adjoint_expand(sol.v, problem.omega, n)
    block = _assemble_block(sol.q, a, problem.c1, t)
    eigs = np.linalg.eigvalsh(0.5 * (block + block.conj().T))
    toeplitz = ToeplitzConstraintSet(n)
    grid_max = dual_atomic_norm_grid(a, problem.c1 * np.sqrt(n), grid_size)
    return FeasibilityReport(
        min_block_eigenvalue=float(eigs.min()),
        max_toeplitz_violation=toeplitz.max_violation(sol.q),
        grid_max=grid_max,
    )
