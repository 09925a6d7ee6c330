"""Closed-form discounted LQR machinery.

Solves the discounted discrete algebraic Riccati equation (DARE), builds the
equivalent-cost matrices for a mismatched linear model, enumerates all real
symmetric DARE solutions for small systems, and constructs the quadratic
cost-rotation forms used to certify stability and strict dissipativity.

Conventions: the stage cost is the quadratic form [s; a]^T [[T, N], [N^T, R]]
[s; a] (no 1/2 factor) and the value function is V(s) = s^T S s + V0.  The
policy is a = -K s.  Discounting by gamma is equivalent to scaling (A, B) by
sqrt(gamma) in the undiscounted equations.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
import scipy.linalg

from .errors import ContractError, ConvergenceError

DARE_TOL = 1e-10


@dataclass(frozen=True)
class LqrProblem:
    """Discounted linear-quadratic-Gaussian problem data."""

    A: np.ndarray
    B: np.ndarray
    T: np.ndarray
    N: np.ndarray
    R: np.ndarray
    Sigma: np.ndarray
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("A", "B", "T", "N", "R", "Sigma"):
            object.__setattr__(self, name, np.atleast_2d(np.asarray(getattr(self, name), dtype=float)))
        n, m = self.n_states, self.n_inputs
        if self.A.shape != (n, n) or self.B.shape != (n, m):
            raise ContractError("inconsistent A/B dimensions")
        if self.T.shape != (n, n) or self.N.shape != (n, m) or self.R.shape != (m, m):
            raise ContractError("inconsistent cost block dimensions")
        if not np.allclose(self.T, self.T.T):
            raise ContractError("T must be symmetric")
        if not np.allclose(self.R, self.R.T) or np.min(np.linalg.eigvalsh(self.R)) <= 0:
            raise ContractError("R must be symmetric positive definite")
        if not np.allclose(self.Sigma, self.Sigma.T) or np.min(np.linalg.eigvalsh(self.Sigma)) < -1e-12:
            raise ContractError("Sigma must be symmetric positive semidefinite")
        if not 0.0 < self.gamma <= 1.0:
            raise ContractError("gamma must lie in (0, 1]")

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]


@dataclass(frozen=True)
class LqrSolution:
    """Stabilizing DARE solution: value matrix S, gain K, noise offset V0."""

    S: np.ndarray
    K: np.ndarray
    V0: float


def _eliminate_cross_term(A, B, T, N, R):
    """Shift a -> a - R^{-1} N^T s so the transformed cost has no cross term."""
    Rinv_Nt = np.linalg.solve(R, N.T)
    A_shift = A - B @ Rinv_Nt
    T_shift = T - N @ Rinv_Nt
    return A_shift, T_shift, Rinv_Nt


def dare_residuals(A, B, T, N, R, gamma, S, K):
    """Residual norms of the two coupled discounted Riccati identities.

    Accepts raw matrices so that modified (possibly indefinite) cost blocks
    can be checked too.
    """
    A, B = np.atleast_2d(A), np.atleast_2d(B)
    T, N, R = np.atleast_2d(T), np.atleast_2d(N), np.atleast_2d(R)
    r1 = T + gamma * A.T @ S @ A - S - (N + gamma * A.T @ S @ B) @ K
    r2 = (R + gamma * B.T @ S @ B) @ K - N.T - gamma * B.T @ S @ A
    return np.linalg.norm(r1, np.inf), np.linalg.norm(r2, np.inf)


def problem_residuals(prob, S, K):
    """dare_residuals bound to an LqrProblem."""
    return dare_residuals(prob.A, prob.B, prob.T, prob.N, prob.R, prob.gamma, S, K)


def solve_discounted_dare(prob):
    """Stabilizing solution of the discounted LQR problem.

    The cross term N is removed by an input shift, gamma is absorbed into
    sqrt(gamma)-scaled dynamics, and the resulting standard DARE is solved.
    Raises ConvergenceError when no stabilizing solution exists, reporting
    the closed-loop eigenvalue closest to the unit circle.
    """
    A, B, R, g = prob.A, prob.B, prob.R, prob.gamma
    A_shift, T_shift, Rinv_Nt = _eliminate_cross_term(A, B, prob.T, prob.N, R)
    sg = np.sqrt(g)
    try:
        S = scipy.linalg.solve_discrete_are(sg * A_shift, sg * B, T_shift, R)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceError(f"DARE solver failed: {exc}") from exc
    S = 0.5 * (S + S.T)
    K = np.linalg.solve(R + g * B.T @ S @ B, prob.N.T + g * B.T @ S @ A)
    cl_eigs = np.linalg.eigvals(sg * (A - B @ K))
    rho = np.max(np.abs(cl_eigs))
    if rho >= 1.0:
        worst = cl_eigs[np.argmax(np.abs(cl_eigs))]
        raise ConvergenceError(
            f"no stabilizing DARE solution: closed-loop eigenvalue {worst:.6g} "
            f"has discounted modulus {rho:.6g} >= 1",
            residual=rho,
        )
    r1, r2 = problem_residuals(prob, S, K)
    if max(r1, r2) > DARE_TOL * max(1.0, np.linalg.norm(S, np.inf)):
        raise ConvergenceError("DARE residual above tolerance", residual=max(r1, r2))
    return LqrSolution(S=S, K=K, V0=noise_offset(S, prob.Sigma, g))


def noise_offset(S, Sigma, gamma):
    """Expected discounted cost offset gamma (1-gamma)^-1 tr(S Sigma).

    Diverges for gamma = 1 with nonzero noise; reported as +inf.
    """
    trace = float(np.trace(S @ np.atleast_2d(Sigma)))
    if trace == 0.0:
        return 0.0
    if gamma == 1.0:
        return np.inf
    return gamma / (1.0 - gamma) * trace


def q_star_matrix(prob, S):
    """Quadratic form of the action-value function: [s;a]^T W [s;a] + V0."""
    A, B, T, N, R, g = prob.A, prob.B, prob.T, prob.N, prob.R, prob.gamma
    top = np.hstack([T + g * A.T @ S @ A, N + g * A.T @ S @ B])
    bot = np.hstack([N.T + g * B.T @ S @ A, R + g * B.T @ S @ B])
    return np.vstack([top, bot])


def modified_cost_matrices(prob, model_A, model_B, S):
    """Cost blocks that make the mismatched model reproduce the true values.

    Returns (T_hat, N_hat, R_hat) such that the model-based quadratic
    action-value form agrees with the true one for the value matrix S.
    """
    A, B, g = prob.A, prob.B, prob.gamma
    Ah = np.atleast_2d(np.asarray(model_A, dtype=float))
    Bh = np.atleast_2d(np.asarray(model_B, dtype=float))
    T_hat = prob.T + g * A.T @ S @ A - g * Ah.T @ S @ Ah
    N_hat = prob.N + g * A.T @ S @ B - g * Ah.T @ S @ Bh
    R_hat = prob.R + g * B.T @ S @ B - g * Bh.T @ S @ Bh
    return T_hat, N_hat, R_hat


@dataclass(frozen=True)
class DareBranch:
    """One real symmetric DARE solution with its closed-loop diagnostics."""

    S: np.ndarray
    K: np.ndarray
    spectral_radius: float
    stabilizing: bool


def dare_solution_branches(A, B, T, N, R, gamma=1.0, max_dim=3):
    """All real symmetric DARE solutions for a small system.

    Enumerates n-dimensional invariant subspaces of the symplectic pencil of
    the cross-term-free, sqrt(gamma)-scaled problem and keeps every subspace
    that yields a finite, real, symmetric solution with DARE residual below
    tolerance.  Branches are sorted by trace; the stabilizing flag marks
    sqrt(gamma)-scaled closed-loop spectral radius < 1.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    T = np.atleast_2d(np.asarray(T, dtype=float))
    N = np.atleast_2d(np.asarray(N, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    n = A.shape[0]
    if n > max_dim:
        raise ContractError(f"branch enumeration supports n <= {max_dim}, got {n}")
    A_shift, T_shift, _ = _eliminate_cross_term(A, B, T, N, R)
    sg = np.sqrt(gamma)
    At, Bt = sg * A_shift, sg * B
    G = Bt @ np.linalg.solve(R, Bt.T)

    # Pencil M z = mu L z whose n-dimensional deflating subspaces [U; V]
    # give DARE solutions S = V U^{-1}.
    M = np.block([[At, np.zeros((n, n))], [-T_shift, np.eye(n)]])
    L = np.block([[np.eye(n), G], [np.zeros((n, n)), At.T]])
    eigvals, eigvecs = scipy.linalg.eig(M, L)

    def conjugate_closed(vals, tol=1e-8):
        unmatched = [v for v in vals if abs(v.imag) > tol * max(1.0, abs(v))]
        while unmatched:
            v = unmatched.pop()
            dists = [abs(np.conj(v) - u) for u in unmatched]
            if not dists or min(dists) > tol * max(1.0, abs(v)):
                return False
            unmatched.pop(int(np.argmin(dists)))
        return True

    usable = [i for i in range(2 * n) if np.isfinite(eigvals[i])]
    branches = []
    for combo in combinations(usable, n):
        vals = eigvals[list(combo)]
        # Complex eigenvalues must be picked together with their conjugates
        # for the subspace to be real.
        if not conjugate_closed(vals):
            continue
        Z = eigvecs[:, list(combo)]
        U, V = Z[:n, :], Z[n:, :]
        if abs(np.linalg.det(U)) < 1e-12:
            continue
        S = V @ np.linalg.inv(U)
        if np.max(np.abs(S.imag)) > 1e-8:
            continue
        S = S.real
        if np.linalg.norm(S - S.T, np.inf) > 1e-8 * max(1.0, np.linalg.norm(S, np.inf)):
            continue
        S = 0.5 * (S + S.T)
        try:
            K = np.linalg.solve(R + gamma * B.T @ S @ B, N.T + gamma * B.T @ S @ A)
        except np.linalg.LinAlgError:
            continue
        r1, r2 = dare_residuals(A, B, T, N, R, gamma, S, K)
        if max(r1, r2) > DARE_TOL * max(1.0, np.linalg.norm(S, np.inf)):
            continue
        if any(np.allclose(S, b.S, atol=1e-8) for b in branches):
            continue
        rho = float(np.max(np.abs(np.linalg.eigvals(A - B @ K))))
        branches.append(
            DareBranch(S=S, K=K, spectral_radius=rho, stabilizing=bool(sg * rho < 1.0))
        )
    branches.sort(key=lambda b: float(np.trace(b.S)))
    return branches


def rotation_matrices(delta_R, delta_S, model_A, model_B, K_star, gamma=1.0):
    """Quadratic cost-rotation forms for a policy-preserving modification.

    Returns (dW, dW0, dW1) where dW0 penalizes deviation from the feedback
    -K_star s, dW1 is the storage-function rotation whose positive
    definiteness certifies strict dissipativity, and dW = dW0 + dW1 is the
    total shift of the action-value quadratic form.
    """
    dR = np.atleast_2d(np.asarray(delta_R, dtype=float))
    dS = np.atleast_2d(np.asarray(delta_S, dtype=float))
    Ah = np.atleast_2d(np.asarray(model_A, dtype=float))
    Bh = np.atleast_2d(np.asarray(model_B, dtype=float))
    K = np.atleast_2d(np.asarray(K_star, dtype=float))
    if not np.allclose(dR, dR.T):
        raise ContractError("delta_R must be symmetric")
    if np.min(np.linalg.eigvalsh(dR)) < -1e-10:
        raise ContractError("delta_R must be positive semidefinite")
    if not np.allclose(dS, dS.T):
        raise ContractError("delta_S must be symmetric")
    dW0 = np.block([[K.T @ dR @ K, K.T @ dR], [dR @ K, dR]])
    dW1 = -np.block(
        [
            [gamma * Ah.T @ dS @ Ah - dS, gamma * Ah.T @ dS @ Bh],
            [gamma * Bh.T @ dS @ Ah, gamma * Bh.T @ dS @ Bh],
        ]
    )
    return dW0 + dW1, dW0, dW1


def rotated_action_value_form(W, delta_R, delta_S, K_star):
    """Quadratic form of the rotated action-value function.

    The admissible rotation adds Lambda(s,a) = (a + K s)^T dR (a + K s)
    + s^T dS s to the action-value quadratic form W, which leaves the
    minimizer over a at the feedback -K s.
    """
    dR = np.atleast_2d(np.asarray(delta_R, dtype=float))
    dS = np.atleast_2d(np.asarray(delta_S, dtype=float))
    K = np.atleast_2d(np.asarray(K_star, dtype=float))
    lam_form = np.block([[K.T @ dR @ K + dS, K.T @ dR], [dR @ K, dR]])
    return np.asarray(W, dtype=float) + lam_form


@dataclass(frozen=True)
class PositivityReport:
    """Eigenvalue certificates for a rotated quadratic stage cost."""

    min_eig_rotated: float
    min_eig_storage: float
    rotated_positive: bool
    strictly_dissipative: bool


def positivity_checks(W, dW, dW1, eps_pd=1e-6):
    """Check positivity of the rotated cost and the dissipativity certificate.

    min_eig_rotated is the smallest eigenvalue of W + dW (the rotated
    action-value form must be positive definite for a stability-enforcing
    scheme); min_eig_storage is the smallest eigenvalue of dW1 (the quadratic
    strict-dissipativity condition).
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    rotated = W + np.atleast_2d(np.asarray(dW, dtype=float))
    e_rot = float(np.min(np.linalg.eigvalsh(0.5 * (rotated + rotated.T))))
    d1 = np.atleast_2d(np.asarray(dW1, dtype=float))
    e_sto = float(np.min(np.linalg.eigvalsh(0.5 * (d1 + d1.T))))
    return PositivityReport(
        min_eig_rotated=e_rot,
        min_eig_storage=e_sto,
        rotated_positive=bool(e_rot >= eps_pd),
        strictly_dissipative=bool(e_sto >= eps_pd),
    )


def search_rotation(W, model_A, model_B, K_star, gamma=1.0, eps_pd=1e-6,
                    grid=None, refine=2):
    """Coarse-to-fine scalar grid search for a feasible rotation.

    Scans delta_S = s I and delta_R = r I (r >= 0) for the pair maximizing
    the smallest eigenvalue of W + dW, refining the grid around the best
    point.  Returns (delta_S, delta_R, report) for the best pair found;
    report.rotated_positive indicates whether the search met eps_pd.
    """
    n = np.atleast_2d(np.asarray(model_A)).shape[0]
    m = np.atleast_2d(np.asarray(model_B)).shape[1]
    s_vals = np.linspace(-10.0, 10.0, 41) if grid is None else np.asarray(grid, dtype=float)
    r_vals = np.linspace(0.0, 10.0, 21) if grid is None else np.abs(np.asarray(grid, dtype=float))

    def evaluate(s, r):
        dW, _, dW1 = rotation_matrices(r * np.eye(m), s * np.eye(n), model_A, model_B, K_star, gamma)
        rotated = np.asarray(W) + dW
        return float(np.min(np.linalg.eigvalsh(0.5 * (rotated + rotated.T)))), dW1

    best = None
    for _ in range(refine + 1):
        for s in s_vals:
            for r in r_vals:
                e, _ = evaluate(s, r)
                if best is None or e > best[0]:
                    best = (e, s, r)
        _, s0, r0 = best
        ds = (s_vals[1] - s_vals[0]) if len(s_vals) > 1 else 1.0
        dr = (r_vals[1] - r_vals[0]) if len(r_vals) > 1 else 1.0
        s_vals = np.linspace(s0 - ds, s0 + ds, 21)
        r_vals = np.linspace(max(0.0, r0 - dr), r0 + dr, 21)
    _, s0, r0 = best
    dS, dR = s0 * np.eye(n), r0 * np.eye(m)
    dW, _, dW1 = rotation_matrices(dR, dS, model_A, model_B, K_star, gamma)
    return dS, dR, positivity_checks(W, dW, dW1, eps_pd=eps_pd)
