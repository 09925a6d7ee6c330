"""Parameter derivatives of the controller's value functions and policy.

The gradients of the action-value and value functions with respect to the
parameter vector are read off the Lagrangian at the primal-dual solution
(a by-product of the solve); the policy Jacobian follows from the implicit
function theorem applied to the smoothed KKT map.
"""

import numpy as np
import scipy.linalg

from .errors import ContractError
from .solver import HorizonProblem


def _check_quality(solution, tol):
    if solution.kkt_residual > tol:
        raise ContractError(
            f"primal-dual point is too loose for sensitivities: "
            f"KKT residual {solution.kkt_residual:.3e} > {tol:.1e}"
        )


def _lagrangian_dtheta(ocp, theta, solution):
    """Gradient of the Lagrangian with respect to theta at a solution."""
    N = ocp.horizon
    g = ocp.discount
    n_theta = theta.layout.size
    traj = solution.trajectory
    out = np.zeros(n_theta)

    ocp.initial_cost.add_dtheta(traj.xs[0], theta, out)
    ocp.terminal_cost.add_dtheta(traj.xs[N], theta, out, scale=g**N)
    for k in range(N):
        z = np.concatenate([traj.xs[k], traj.us[k]])
        ocp.stage_cost.add_dtheta(z, theta, out, scale=g**k)
        if ocp.stage_cost_undiscounted is not None:
            ocp.stage_cost_undiscounted.add_dtheta(z, theta, out)

    # dynamics multipliers hit the theta-dependence of the model
    tmp = np.zeros((ocp.nx, n_theta))
    for k in range(N):
        tmp[:] = 0.0
        ocp.dynamics.add_dtheta_rows(traj.xs[k], traj.us[k], theta, tmp)
        out += solution.chi[k + 1] @ tmp

    # mixed constraints carry theta in their offsets only
    if ocp.mixed_constraint is not None:
        D = np.zeros((ocp.n_mixed, n_theta))
        ocp.mixed_constraint.add_dtheta_rows(theta, D)
        out += solution.mu_stage.sum(axis=0) @ D
    if ocp.terminal_constraint is not None:
        D = np.zeros((ocp.n_terminal, n_theta))
        ocp.terminal_constraint.add_dtheta_rows(theta, D)
        out += solution.mu_terminal @ D
    return out


def grad_q(ocp, theta, s, a, solution, tol=1e-6):
    """Parameter gradient of the action-value function at its solution.

    The solution must come from the action-value solve at (s, a); refuses
    stale or loose points.
    """
    _check_quality(solution, tol)
    return _lagrangian_dtheta(ocp, theta, solution)


def grad_v(ocp, theta, s, solution, tol=1e-6):
    """Parameter gradient of the value function (first input free)."""
    _check_quality(solution, tol)
    return _lagrangian_dtheta(ocp, theta, solution)


def _kkt_theta_jacobian(problem, solution):
    """d xi / d theta at the solution: stationarity, equality, and
    complementarity blocks stacked like the KKT residual."""
    ocp = problem.ocp
    theta = problem.theta
    N, g = ocp.horizon, ocp.discount
    n_theta = theta.layout.size
    traj = solution.trajectory
    nz, neq, ni = problem.nz, problem.neq, problem.ni
    out = np.zeros((nz + neq + ni, n_theta))

    # stationarity block: theta-derivative of grad_z Lagrangian
    block = np.zeros((ocp.nx, n_theta))
    ocp.initial_cost.add_dtheta_grad(traj.xs[0], theta, block)
    out[problem.ix(0), :] += block
    block = np.zeros((ocp.nx, n_theta))
    ocp.terminal_cost.add_dtheta_grad(traj.xs[N], theta, block, scale=g**N)
    out[problem.ix(N), :] += block
    nzu = ocp.nx + ocp.nu
    for k in range(N):
        z = np.concatenate([traj.xs[k], traj.us[k]])
        block = np.zeros((nzu, n_theta))
        ocp.stage_cost.add_dtheta_grad(z, theta, block, scale=g**k)
        if ocp.stage_cost_undiscounted is not None:
            ocp.stage_cost_undiscounted.add_dtheta_grad(z, theta, block)
        ocp.dynamics.add_dtheta_jacT_mult(
            traj.xs[k], traj.us[k], solution.chi[k + 1], theta, block
        )
        out[problem.ix(k), :] += block[: ocp.nx]
        out[problem.iu(k), :] += block[ocp.nx :]

    # equality block: dynamics defects move with the model parameters
    for k in range(N):
        block = np.zeros((ocp.nx, n_theta))
        ocp.dynamics.add_dtheta_rows(traj.xs[k], traj.us[k], theta, block)
        rows = slice(nz + ocp.nx + k * ocp.nx, nz + ocp.nx + (k + 1) * ocp.nx)
        out[rows, :] += block

    # complementarity block: -diag(m) dc_I/dtheta on the mixed rows
    if ocp.mixed_constraint is not None and problem.ni:
        D = np.zeros((ocp.n_mixed, n_theta))
        ocp.mixed_constraint.add_dtheta_rows(theta, D)
        for k in range(N):
            rows = problem.rows_h[k]
            if rows.size:
                out[nz + neq + rows, :] -= solution.m[rows, None] * D
    if ocp.terminal_constraint is not None and problem.rows_hf.size:
        D = np.zeros((ocp.n_terminal, n_theta))
        ocp.terminal_constraint.add_dtheta_rows(theta, D)
        rows = problem.rows_hf
        out[nz + neq + rows, :] -= solution.m[rows, None] * D
    return out


def _kkt_y_jacobian(problem, solution, exact_hessian=True):
    """d xi / d y at the solution, with exact dynamics curvature by default."""
    ocp = problem.ocp
    z, lam, m = solution.z, solution.lam, solution.m
    nz, neq, ni = problem.nz, problem.neq, problem.ni
    _, J_eq = problem.eq_residual_jacobian(z)
    c_I = problem.ineq_residual(z)

    H = problem.H_cost.copy()
    if exact_hessian:
        N = ocp.horizon
        xs, us, _, _ = problem.split(z)
        chis = np.array([lam[ocp.nx + k * ocp.nx : ocp.nx + (k + 1) * ocp.nx]
                         for k in range(N)])
        curv = ocp.dynamics.hessian_contract_batch(xs[:N], us, chis, problem.theta)
        for k in range(N):
            idx = np.r_[np.arange(k * ocp.nx, (k + 1) * ocp.nx),
                        np.arange(problem.off_u + k * ocp.nu,
                                  problem.off_u + (k + 1) * ocp.nu)]
            H[np.ix_(idx, idx)] += curv[k]

    ny = nz + neq + ni
    out = np.zeros((ny, ny))
    out[:nz, :nz] = H
    out[:nz, nz : nz + neq] = J_eq.T
    out[nz : nz + neq, :nz] = J_eq
    if ni:
        out[:nz, nz + neq :] = problem.J_ineq.T
        out[nz + neq :, :nz] = -(m[:, None] * problem.J_ineq)
        out[nz + neq :, nz + neq :] = -np.diag(c_I)
    return out


def policy_jacobian(ocp, theta, s, solution, tol=1e-6):
    """Jacobian of the policy with respect to theta, shape (nu, n_theta).

    Solves the implicit-function system of the smoothed KKT map at the
    value-problem solution and selects the first-input rows.  Raises with
    the smallest singular value when the KKT matrix is numerically singular.
    """
    _check_quality(solution, tol)
    problem = HorizonProblem(ocp, theta, s)
    J_y = _kkt_y_jacobian(problem, solution)
    J_theta = _kkt_theta_jacobian(problem, solution)
    selector = np.zeros((J_y.shape[0], ocp.nu))
    rows = np.arange(problem.off_u, problem.off_u + ocp.nu)
    selector[rows, np.arange(ocp.nu)] = 1.0
    try:
        lu = scipy.linalg.lu_factor(J_y.T)
        W = scipy.linalg.lu_solve(lu, selector)
    except (scipy.linalg.LinAlgError, ValueError) as exc:
        smin = np.linalg.svd(J_y, compute_uv=False)[-1]
        raise ContractError(
            f"KKT matrix singular for policy sensitivities "
            f"(smallest singular value {smin:.3e})"
        ) from exc
    if not np.all(np.isfinite(W)):
        smin = np.linalg.svd(J_y, compute_uv=False)[-1]
        raise ContractError(
            f"KKT solve produced non-finite policy sensitivities "
            f"(smallest singular value {smin:.3e})"
        )
    return -(W.T @ J_theta)


def activity_margin(ocp, theta, s, solution, a=None):
    """Smallest max(|constraint value|, multiplier) over inequality rows.

    At exit barrier tau every complementarity product equals tau, so a
    weakly active row has both factors near sqrt(tau), while strongly
    active or clearly inactive rows have one factor of order one.  Points
    whose margin falls below sqrt(tau)-scale are skipped by the
    finite-difference checks.
    """
    if solution.m is None or solution.m.size == 0:
        return np.inf
    problem = HorizonProblem(ocp, theta, s, a=a)
    c_I = problem.ineq_residual(solution.z)
    return float(np.min(np.maximum(np.abs(c_I), solution.m)))


def relative_errors(analytic, reference, floor_frac=1e-3, floor_abs=1e-6):
    """Entrywise relative error with a magnitude floor.

    Entries are compared against max(|reference_i|, floor_frac * |reference|_inf,
    floor_abs): entries far below the gradient's own scale cannot be resolved
    by a finite-difference oracle whose noise floor is solver-tolerance / step.
    """
    analytic = np.asarray(analytic, dtype=float)
    reference = np.asarray(reference, dtype=float)
    scale = float(np.max(np.abs(reference))) if reference.size else 0.0
    denom = np.maximum(np.abs(reference), max(floor_frac * scale, floor_abs))
    return np.abs(analytic - reference) / denom


def write_gradient_check_csv(rows, path):
    """Gradient-check report: point id, slice name, analytic value,
    finite-difference value, relative error."""
    with open(path, "w") as fh:
        fh.write("point,slice,analytic,finite_difference,rel_error\n")
        for point_id, name, ana, fd, rel in rows:
            fh.write(f"{point_id},{name},{ana!r},{fd!r},{rel!r}\n")
