"""Dense primal-dual interior-point solver for the horizon problems.

Solves the value problem (free first input) and the action-value problem
(first input pinned to a given action) of a ParametricOCP, returning the
full primal-dual point.  Complementarity is smoothed at a fixed final
barrier parameter, which keeps the KKT map differentiable for the
sensitivity machinery.

All inequality constraints of the supported problem family are affine in
the decision variables (input bounds, soft state bounds, slack
nonnegativity), so iterates are kept strictly feasible with respect to
them by a fraction-to-boundary rule; the (possibly nonlinear) dynamics
appear only as equality constraints handled by Newton steps on the
smoothed KKT system with a Gauss-Newton cost Hessian.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import ContractError, ConvergenceError
from .ocp import Trajectory


@dataclass(frozen=True)
class SolverSettings:
    kkt_tol: float = 1e-8
    barrier_final: float = 1e-6
    barrier_initial: float = 1e-1
    barrier_decrease: float = 0.1
    fraction_to_boundary: float = 0.995
    max_iterations: int = 200
    levenberg_initial: float = 1e-8
    trace: bool = False


@dataclass
class PrimalDualSolution:
    """Primal-dual point of one horizon solve plus solver diagnostics."""

    trajectory: Trajectory
    objective: float
    chi: np.ndarray            # (N+1, nx): initial-state pin, then dynamics
    zeta: np.ndarray           # (nu,): first-input embedding, zero for V solves
    mu_stage: np.ndarray       # (N, nh) mixed-constraint multipliers
    mu_terminal: np.ndarray    # (nhf,)
    nu_stage: np.ndarray       # (N, 2 nu) input-bound multipliers
    sigma_mult: np.ndarray     # (N, n_slack) slack-bound multipliers (internal)
    sigma_mult_terminal: np.ndarray
    kkt_residual: float
    barrier: float
    iterations: int
    # raw stacked vectors, reused by the sensitivity module
    z: np.ndarray = field(repr=False, default=None)
    lam: np.ndarray = field(repr=False, default=None)
    m: np.ndarray = field(repr=False, default=None)
    trace_rows: list = field(repr=False, default_factory=list)


class HorizonProblem:
    """Dense NLP data for one (ocp, theta, s[, a]) instance.

    Decision vector z = [x_0..x_N | u_0..u_{N-1} | sig_0..sig_{N-1} | sig_N].
    Equality rows: initial-state pin, dynamics defects, optional u_0 = a.
    Inequality rows per stage: input bounds (dropped at stage 0 when the
    input is pinned), mixed rows h - E sig, slack bounds -sig; then the
    terminal mixed and slack rows.
    """

    def __init__(self, ocp, theta, s, a=None):
        self.ocp = ocp
        self.theta = theta
        self.s = np.asarray(s, dtype=float)
        self.a = None if a is None else np.atleast_1d(np.asarray(a, dtype=float))
        if self.s.shape != (ocp.nx,):
            raise ContractError(f"state dimension {self.s.shape} != ({ocp.nx},)")
        if self.a is not None and self.a.shape != (ocp.nu,):
            raise ContractError(f"input dimension {self.a.shape} != ({ocp.nu},)")

        N, nx, nu = ocp.horizon, ocp.nx, ocp.nu
        ns, nsf = ocp.n_slack, ocp.n_slack_terminal
        self.N, self.nx, self.nu, self.ns, self.nsf = N, nx, nu, ns, nsf
        self.nz = (N + 1) * nx + N * nu + N * ns + nsf
        self.off_u = (N + 1) * nx
        self.off_sig = self.off_u + N * nu
        self.off_sigN = self.off_sig + N * ns

        self.neq = nx + N * nx + (nu if self.a is not None else 0)

        self._build_cost()
        self._build_ineq()

    # -- indexing helpers
    def ix(self, k):
        return slice(k * self.nx, (k + 1) * self.nx)

    def iu(self, k):
        return slice(self.off_u + k * self.nu, self.off_u + (k + 1) * self.nu)

    def isig(self, k):
        return slice(self.off_sig + k * self.ns, self.off_sig + (k + 1) * self.ns)

    @property
    def isigN(self):
        return slice(self.off_sigN, self.off_sigN + self.nsf)

    def _build_cost(self):
        """Constant Hessian, linear term, and offset of the quadratic cost."""
        ocp, theta = self.ocp, self.theta
        N, nx, nu = self.N, self.nx, self.nu
        g = ocp.discount
        H = np.zeros((self.nz, self.nz))
        lin = np.zeros(self.nz)
        const = 0.0

        H0 = ocp.initial_cost.hess(theta)
        H[self.ix(0), self.ix(0)] += H0
        lin[self.ix(0)] += ocp.initial_cost.h(theta)
        const += ocp.initial_cost.c(theta)

        Hl = ocp.stage_cost.hess(theta)
        hl = ocp.stage_cost.h(theta)
        cl = ocp.stage_cost.c(theta)
        for k in range(N):
            zidx = np.r_[np.arange(k * nx, (k + 1) * nx),
                         np.arange(self.off_u + k * nu, self.off_u + (k + 1) * nu)]
            H[np.ix_(zidx, zidx)] += g**k * Hl
            lin[zidx] += g**k * hl
            const += g**k * cl
            if self.ns:
                lin[self.isig(k)] += g**k * ocp.slack_weight
        if ocp.stage_cost_undiscounted is not None:
            Hu = ocp.stage_cost_undiscounted.hess(theta)
            hu = ocp.stage_cost_undiscounted.h(theta)
            cu = ocp.stage_cost_undiscounted.c(theta)
            for k in range(N):
                zidx = np.r_[np.arange(k * nx, (k + 1) * nx),
                             np.arange(self.off_u + k * nu,
                                       self.off_u + (k + 1) * nu)]
                H[np.ix_(zidx, zidx)] += Hu
                lin[zidx] += hu
                const += cu

        H[self.ix(N), self.ix(N)] += g**N * ocp.terminal_cost.hess(theta)
        lin[self.ix(N)] += g**N * getattr(ocp.terminal_cost, "h", lambda t: np.zeros(nx))(theta)
        const += g**N * getattr(ocp.terminal_cost, "c", lambda t: 0.0)(theta)
        if self.nsf:
            lin[self.isigN] += g**N * ocp.slack_weight_terminal

        self.H_cost = H
        self.lin_cost = lin
        self.const_cost = const

    def _build_ineq(self):
        """Constant Jacobian and offset of all (affine) inequality rows."""
        ocp, theta = self.ocp, self.theta
        N, nx, nu, ns, nsf = self.N, self.nx, self.nu, self.ns, self.nsf
        nh = ocp.n_mixed
        nhf = ocp.n_terminal

        rows = []
        J_rows = []
        d_rows = []
        self.rows_g = [np.array([], dtype=int) for _ in range(N)]
        self.rows_h = [np.array([], dtype=int) for _ in range(N)]
        self.rows_sig = [np.array([], dtype=int) for _ in range(N)]
        self.rows_hf = np.array([], dtype=int)
        self.rows_sigN = np.array([], dtype=int)
        count = 0

        def add_row(jac_row, d):
            nonlocal count
            J_rows.append(jac_row)
            d_rows.append(d)
            count += 1
            return count - 1

        h_offset = None if nh == 0 else ocp.mixed_constraint.offset(theta)
        hf_offset = None if nhf == 0 else ocp.terminal_constraint.offset(theta)

        for k in range(N):
            if not (k == 0 and self.a is not None):
                idx = []
                for i in range(nu):
                    row = np.zeros(self.nz)
                    row[self.off_u + k * nu + i] = -1.0
                    idx.append(add_row(row, ocp.u_lower[i]))
                for i in range(nu):
                    row = np.zeros(self.nz)
                    row[self.off_u + k * nu + i] = 1.0
                    idx.append(add_row(row, -ocp.u_upper[i]))
                self.rows_g[k] = np.array(idx, dtype=int)
            if nh:
                idx = []
                con = ocp.mixed_constraint
                for i in range(nh):
                    row = np.zeros(self.nz)
                    row[self.ix(k)] = con.Cx[i]
                    if con.Cu is not None:
                        row[self.iu(k)] = con.Cu[i]
                    if ns:
                        row[self.isig(k)] = -ocp.slack_map[i]
                    idx.append(add_row(row, h_offset[i]))
                self.rows_h[k] = np.array(idx, dtype=int)
            if ns:
                idx = []
                for i in range(ns):
                    row = np.zeros(self.nz)
                    row[self.off_sig + k * ns + i] = -1.0
                    idx.append(add_row(row, 0.0))
                self.rows_sig[k] = np.array(idx, dtype=int)
        if nhf:
            idx = []
            con = ocp.terminal_constraint
            for i in range(nhf):
                row = np.zeros(self.nz)
                row[self.ix(N)] = con.Cx[i]
                if nsf:
                    row[self.isigN] = -ocp.slack_map_terminal[i]
                idx.append(add_row(row, hf_offset[i]))
            self.rows_hf = np.array(idx, dtype=int)
        if nsf:
            idx = []
            for i in range(nsf):
                row = np.zeros(self.nz)
                row[self.off_sigN + i] = -1.0
                idx.append(add_row(row, 0.0))
            self.rows_sigN = np.array(idx, dtype=int)

        self.ni = count
        self.J_ineq = np.array(J_rows) if count else np.zeros((0, self.nz))
        self.d_ineq = np.array(d_rows) if count else np.zeros(0)

    # -- evaluation
    def objective(self, z):
        return float(0.5 * z @ self.H_cost @ z + self.lin_cost @ z + self.const_cost)

    def cost_grad(self, z):
        return self.H_cost @ z + self.lin_cost

    def split(self, z):
        N, nx, nu, ns, nsf = self.N, self.nx, self.nu, self.ns, self.nsf
        xs = z[: (N + 1) * nx].reshape(N + 1, nx)
        us = z[self.off_u : self.off_u + N * nu].reshape(N, nu)
        sig = z[self.off_sig : self.off_sig + N * ns].reshape(N, ns)
        sigN = z[self.off_sigN : self.off_sigN + nsf]
        return xs, us, sig, sigN

    def eq_residual_jacobian(self, z, need_jac=True):
        """Equality residuals and (optionally) their Jacobian."""
        N, nx, nu = self.N, self.nx, self.nu
        xs, us, _, _ = self.split(z)
        vals, jacs = self.ocp.dynamics.linearize_batch(xs[:N], us, self.theta)
        r = np.zeros(self.neq)
        r[:nx] = xs[0] - self.s
        for k in range(N):
            r[nx + k * nx : nx + (k + 1) * nx] = vals[k] - xs[k + 1]
        if self.a is not None:
            r[nx + N * nx :] = us[0] - self.a
        if not need_jac:
            return r, None
        J = np.zeros((self.neq, self.nz))
        J[:nx, :nx] = np.eye(nx)
        for k in range(N):
            rows = slice(nx + k * nx, nx + (k + 1) * nx)
            J[rows, self.ix(k)] = jacs[k][:, :nx]
            J[rows, self.iu(k)] = jacs[k][:, nx:]
            J[rows, self.ix(k + 1)] = -np.eye(nx)
        if self.a is not None:
            J[nx + N * nx :, self.iu(0)] = np.eye(nu)
        return r, J

    def ineq_residual(self, z):
        return self.J_ineq @ z + self.d_ineq if self.ni else np.zeros(0)

    def kkt_residual(self, z, lam, m, barrier):
        """Stacked smoothed KKT residual: stationarity, equalities,
        complementarity (-c_I * m - barrier)."""
        r_eq, J_eq = self.eq_residual_jacobian(z)
        c_I = self.ineq_residual(z)
        r_stat = self.cost_grad(z) + J_eq.T @ lam
        if self.ni:
            r_stat += self.J_ineq.T @ m
        r_cent = -c_I * m - barrier if self.ni else np.zeros(0)
        return np.concatenate([r_stat, r_eq, r_cent]), J_eq, c_I

    def initial_point(self, warm=None):
        """Strictly interior start: inputs inside their box, slacks above
        the current constraint values, states from a dynamics rollout."""
        ocp = self.ocp
        N, nx, nu, ns, nsf = self.N, self.nx, self.nu, self.ns, self.nsf
        z = np.zeros(self.nz)

        lo, hi = ocp.u_lower, ocp.u_upper
        width = np.minimum(hi - lo, 1e6)
        margin = (1e-9 if warm is not None else 1e-3) * np.maximum(width, 1.0)
        if warm is not None:
            us = np.asarray(warm.us, dtype=float).copy()
        else:
            mid = np.clip(np.zeros(nu), lo + 0.25 * width, hi - 0.25 * width)
            us = np.tile(mid, (N, 1))
        us = np.clip(us, lo + margin, hi - margin)
        if self.a is not None:
            us[0] = self.a

        xs = np.zeros((N + 1, nx))
        xs[0] = self.s
        if warm is not None and warm.xs.shape == (N + 1, nx):
            xs = np.asarray(warm.xs, dtype=float).copy()
            xs[0] = self.s
        else:
            ok = True
            for k in range(N):
                xs[k + 1] = self.ocp.dynamics.value(xs[k], us[k], self.theta)
                if not np.all(np.isfinite(xs[k + 1])) or np.max(np.abs(xs[k + 1])) > 1e7:
                    ok = False
                    break
            if not ok:
                xs = np.tile(self.s, (N + 1, 1))

        for k in range(N):
            z[self.ix(k)] = xs[k]
            z[self.iu(k)] = us[k]
        z[self.ix(N)] = xs[N]

        # slacks: reuse warm values when provided, then repair so every one
        # sits strictly above its constraint rows
        warm_sig = getattr(warm, "sigmas", None) if warm is not None else None
        warm_sigN = getattr(warm, "sigma_terminal", None) if warm is not None else None
        cold_margin = 1.0 if warm_sig is None else 1e-8
        if ns:
            for k in range(N):
                h = ocp.mixed_constraint.value(xs[k], us[k], self.theta)
                sig = (np.asarray(warm_sig[k], dtype=float).copy()
                       if warm_sig is not None and np.shape(warm_sig) == (N, ns)
                       else np.zeros(ns))
                for j in range(ns):
                    rows = ocp.slack_map[:, j] > 0
                    need = max(0.0, float(np.max(h[rows])))
                    floor = need + cold_margin if need + 1e-12 >= sig[j] else sig[j]
                    sig[j] = max(floor, 1e-10)
                z[self.isig(k)] = sig
        if nsf:
            hf = ocp.terminal_constraint.value(xs[N], None, self.theta)
            sig = (np.asarray(warm_sigN, dtype=float).copy()
                   if warm_sigN is not None and np.shape(warm_sigN) == (nsf,)
                   else np.zeros(nsf))
            for j in range(nsf):
                rows = ocp.slack_map_terminal[:, j] > 0
                need = max(0.0, float(np.max(hf[rows])))
                floor = need + cold_margin if need + 1e-12 >= sig[j] else sig[j]
                sig[j] = max(floor, 1e-10)
            z[self.isigN] = sig

        c_I = self.ineq_residual(z)
        if self.ni and np.max(c_I) >= 0:
            raise ConvergenceError("failed to construct a strictly interior start")
        return z

    def solution_from_point(self, z, lam, m, barrier, residual, iterations,
                            trace_rows=()):
        N, nx, nu, ns, nsf = self.N, self.nx, self.nu, self.ns, self.nsf
        xs, us, sig, sigN = self.split(z)
        traj = Trajectory(xs=xs.copy(), us=us.copy(), sigmas=sig.copy(),
                          sigma_terminal=sigN.copy())
        chi = np.zeros((N + 1, nx))
        chi[0] = lam[:nx]
        for k in range(N):
            chi[k + 1] = lam[nx + k * nx : nx + (k + 1) * nx]
        zeta = lam[nx + N * nx :].copy() if self.a is not None else np.zeros(nu)
        nh, nhf = self.ocp.n_mixed, self.ocp.n_terminal
        mu_stage = np.zeros((N, nh))
        nu_stage = np.zeros((N, 2 * nu))
        sig_mult = np.zeros((N, ns))
        for k in range(N):
            if self.rows_h[k].size:
                mu_stage[k] = m[self.rows_h[k]]
            if self.rows_g[k].size:
                nu_stage[k] = m[self.rows_g[k]]
            if self.rows_sig[k].size:
                sig_mult[k] = m[self.rows_sig[k]]
        mu_terminal = m[self.rows_hf] if self.rows_hf.size else np.zeros(nhf)
        sigN_mult = m[self.rows_sigN] if self.rows_sigN.size else np.zeros(nsf)
        return PrimalDualSolution(
            trajectory=traj,
            objective=self.objective(z),
            chi=chi,
            zeta=zeta,
            mu_stage=mu_stage,
            mu_terminal=mu_terminal,
            nu_stage=nu_stage,
            sigma_mult=sig_mult,
            sigma_mult_terminal=sigN_mult,
            kkt_residual=residual,
            barrier=barrier,
            iterations=iterations,
            z=z.copy(),
            lam=lam.copy(),
            m=m.copy(),
            trace_rows=list(trace_rows),
        )


class InteriorPointSolver:
    """Barrier-continuation Newton solver on the smoothed KKT system."""

    def __init__(self, settings=None):
        self.settings = settings or SolverSettings()

    def solve_v(self, ocp, theta, s, warm=None):
        """Value-problem solve: returns (V(s), primal-dual solution)."""
        problem = HorizonProblem(ocp, theta, s)
        sol = self._solve(problem, warm)
        return sol.objective, sol

    def solve_q(self, ocp, theta, s, a, warm=None):
        """Action-value solve with the first input pinned to a."""
        problem = HorizonProblem(ocp, theta, s, a=a)
        sol = self._solve(problem, warm)
        return sol.objective, sol

    def policy(self, ocp, theta, s, warm=None):
        """First optimal input of the value problem."""
        _, sol = self.solve_v(ocp, theta, s, warm=warm)
        return sol.trajectory.us[0].copy()

    def _solve(self, problem, warm=None):
        cfg = self.settings
        z = problem.initial_point(warm=warm)
        ni = problem.ni
        c_I = problem.ineq_residual(z)
        lam = np.zeros(problem.neq)
        m = np.zeros(0)
        if warm is not None and getattr(warm, "multipliers", None) is not None:
            lam_w, m_w = warm.multipliers
            if lam_w.shape == lam.shape:
                lam = lam_w.copy()
            if ni and m_w.shape == (ni,):
                m = np.clip(m_w.copy(), 1e-12, 1e12)

        if ni:
            if m.size == 0:
                m = cfg.barrier_initial / (-c_I)
            # warm points with inconsistent duals start at a higher barrier
            probe, _, _ = problem.kkt_residual(z, lam, m, cfg.barrier_final)
            res_probe = np.linalg.norm(probe, np.inf)
            tau = float(np.clip(max(np.mean(-c_I * m), 1e-3 * res_probe),
                                cfg.barrier_final, cfg.barrier_initial))
        else:
            m = np.zeros(0)
            tau = cfg.barrier_final

        eps = cfg.levenberg_initial
        trace_rows = []
        recoveries = 0
        nonmono = 0
        xi, J_eq, c_I = problem.kkt_residual(z, lam, m, tau)
        res = np.linalg.norm(xi, np.inf)
        res_ref = res  # watchdog reference, reset at each barrier stage

        for it in range(cfg.max_iterations):
            inner_tol = cfg.kkt_tol if tau <= cfg.barrier_final * (1 + 1e-12) \
                else max(0.1 * tau, cfg.kkt_tol)
            if res <= inner_tol:
                if tau <= cfg.barrier_final * (1 + 1e-12):
                    return problem.solution_from_point(
                        z, lam, m, tau, res, it, trace_rows
                    )
                tau = max(cfg.barrier_final, cfg.barrier_decrease * tau)
                xi, J_eq, c_I = problem.kkt_residual(z, lam, m, tau)
                res = np.linalg.norm(xi, np.inf)
                res_ref = res
                nonmono = 0
                continue

            nz, neq = problem.nz, problem.neq
            r_stat = xi[:nz]
            r_eq = xi[nz : nz + neq]
            r_cent = xi[nz + neq :]

            H_aug = problem.H_cost.copy()
            rhs_z = -r_stat
            if ni:
                scale = m / (-c_I)
                H_aug += (problem.J_ineq.T * scale) @ problem.J_ineq
                rhs_z -= problem.J_ineq.T @ (r_cent / c_I)

            step = None
            for attempt in range(8):
                K = np.zeros((nz + neq, nz + neq))
                K[:nz, :nz] = H_aug + eps * np.eye(nz)
                K[:nz, nz:] = J_eq.T
                K[nz:, :nz] = J_eq
                try:
                    step = scipy.linalg.lu_solve(
                        scipy.linalg.lu_factor(K), np.concatenate([rhs_z, -r_eq])
                    )
                except (scipy.linalg.LinAlgError, ValueError):
                    step = None
                if step is not None and np.all(np.isfinite(step)):
                    break
                eps = max(eps, 1e-10) * 10.0
                if eps > 1e8:
                    raise ConvergenceError(
                        "KKT system remained singular under regularization",
                        residual=res, iterations=it,
                    )
            dz = step[:nz]
            dlam = step[nz:]
            if ni:
                dm = (r_cent - m * (problem.J_ineq @ dz)) / c_I
            else:
                dm = np.zeros(0)

            # fraction-to-boundary step lengths
            alpha_p = 1.0
            alpha_d = 1.0
            if ni:
                ds = -(problem.J_ineq @ dz)
                s_I = -c_I
                shrink = ds < 0
                if np.any(shrink):
                    alpha_p = min(1.0, cfg.fraction_to_boundary *
                                  float(np.min(s_I[shrink] / -ds[shrink])))
                neg = dm < 0
                if np.any(neg):
                    alpha_d = min(1.0, cfg.fraction_to_boundary *
                                  float(np.min(m[neg] / -dm[neg])))

            accepted = False
            for _ in range(25):
                z_new = z + alpha_p * dz
                lam_new = lam + alpha_d * dlam
                m_new = m + alpha_d * dm
                xi_new, J_eq_new, c_I_new = problem.kkt_residual(
                    z_new, lam_new, m_new, tau
                )
                res_new = np.linalg.norm(xi_new, np.inf)
                if not np.isfinite(res_new):
                    alpha_p *= 0.5
                    alpha_d *= 0.5
                    continue
                if res_new <= res * (1.0 - 1e-4 * alpha_p) + 1e-14:
                    accepted = True
                    nonmono = 0
                    res_ref = min(res_ref, res_new)
                    break
                # watchdog: allow a bounded transient increase near the
                # central path, where full Newton steps may overshoot
                if nonmono < 2 and res_new <= 10.0 * res_ref:
                    accepted = True
                    nonmono += 1
                    break
                alpha_p *= 0.5
                alpha_d *= 0.5
                if alpha_p < 1e-8:
                    break
            if accepted:
                eps = max(cfg.levenberg_initial, eps * 0.1)
                z, lam, m = z_new, lam_new, m_new
                xi, J_eq, c_I = xi_new, J_eq_new, c_I_new
                res = res_new
            elif ni and recoveries < 2:
                # stalled: back the barrier off and re-center the duals
                recoveries += 1
                nonmono = 0
                tau = min(cfg.barrier_initial, max(100.0 * tau, 1e-4))
                c_I = problem.ineq_residual(z)
                m = tau / (-c_I)
                xi, J_eq, c_I = problem.kkt_residual(z, lam, m, tau)
                res = np.linalg.norm(xi, np.inf)
                res_ref = res
            elif recoveries < 3:
                # final fallback: cold restart
                recoveries += 1
                nonmono = 0
                z = problem.initial_point(warm=None)
                lam = np.zeros(problem.neq)
                tau = cfg.barrier_initial
                c_I = problem.ineq_residual(z)
                m = tau / (-c_I) if ni else np.zeros(0)
                xi, J_eq, c_I = problem.kkt_residual(z, lam, m, tau)
                res = np.linalg.norm(xi, np.inf)
                res_ref = res
            else:
                eps = min(eps * 10.0, 1e8)
                z, lam, m = z_new, lam_new, m_new
                xi, J_eq, c_I = xi_new, J_eq_new, c_I_new
                res = res_new
            if cfg.trace:
                trace_rows.append((it, res, tau, alpha_p))

        raise ConvergenceError(
            f"interior-point solver hit the iteration cap "
            f"({cfg.max_iterations}), last residual {res:.3e}",
            residual=res, iterations=cfg.max_iterations,
        )


@dataclass(frozen=True)
class WarmStart:
    """Primal warm start (trajectory and slacks) with optional multipliers."""

    xs: np.ndarray
    us: np.ndarray
    sigmas: np.ndarray | None = None
    sigma_terminal: np.ndarray | None = None
    multipliers: tuple | None = None


def warm_start_from(solution, shift=False, discount=1.0):
    """Warm start from a previous solution, optionally shifted one stage.

    Shifting repeats the final stage and moves the stage-wise multiplier
    blocks along with the primal trajectory.  Stage quantities carry a
    discount weighting, so shifted multipliers are rescaled by 1/discount
    (and slacks by discount) to stay consistent with their new stage index.
    """
    traj = solution.trajectory
    if not shift:
        return WarmStart(xs=traj.xs.copy(), us=traj.us.copy(),
                         sigmas=traj.sigmas.copy(),
                         sigma_terminal=traj.sigma_terminal.copy(),
                         multipliers=(solution.lam.copy(), solution.m.copy()))
    g = discount
    xs = np.vstack([traj.xs[1:], traj.xs[-1]])
    us = np.vstack([traj.us[1:], traj.us[-1]])
    if traj.sigmas.size:
        sig = g * np.vstack([traj.sigmas[1:], traj.sigmas[-1:]])
    else:
        sig = traj.sigmas

    N, nx = traj.us.shape[0], traj.xs.shape[1]
    multipliers = None
    if solution.lam is not None and not solution.zeta.any():
        # value-problem row layout is uniform across stages, safe to shift
        lam = solution.lam.copy()
        dyn = lam[nx : nx + N * nx].reshape(N, nx) / g
        lam[:nx] = dyn[0]
        lam[nx : nx + N * nx] = np.vstack([dyn[1:], dyn[-1]]).ravel()

        def stage_block(k):
            return np.concatenate([
                solution.nu_stage[k], solution.mu_stage[k], solution.sigma_mult[k]
            ]) / g

        blocks = [stage_block(min(k + 1, N - 1)) for k in range(N)]
        blocks.append(np.concatenate([solution.mu_terminal,
                                      solution.sigma_mult_terminal]))
        m = np.concatenate(blocks) if blocks else np.zeros(0)
        if m.shape == solution.m.shape:
            multipliers = (lam, np.clip(m, 1e-12, 1e12))
    return WarmStart(xs=xs, us=us, sigmas=sig,
                     sigma_terminal=traj.sigma_terminal.copy(),
                     multipliers=multipliers)


def kkt_residual_vector(ocp, theta, s, solution, a=None, barrier=None):
    """Stacked smoothed KKT residual at a given primal-dual point.

    Order: stationarity block, equality block, smoothed complementarity
    block.  Evaluated at the solution's exit barrier unless overridden.
    """
    problem = HorizonProblem(ocp, theta, s, a=a)
    barrier = solution.barrier if barrier is None else barrier
    xi, _, _ = problem.kkt_residual(solution.z, solution.lam, solution.m, barrier)
    return xi
