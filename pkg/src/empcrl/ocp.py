"""Parametrized optimal-control problem model.

A ParametricOCP bundles the horizon, discount, cost atoms, dynamics, and
constraints of the finite-horizon problem solved by the controller, all as
functions of a flat parameter vector theta with a named-slice layout.

Atoms expose analytic derivatives with respect to their arguments and the
theta entries they bind, which the solver and the sensitivity machinery
assemble into KKT systems and parameter gradients.
"""

from dataclasses import dataclass, field

import numpy as np

from . import lqr, plants
from .errors import ContractError


# ---------------------------------------------------------------------------
# theta layout and vector


@dataclass(frozen=True)
class SliceSpec:
    """One named slice of the parameter vector."""

    name: str
    kind: str  # scalar | vector | matrix | sym
    shape: tuple
    offset: int
    length: int


def _slice_length(kind, shape):
    if kind == "scalar":
        return 1
    if kind == "vector":
        return shape[0]
    if kind == "matrix":
        return shape[0] * shape[1]
    if kind == "sym":
        n = shape[0]
        return n * (n + 1) // 2
    raise ContractError(f"unknown slice kind {kind!r}")


class ThetaLayout:
    """Ordered, disjoint named slices that exactly tile a flat vector.

    Symmetric matrices store only the lower triangle (np.tril_indices
    order), so reconstruction is exactly symmetric.  pd_slices marks the
    symmetric slices that learning must keep positive definite.
    """

    def __init__(self, specs, pd_slices=()):
        self.slices = {}
        self.order = []
        offset = 0
        for name, kind, shape in specs:
            shape = tuple(shape) if not np.isscalar(shape) else (shape,)
            length = _slice_length(kind, shape)
            self.slices[name] = SliceSpec(name, kind, shape, offset, length)
            self.order.append(name)
            offset += length
        self.size = offset
        self.pd_slices = tuple(pd_slices)
        for name in self.pd_slices:
            if self.slices[name].kind != "sym":
                raise ContractError(f"pd slice {name!r} must be symmetric")

    def spec(self, name):
        if name not in self.slices:
            raise ContractError(f"layout has no slice named {name!r}")
        return self.slices[name]

    def range(self, name):
        s = self.spec(name)
        return np.arange(s.offset, s.offset + s.length)

    def unflatten(self, name, flat):
        s = self.spec(name)
        flat = np.asarray(flat, dtype=float)
        if s.kind == "scalar":
            return float(flat[0])
        if s.kind == "vector":
            return flat.copy()
        if s.kind == "matrix":
            return flat.reshape(s.shape)
        rows, cols = np.tril_indices(s.shape[0])
        M = np.zeros(s.shape)
        M[rows, cols] = flat
        M[cols, rows] = flat
        return M

    def flatten(self, name, value):
        s = self.spec(name)
        if s.kind == "scalar":
            return np.array([float(value)])
        value = np.asarray(value, dtype=float)
        if s.kind == "vector":
            return value.ravel().copy()
        if s.kind == "matrix":
            return value.ravel().copy()
        if not np.allclose(value, value.T, atol=1e-12):
            raise ContractError(f"slice {name!r} expects a symmetric matrix")
        rows, cols = np.tril_indices(s.shape[0])
        return value[rows, cols].copy()


@dataclass(frozen=True)
class ThetaVector:
    """Immutable flat parameter vector with a named-slice layout."""

    layout: ThetaLayout
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        if values.shape != (self.layout.size,):
            raise ContractError(
                f"theta length {values.shape} != layout size {self.layout.size}"
            )
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def get(self, name):
        s = self.layout.spec(name)
        return self.layout.unflatten(name, self.values[s.offset : s.offset + s.length])

    def get_flat(self, name):
        s = self.layout.spec(name)
        return self.values[s.offset : s.offset + s.length]

    def replace(self, **updates):
        values = self.values.copy()
        for name, value in updates.items():
            s = self.layout.spec(name)
            values[s.offset : s.offset + s.length] = self.layout.flatten(name, value)
        return ThetaVector(layout=self.layout, values=values)

    def with_values(self, values):
        return ThetaVector(layout=self.layout, values=values)


def theta_from_dict(layout, entries):
    """Build a ThetaVector from named values; unnamed slices default to 0."""
    values = np.zeros(layout.size)
    theta = ThetaVector(layout=layout, values=values)
    return theta.replace(**entries)


def save_theta(theta, path):
    """Plain-text checkpoint: a header block of `name offset length` lines,
    a blank line, then one value per line at full double precision."""
    with open(path, "w") as fh:
        for name in theta.layout.order:
            s = theta.layout.spec(name)
            fh.write(f"{name} {s.offset} {s.length}\n")
        fh.write("\n")
        for v in theta.values:
            fh.write(f"{float(v)!r}\n")


def load_theta(layout, path):
    """Read a checkpoint written by save_theta, validating the header."""
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh]
    split = lines.index("")
    header, body = lines[:split], lines[split + 1 :]
    if len(header) != len(layout.order):
        raise ContractError("checkpoint header does not match layout")
    for line, name in zip(header, layout.order):
        toks = line.split()
        s = layout.spec(name)
        if toks[0] != name or int(toks[1]) != s.offset or int(toks[2]) != s.length:
            raise ContractError(f"checkpoint slice mismatch at {name!r}: {line!r}")
    values = np.array([float(tok) for tok in body if tok], dtype=float)
    return ThetaVector(layout=layout, values=values)


# ---------------------------------------------------------------------------
# parametric atoms


def _resolve(ref, theta, layout_kind=None):
    """A reference is either a fixed value or the name of a theta slice."""
    if isinstance(ref, str):
        return theta.get(ref)
    return ref


class QuadraticAtom:
    """q(z) = 0.5 z'Hz + h'z + c with each piece fixed or bound to theta.

    H binds to a `sym` slice, h to a `vector` slice, c to a `scalar` slice.
    """

    def __init__(self, dim, H=None, h=None, c=None):
        self.dim = dim
        self.H_ref = H
        self.h_ref = h
        self.c_ref = c

    def H(self, theta):
        H = _resolve(self.H_ref, theta)
        return np.zeros((self.dim, self.dim)) if H is None else np.asarray(H, float)

    def h(self, theta):
        h = _resolve(self.h_ref, theta)
        return np.zeros(self.dim) if h is None else np.asarray(h, float)

    def c(self, theta):
        c = _resolve(self.c_ref, theta)
        return 0.0 if c is None else float(c)

    def value(self, z, theta):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.H(theta) @ z + self.h(theta) @ z + self.c(theta))

    def grad(self, z, theta):
        return self.H(theta) @ np.asarray(z, dtype=float) + self.h(theta)

    def hess(self, theta):
        return self.H(theta)

    def add_dtheta(self, z, theta, out, scale=1.0):
        """Accumulate scale * dq/dtheta into out (n_theta,)."""
        z = np.asarray(z, dtype=float)
        layout = theta.layout
        if isinstance(self.H_ref, str):
            s = layout.spec(self.H_ref)
            rows, cols = np.tril_indices(s.shape[0])
            vals = z[rows] * z[cols]
            vals[rows == cols] *= 0.5
            out[s.offset : s.offset + s.length] += scale * vals
        if isinstance(self.h_ref, str):
            s = layout.spec(self.h_ref)
            out[s.offset : s.offset + s.length] += scale * z
        if isinstance(self.c_ref, str):
            s = layout.spec(self.c_ref)
            out[s.offset] += scale

    def add_dtheta_grad(self, z, theta, out, scale=1.0):
        """Accumulate scale * d(grad q)/dtheta into out (dim, n_theta)."""
        z = np.asarray(z, dtype=float)
        layout = theta.layout
        if isinstance(self.H_ref, str):
            s = layout.spec(self.H_ref)
            rows, cols = np.tril_indices(s.shape[0])
            for k, (i, j) in enumerate(zip(rows, cols)):
                out[i, s.offset + k] += scale * z[j]
                if i != j:
                    out[j, s.offset + k] += scale * z[i]
        if isinstance(self.h_ref, str):
            s = layout.spec(self.h_ref)
            out[np.arange(self.dim), s.offset + np.arange(self.dim)] += scale


class RiccatiTerminalAtom:
    """Terminal cost 0.5 x'Sx with S derived from the current model slices.

    S solves the discounted Riccati equation for the bound (A, B) slices and
    the fixed quadratic stage weights, so it tracks the learned model
    instead of being a free parameter.  Derivatives with respect to the
    model slices solve one discrete Lyapunov equation per entry.
    """

    def __init__(self, dim, A_slice, B_slice, Q_weight, R_weight, gamma):
        self.dim = dim
        self.A_slice = A_slice
        self.B_slice = B_slice
        self.Q_weight = np.asarray(Q_weight, dtype=float)
        self.R_weight = np.atleast_2d(np.asarray(R_weight, dtype=float))
        self.gamma = gamma
        self._cache_key = None
        self._cache = None

    def _solve(self, theta):
        A = theta.get(self.A_slice)
        B = theta.get(self.B_slice)
        key = (A.tobytes(), B.tobytes())
        if key == self._cache_key:
            return self._cache
        prob = lqr.LqrProblem(
            A=A, B=B, T=self.Q_weight, N=np.zeros((A.shape[0], B.shape[1])),
            R=self.R_weight, Sigma=np.zeros_like(self.Q_weight), gamma=self.gamma,
        )
        sol = lqr.solve_discounted_dare(prob)
        A_cl = A - B @ sol.K
        sens = self._sensitivities(theta, A, B, sol.S, sol.K, A_cl)
        self._cache_key = key
        self._cache = (sol.S, sol.K, sens)
        return self._cache

    def _sensitivities(self, theta, A, B, S, K, A_cl):
        """dS/dtheta entry matrices for each bound (A, B) parameter."""
        import scipy.linalg

        g = self.gamma
        layout = theta.layout
        out = {}
        a_lyap = np.sqrt(g) * A_cl.T
        for slice_name, is_A in ((self.A_slice, True), (self.B_slice, False)):
            s = layout.spec(slice_name)
            mats = []
            n_rows, n_cols = s.shape
            for k in range(s.length):
                i, j = divmod(k, n_cols)
                delta = np.zeros((n_rows, n_cols))
                delta[i, j] = 1.0
                D = delta if is_A else -delta @ K
                rhs = g * (D.T @ S @ A_cl + A_cl.T @ S @ D)
                dS = scipy.linalg.solve_discrete_lyapunov(a_lyap, rhs)
                mats.append(0.5 * (dS + dS.T))
            out[slice_name] = mats
        return out

    def S(self, theta):
        return self._solve(theta)[0]

    def value(self, z, theta):
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.S(theta) @ z)

    def grad(self, z, theta):
        return self.S(theta) @ np.asarray(z, dtype=float)

    def hess(self, theta):
        return self.S(theta)

    def add_dtheta(self, z, theta, out, scale=1.0):
        z = np.asarray(z, dtype=float)
        _, _, sens = self._solve(theta)
        for slice_name, mats in sens.items():
            s = theta.layout.spec(slice_name)
            for k, dS in enumerate(mats):
                out[s.offset + k] += scale * 0.5 * z @ dS @ z

    def add_dtheta_grad(self, z, theta, out, scale=1.0):
        z = np.asarray(z, dtype=float)
        _, _, sens = self._solve(theta)
        for slice_name, mats in sens.items():
            s = theta.layout.spec(slice_name)
            for k, dS in enumerate(mats):
                out[:, s.offset + k] += scale * (dS @ z)


class AffineDynamics:
    """x_next = A x + B u + b with each piece fixed or bound to theta."""

    def __init__(self, nx, nu, A="A", B="B", b="b"):
        self.nx = nx
        self.nu = nu
        self.A_ref = A
        self.B_ref = B
        self.b_ref = b

    def matrices(self, theta):
        A = _resolve(self.A_ref, theta)
        B = _resolve(self.B_ref, theta)
        b = _resolve(self.b_ref, theta)
        b = np.zeros(self.nx) if b is None else np.asarray(b, float)
        return np.asarray(A, float), np.asarray(B, float), b

    def value(self, x, u, theta):
        A, B, b = self.matrices(theta)
        return A @ np.asarray(x, float) + B @ np.atleast_1d(np.asarray(u, float)) + b

    def linearize_batch(self, xs, us, theta):
        """Values and Jacobians at a batch of stage points.

        xs: (N, nx), us: (N, nu).  Returns (vals (N, nx), jacs (N, nx, nx+nu)).
        """
        A, B, b = self.matrices(theta)
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        vals = xs @ A.T + us @ B.T + b
        jac = np.hstack([A, B])
        jacs = np.broadcast_to(jac, (xs.shape[0],) + jac.shape)
        return vals, jacs

    def add_dtheta_rows(self, x, u, theta, out, scale=1.0):
        """Accumulate scale * df/dtheta into out (nx, n_theta)."""
        x = np.asarray(x, float)
        u = np.atleast_1d(np.asarray(u, float))
        layout = theta.layout
        if isinstance(self.A_ref, str):
            s = layout.spec(self.A_ref)
            n_rows, n_cols = s.shape
            for k in range(s.length):
                i, j = divmod(k, n_cols)
                out[i, s.offset + k] += scale * x[j]
        if isinstance(self.B_ref, str):
            s = layout.spec(self.B_ref)
            n_rows, n_cols = s.shape
            for k in range(s.length):
                i, j = divmod(k, n_cols)
                out[i, s.offset + k] += scale * u[j]
        if isinstance(self.b_ref, str):
            s = layout.spec(self.b_ref)
            out[np.arange(self.nx), s.offset + np.arange(self.nx)] += scale

    def add_dtheta_jacT_mult(self, x, u, chi, theta, out, scale=1.0):
        """Accumulate scale * d([A B]' chi)/dtheta into out (nx+nu, n_theta)."""
        x = np.asarray(x, float)
        u = np.atleast_1d(np.asarray(u, float))
        chi = np.asarray(chi, float)
        layout = theta.layout
        if isinstance(self.A_ref, str):
            s = layout.spec(self.A_ref)
            n_rows, n_cols = s.shape
            for k in range(s.length):
                i, j = divmod(k, n_cols)
                out[j, s.offset + k] += scale * chi[i]
        if isinstance(self.B_ref, str):
            s = layout.spec(self.B_ref)
            n_rows, n_cols = s.shape
            for k in range(s.length):
                i, j = divmod(k, n_cols)
                out[self.nx + j, s.offset + k] += scale * chi[i]

    def hessian_contract_batch(self, xs, us, chis, theta):
        """Stagewise sum_i chi_i * hess(f_i): zero for affine dynamics."""
        n_pts = np.asarray(xs).shape[0]
        nz = self.nx + self.nu
        return np.zeros((n_pts, nz, nz))


class EvaporationDynamics:
    """Discretized evaporator model plus a learned constant bias.

    x_next = rk4(x, u) + c_f.  Jacobians come from complex-step
    differentiation of the integrator, batched over stages and directions.
    """

    nx = 2
    nu = 2

    def __init__(self, c_f="c_f", params=plants.EvaporationParams(),
                 h_int=1.0, substeps=10):
        self.c_f_ref = c_f
        self.params = params
        self.h_int = h_int
        self.substeps = substeps

    def _bias(self, theta):
        c = _resolve(self.c_f_ref, theta)
        return np.zeros(self.nx) if c is None else np.asarray(c, float)

    def value(self, x, u, theta):
        step = plants.evaporation_discrete_step(
            np.asarray(x, float), np.asarray(u, float), None, self.params,
            self.h_int, self.substeps,
        )
        return step + self._bias(theta)

    def linearize_batch(self, xs, us, theta):
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        n_pts = xs.shape[0]
        nz = self.nx + self.nu
        vals = plants.evaporation_discrete_step(
            xs.T, us.T, None, self.params, self.h_int, self.substeps
        ).T + self._bias(theta)

        # one batched complex-step pass: n_pts * nz perturbed columns
        step = 1e-100
        Z = np.concatenate([xs, us], axis=1)  # (n_pts, nz)
        Zc = np.repeat(Z[:, None, :], nz, axis=1).astype(complex)
        for d in range(nz):
            Zc[:, d, d] += 1j * step
        flat = Zc.reshape(n_pts * nz, nz).T  # (nz, n_pts*nz)
        out = plants.evaporation_discrete_step(
            flat[: self.nx], flat[self.nx :], None, self.params,
            self.h_int, self.substeps,
        )
        jacs = (out.imag / step).T.reshape(n_pts, nz, self.nx).transpose(0, 2, 1)
        return vals, jacs

    def add_dtheta_rows(self, x, u, theta, out, scale=1.0):
        if isinstance(self.c_f_ref, str):
            s = theta.layout.spec(self.c_f_ref)
            out[np.arange(self.nx), s.offset + np.arange(self.nx)] += scale

    def add_dtheta_jacT_mult(self, x, u, chi, theta, out, scale=1.0):
        pass  # Jacobian does not depend on theta (additive bias only)

    def hessian_contract_batch(self, xs, us, chis, theta):
        """Stagewise sum_i chi_i * hess(f_i) by central differences of the
        complex-step Jacobian.  Needed for exact policy sensitivities; the
        solver itself runs Gauss-Newton and never calls this."""
        xs = np.asarray(xs, float)
        us = np.asarray(us, float)
        chis = np.asarray(chis, float)
        n_pts = xs.shape[0]
        nz = self.nx + self.nu
        Z = np.concatenate([xs, us], axis=1)
        out = np.zeros((n_pts, nz, nz))
        scale_z = np.maximum(1.0, np.abs(Z))
        for d in range(nz):
            step = 1e-4 * scale_z[:, d]
            Zp = Z.copy()
            Zp[:, d] += step
            Zm = Z.copy()
            Zm[:, d] -= step
            _, Jp = self.linearize_batch(Zp[:, : self.nx], Zp[:, self.nx :], theta)
            _, Jm = self.linearize_batch(Zm[:, : self.nx], Zm[:, self.nx :], theta)
            dJ = (Jp - Jm) / (2.0 * step)[:, None, None]
            # dJ[p, i, e] = d^2 f_i / dz_e dz_d; contract with chi
            out[:, :, d] = np.einsum("pie,pi->pe", dJ, chis)
        return 0.5 * (out + out.transpose(0, 2, 1))


class AffineConstraint:
    """Rows h(x, u) = Cx x + Cu u + d0 + sum_s M_s theta_s  (<= slack)."""

    def __init__(self, Cx, Cu=None, d0=None, terms=()):
        self.Cx = np.atleast_2d(np.asarray(Cx, dtype=float))
        self.n_rows, self.nx = self.Cx.shape
        self.Cu = None if Cu is None else np.atleast_2d(np.asarray(Cu, dtype=float))
        self.d0 = np.zeros(self.n_rows) if d0 is None else np.asarray(d0, float)
        self.terms = [(name, np.atleast_2d(np.asarray(M, float))) for name, M in terms]

    def offset(self, theta):
        d = self.d0.copy()
        for name, M in self.terms:
            d += M @ theta.get_flat(name)
        return d

    def value(self, x, u, theta):
        val = self.Cx @ np.asarray(x, float) + self.offset(theta)
        if self.Cu is not None:
            val += self.Cu @ np.atleast_1d(np.asarray(u, float))
        return val

    def add_dtheta_rows(self, theta, out, scale=1.0):
        """Accumulate scale * dh/dtheta into out (n_rows, n_theta)."""
        layout = theta.layout
        for name, M in self.terms:
            s = layout.spec(name)
            out[:, s.offset : s.offset + s.length] += scale * M


# ---------------------------------------------------------------------------
# the OCP container


@dataclass(frozen=True)
class Trajectory:
    """State, input, and slack sequences of one horizon solve."""

    xs: np.ndarray          # (N+1, nx)
    us: np.ndarray          # (N, nu)
    sigmas: np.ndarray      # (N, n_slack), empty second axis when unconstrained
    sigma_terminal: np.ndarray  # (n_slack_terminal,)


@dataclass
class ParametricOCP:
    """Finite-horizon parametric optimal-control problem.

    Mixed constraints are relaxed as h(x, u) <= E sigma with sigma >= 0 and
    an l1 penalty w' sigma per stage (w_f at the terminal stage); E maps
    shared slack entries onto constraint rows.
    """

    horizon: int
    discount: float
    nx: int
    nu: int
    initial_cost: QuadraticAtom
    stage_cost: QuadraticAtom
    terminal_cost: object
    dynamics: object
    u_lower: np.ndarray
    u_upper: np.ndarray
    mixed_constraint: AffineConstraint | None = None
    terminal_constraint: AffineConstraint | None = None
    slack_map: np.ndarray | None = None        # (nh, n_slack)
    slack_map_terminal: np.ndarray | None = None
    slack_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))
    slack_weight_terminal: np.ndarray = field(default_factory=lambda: np.zeros(0))
    stage_cost_undiscounted: QuadraticAtom | None = None
    theta_layout: ThetaLayout | None = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if not 0.0 < self.discount <= 1.0:
            raise ContractError("discount must lie in (0, 1]")
        self.u_lower = np.asarray(self.u_lower, dtype=float)
        self.u_upper = np.asarray(self.u_upper, dtype=float)
        if np.any(self.u_lower > self.u_upper):
            raise ContractError("input bounds are inconsistent (lower > upper)")
        self.slack_weight = np.asarray(self.slack_weight, dtype=float)
        self.slack_weight_terminal = np.asarray(self.slack_weight_terminal, dtype=float)
        if self.n_slack and np.any(self.slack_weight <= 0):
            raise ContractError("slack weights must be positive")
        if self.n_slack_terminal and np.any(self.slack_weight_terminal <= 0):
            raise ContractError("terminal slack weights must be positive")
        if self.mixed_constraint is not None and self.slack_map is not None:
            if self.slack_map.shape != (self.mixed_constraint.n_rows, self.n_slack):
                raise ContractError("slack_map shape mismatch")

    @property
    def n_slack(self):
        return 0 if self.slack_map is None else self.slack_map.shape[1]

    @property
    def n_slack_terminal(self):
        return 0 if self.slack_map_terminal is None else self.slack_map_terminal.shape[1]

    @property
    def n_mixed(self):
        return 0 if self.mixed_constraint is None else self.mixed_constraint.n_rows

    @property
    def n_terminal(self):
        return 0 if self.terminal_constraint is None else self.terminal_constraint.n_rows


def slack_group_penalty(h_values, slack_map, weight):
    """Minimal l1 slack charge for constraint values h <= E sigma, sigma >= 0."""
    if slack_map is None or slack_map.shape[1] == 0:
        return 0.0
    charge = 0.0
    for j in range(slack_map.shape[1]):
        rows = slack_map[:, j] > 0
        charge += weight[j] * max(0.0, float(np.max(h_values[rows])))
    return charge


def relaxed_stage_cost(ocp, theta, s, a):
    """Stage cost with bound violations charged at the l1 slack weights."""
    z = np.concatenate([np.asarray(s, float).ravel(),
                        np.atleast_1d(np.asarray(a, float))])
    cost = ocp.stage_cost.value(z, theta)
    if ocp.stage_cost_undiscounted is not None:
        cost += ocp.stage_cost_undiscounted.value(z, theta)
    if ocp.mixed_constraint is not None:
        h = ocp.mixed_constraint.value(s, a, theta)
        cost += slack_group_penalty(h, ocp.slack_map, ocp.slack_weight)
    return float(cost)


def total_cost(ocp, theta, traj):
    """Objective value of a trajectory: initial + discounted stages + terminal."""
    g = ocp.discount
    N = ocp.horizon
    total = ocp.initial_cost.value(traj.xs[0], theta)
    for k in range(N):
        z = np.concatenate([traj.xs[k], traj.us[k]])
        stage = ocp.stage_cost.value(z, theta)
        if traj.sigmas.size:
            stage += float(ocp.slack_weight @ traj.sigmas[k])
        total += g**k * stage
        if ocp.stage_cost_undiscounted is not None:
            total += ocp.stage_cost_undiscounted.value(z, theta)
    terminal = ocp.terminal_cost.value(traj.xs[N], theta)
    if traj.sigma_terminal.size:
        terminal += float(ocp.slack_weight_terminal @ traj.sigma_terminal)
    total += g**N * terminal
    return float(total)


# ---------------------------------------------------------------------------
# experiment builders


LINEAR_MPC_HORIZON = 10
LINEAR_MPC_DISCOUNT = 0.9
LINEAR_MPC_WEIGHT = np.array([100.0, 100.0])
LINEAR_X_LOWER_BASE = np.array([0.0, -1.0])
LINEAR_X_UPPER_BASE = np.array([1.0, 1.0])


def linear_mpc_layout():
    """theta slices of the linear tracking controller."""
    return ThetaLayout([
        ("V0", "scalar", (1,)),
        ("x_lb", "vector", (2,)),
        ("x_ub", "vector", (2,)),
        ("b", "vector", (2,)),
        ("f", "vector", (3,)),
        ("A", "matrix", (2, 2)),
        ("B", "matrix", (2, 1)),
    ])


def linear_mpc_initial_theta():
    """Paper-style initialization: nominal double-integrator model, rest zero."""
    layout = linear_mpc_layout()
    return theta_from_dict(layout, {
        "A": np.array([[1.0, 0.25], [0.0, 1.0]]),
        "B": np.array([[0.0312], [0.25]]),
    })


def build_linear_mpc(theta, discount_linear_term=True):
    """Horizon-10 linear tracking MPC with learnable model, bias, and bounds.

    Stage cost gamma^k (f'[x;u] + 0.5|x|^2 + 0.25|u|^2 + w'sigma), soft state
    bounds sharing one slack entry per state between the lower and upper
    side, hard input bounds, and a terminal cost 0.5 gamma^N x'S x with S
    recomputed from the current model slices via the Riccati equation.
    discount_linear_term moves the f term outside the discounting when False.
    """
    nx, nu = 2, 1
    stage_quad = np.zeros((3, 3))
    stage_quad[:2, :2] = np.eye(2)
    stage_quad[2, 2] = 0.5
    if discount_linear_term:
        stage = QuadraticAtom(3, H=stage_quad, h="f")
        stage_undiscounted = None
    else:
        stage = QuadraticAtom(3, H=stage_quad)
        stage_undiscounted = QuadraticAtom(3, h="f")
    # rows: lower violations then upper violations, one shared slack per state
    Cx = np.vstack([-np.eye(2), np.eye(2)])
    d0 = np.concatenate([LINEAR_X_LOWER_BASE, -LINEAR_X_UPPER_BASE])
    terms = [
        ("x_lb", np.vstack([np.eye(2), np.zeros((2, 2))])),
        ("x_ub", np.vstack([np.zeros((2, 2)), -np.eye(2)])),
    ]
    mixed = AffineConstraint(Cx=Cx, d0=d0, terms=terms)
    terminal_con = AffineConstraint(Cx=Cx, d0=d0, terms=terms)
    E = np.vstack([np.eye(2), np.eye(2)])
    return ParametricOCP(
        horizon=LINEAR_MPC_HORIZON,
        discount=LINEAR_MPC_DISCOUNT,
        nx=nx,
        nu=nu,
        initial_cost=QuadraticAtom(2, c="V0"),
        stage_cost=stage,
        stage_cost_undiscounted=stage_undiscounted,
        terminal_cost=RiccatiTerminalAtom(
            2, "A", "B", Q_weight=np.eye(2), R_weight=[[0.5]],
            gamma=LINEAR_MPC_DISCOUNT,
        ),
        dynamics=AffineDynamics(nx, nu, A="A", B="B", b="b"),
        u_lower=np.array([-1.0]),
        u_upper=np.array([1.0]),
        mixed_constraint=mixed,
        terminal_constraint=terminal_con,
        slack_map=E,
        slack_map_terminal=E,
        slack_weight=LINEAR_MPC_WEIGHT,
        slack_weight_terminal=LINEAR_MPC_WEIGHT,
        theta_layout=theta.layout,
    )


EVAPORATION_HORIZON = 10
EVAPORATION_DISCOUNT = 0.99


def evaporation_layout():
    """theta slices of the evaporation controller: fully parametrized
    quadratic initial/stage/terminal costs, model bias, and state bounds."""
    return ThetaLayout(
        [
            ("H_lam", "sym", (2, 2)),
            ("h_lam", "vector", (2,)),
            ("c_lam", "scalar", (1,)),
            ("H_Vf", "sym", (2, 2)),
            ("h_Vf", "vector", (2,)),
            ("c_Vf", "scalar", (1,)),
            ("H_l", "sym", (4, 4)),
            ("h_l", "vector", (4,)),
            ("c_l", "scalar", (1,)),
            ("c_f", "vector", (2,)),
            ("x_lb", "vector", (2,)),
            ("x_ub", "vector", (2,)),
        ],
        pd_slices=("H_l", "H_Vf"),
    )


def build_evaporation_ocp(theta, horizon=EVAPORATION_HORIZON,
                          discount=EVAPORATION_DISCOUNT, h_int=1.0, substeps=10,
                          params=plants.EvaporationParams()):
    """Economic NMPC for the evaporator with learnable quadratic costs.

    State bounds are soft (one slack per constraint row at unit weight),
    control bounds are fixed, and the prediction model is the nominal
    integrator plus the learned constant bias.
    """
    H_l = theta.get("H_l")
    H_Vf = theta.get("H_Vf")
    for name, H in (("H_l", H_l), ("H_Vf", H_Vf)):
        if np.min(np.linalg.eigvalsh(H)) <= 0:
            raise ContractError(f"{name} must be positive definite")
    # rows: lower violations then upper violations, one slack per row
    Cx = np.vstack([-np.eye(2), np.eye(2)])
    terms = [
        ("x_lb", np.vstack([np.eye(2), np.zeros((2, 2))])),
        ("x_ub", np.vstack([np.zeros((2, 2)), -np.eye(2)])),
    ]
    mixed = AffineConstraint(Cx=Cx, d0=np.zeros(4), terms=terms)
    terminal_con = AffineConstraint(Cx=Cx, d0=np.zeros(4), terms=terms)
    E = np.eye(4)
    w = np.ones(4) * plants.EVAP_PENALTY_WEIGHT
    return ParametricOCP(
        horizon=horizon,
        discount=discount,
        nx=2,
        nu=2,
        initial_cost=QuadraticAtom(2, H="H_lam", h="h_lam", c="c_lam"),
        stage_cost=QuadraticAtom(4, H="H_l", h="h_l", c="c_l"),
        terminal_cost=QuadraticAtom(2, H="H_Vf", h="h_Vf", c="c_Vf"),
        dynamics=EvaporationDynamics(c_f="c_f", params=params, h_int=h_int,
                                     substeps=substeps),
        u_lower=plants.EVAP_U_LOWER.copy(),
        u_upper=plants.EVAP_U_UPPER.copy(),
        mixed_constraint=mixed,
        terminal_constraint=terminal_con,
        slack_map=E,
        slack_map_terminal=E,
        slack_weight=w,
        slack_weight_terminal=w,
        theta_layout=theta.layout,
    )


def evaporation_nominal_bounds_theta(layout=None):
    """theta with nominal state bounds, identity stage weight, zero elsewhere."""
    layout = layout or evaporation_layout()
    return theta_from_dict(layout, {
        "H_l": np.eye(4),
        "H_Vf": np.eye(2),
        "x_lb": plants.EVAP_X_LOWER.copy(),
        "x_ub": plants.EVAP_X_UPPER.copy(),
    })
