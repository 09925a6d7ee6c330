"""Temporal-difference and policy-gradient tuning of the controller.

Q-learning drives the parameter vector with the one-step Bellman residual
of the controller's own value functions; the deterministic actor-critic
variant instead follows the policy gradient through a quadratic critic.
Updates are pure functions of their inputs: determinism comes from passing
explicit RNGs and replaying logged draws.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import sensitivity
from .errors import ContractError
from .ocp import relaxed_stage_cost
from .solver import warm_start_from


@dataclass(frozen=True)
class Transition:
    """One closed-loop sample: state, applied input, realized cost, successor."""

    s: np.ndarray
    a: np.ndarray
    cost: float
    s_next: np.ndarray
    step: int = 0
    explored: bool = False

    def __post_init__(self):
        for name in ("s", "a", "s_next"):
            value = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(value)):
                raise ContractError(f"transition field {name} must be finite")
            object.__setattr__(self, name, value)
        if not np.isfinite(self.cost):
            raise ContractError("transition cost must be finite")


@dataclass(frozen=True)
class LearnerConfig:
    """Step sizes, exploration, and safeguard settings."""

    alpha: float = 1e-6
    alpha_w: float = 1e-3
    alpha_theta: float = 1e-6
    epsilon: float = 0.0
    noise_scale: float = 1.0
    batch_period: int = 2000
    grad_clip: float = 1e3
    eps_pd: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.alpha <= 0 or self.alpha_w <= 0 or self.alpha_theta <= 0:
            raise ContractError("step sizes must be positive")
        if not 0.0 <= self.epsilon < 1.0:
            raise ContractError("epsilon must lie in [0, 1)")
        if self.batch_period < 1:
            raise ContractError("batch_period must be >= 1")


@dataclass(frozen=True)
class TdPieces:
    """TD error with the primal-dual solutions it was computed from."""

    tau: float
    q_solution: object
    v_next_solution: object


def td_pieces(ocp, theta, transition, ip, q_solution=None, v_next_solution=None):
    """Bellman residual tau = L(s,a) + gamma V(s') - Q(s,a) and its solves."""
    if q_solution is None:
        _, q_solution = ip.solve_q(ocp, theta, transition.s, transition.a)
    if v_next_solution is None:
        _, v_next_solution = ip.solve_v(ocp, theta, transition.s_next)
    cost = relaxed_stage_cost(ocp, theta, transition.s, transition.a)
    tau = cost + ocp.discount * v_next_solution.objective - q_solution.objective
    return TdPieces(tau=float(tau), q_solution=q_solution,
                    v_next_solution=v_next_solution)


def td_error(ocp, theta, transition, ip, **kw):
    """Temporal-difference error of the controller's own value functions."""
    return td_pieces(ocp, theta, transition, ip, **kw).tau


def project_parameters(theta, eps_pd=1e-6):
    """Clamp the constrained symmetric slices to minimum eigenvalue eps_pd.

    Slices listed in the layout's pd_slices are projected by eigenvalue
    clamping; everything else is untouched.  Already-feasible slices are
    returned bitwise unchanged.
    """
    updates = {}
    for name in theta.layout.pd_slices:
        H = theta.get(name)
        vals, vecs = np.linalg.eigh(H)
        if vals.min() >= eps_pd:
            continue
        clamped = vecs @ np.diag(np.maximum(vals, eps_pd)) @ vecs.T
        updates[name] = 0.5 * (clamped + clamped.T)
    return theta.replace(**updates) if updates else theta


@dataclass(frozen=True)
class UpdateInfo:
    """Diagnostics of one parameter update."""

    tau: float
    grad_norm: float
    clipped: bool
    projected: bool
    pieces: TdPieces = field(repr=False, default=None)


def _apply_update(theta, direction, clip_norm, eps_pd):
    norm = float(np.linalg.norm(direction))
    clipped = False
    if clip_norm is not None and norm > clip_norm:
        direction = direction * (clip_norm / norm)
        clipped = True
    theta_new = theta.with_values(theta.values + direction)
    theta_proj = project_parameters(theta_new, eps_pd=eps_pd)
    projected = theta_proj is not theta_new
    return theta_proj, clipped, projected


def q_step_on_policy(ocp, theta, transition, alpha, ip, config=None,
                     q_solution=None, v_next_solution=None):
    """One on-policy Q-learning update: theta += alpha tau grad_q.

    Returns (theta', UpdateInfo).  The gradient is evaluated at the same
    solution the TD error used, so a logged (tau, gradient) pair replays
    the update exactly.
    """
    config = config or LearnerConfig(alpha=alpha)
    pieces = td_pieces(ocp, theta, transition, ip,
                       q_solution=q_solution, v_next_solution=v_next_solution)
    grad = sensitivity.grad_q(ocp, theta, transition.s, transition.a,
                              pieces.q_solution)
    direction = alpha * pieces.tau * grad
    theta_new, clipped, projected = _apply_update(
        theta, direction, config.grad_clip, config.eps_pd
    )
    info = UpdateInfo(tau=pieces.tau, grad_norm=float(np.linalg.norm(grad)),
                      clipped=clipped, projected=projected, pieces=pieces)
    return theta_new, info


def q_step_off_policy(ocp, theta_behavior, theta_learn, transition, alpha, ip,
                      config=None, q_solution=None, v_next_solution=None):
    """One batch (off-policy) Q-learning update on the shadow parameters.

    The action was produced by the behavior parameters; the TD error and
    gradient are evaluated under the learned parameters, which are the only
    ones modified.  Swapping learned into behavior happens at batch
    boundaries, outside this function.
    """
    config = config or LearnerConfig(alpha=alpha)
    pieces = td_pieces(ocp, theta_learn, transition, ip,
                       q_solution=q_solution, v_next_solution=v_next_solution)
    grad = sensitivity.grad_q(ocp, theta_learn, transition.s, transition.a,
                              pieces.q_solution)
    direction = alpha * pieces.tau * grad
    theta_new, clipped, projected = _apply_update(
        theta_learn, direction, config.grad_clip, config.eps_pd
    )
    info = UpdateInfo(tau=pieces.tau, grad_norm=float(np.linalg.norm(grad)),
                      clipped=clipped, projected=projected, pieces=pieces)
    return theta_new, info


def apply_exploration(a_star, uniform_draw, noise_draw, epsilon, lower, upper,
                      noise_scale=1.0):
    """Deterministic core of the epsilon-greedy rule.

    Greedy when the uniform draw exceeds epsilon; otherwise the optimal
    input is perturbed by the (scaled) noise draw and saturated to the
    bounds.  Returns (a, explored).
    """
    a_star = np.atleast_1d(np.asarray(a_star, dtype=float))
    if uniform_draw >= epsilon:
        return a_star.copy(), False
    noisy = a_star + noise_scale * np.atleast_1d(np.asarray(noise_draw, float))
    return np.clip(noisy, lower, upper), True


def epsilon_greedy(a_star, lower, upper, epsilon, rng, noise_scale=1.0):
    """Epsilon-greedy input with saturation; draws come from rng."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))):
        raise ContractError("exploration requires finite input bounds")
    u = float(rng.uniform())
    e = rng.standard_normal(np.atleast_1d(np.asarray(a_star)).shape[0])
    a, explored = apply_exploration(a_star, u, e, epsilon, lower, upper,
                                    noise_scale)
    return a, explored


def quadratic_feature_indices(dim):
    """(i, j) pairs, i <= j, ordering the quadratic monomials z_i z_j."""
    return [(i, j) for i in range(dim) for j in range(i, dim)]


class QuadraticCritic:
    """Action-value critic: constant + linear + full quadratic in (s, a)."""

    def __init__(self, n_states, n_inputs, weights=None):
        self.n_states = n_states
        self.n_inputs = n_inputs
        self.dim = n_states + n_inputs
        self.pairs = quadratic_feature_indices(self.dim)
        self.n_weights = 1 + self.dim + len(self.pairs)
        if weights is None:
            weights = np.zeros(self.n_weights)
        self.weights = np.asarray(weights, dtype=float).copy()
        if self.weights.shape != (self.n_weights,):
            raise ContractError("critic weight vector has the wrong length")

    @classmethod
    def from_q_matrix(cls, W, offset=0.0, n_inputs=1):
        """Exact critic for a quadratic action-value z'Wz + offset."""
        W = np.asarray(W, dtype=float)
        dim = W.shape[0]
        critic = cls(dim - n_inputs, n_inputs)
        w = np.zeros(critic.n_weights)
        w[0] = offset
        for k, (i, j) in enumerate(critic.pairs):
            w[1 + dim + k] = W[i, i] if i == j else 2.0 * W[i, j]
        critic.weights = w
        return critic

    def features(self, s, a):
        z = np.concatenate([np.atleast_1d(np.asarray(s, float)),
                            np.atleast_1d(np.asarray(a, float))])
        quad = np.array([z[i] * z[j] for i, j in self.pairs])
        return np.concatenate([[1.0], z, quad])

    def value(self, s, a):
        return float(self.weights @ self.features(s, a))

    def grad_weights(self, s, a):
        return self.features(s, a)

    def grad_action(self, s, a):
        z = np.concatenate([np.atleast_1d(np.asarray(s, float)),
                            np.atleast_1d(np.asarray(a, float))])
        dim = self.dim
        out = np.zeros(self.n_inputs)
        lin = self.weights[1 : 1 + dim]
        out += lin[self.n_states :]
        for k, (i, j) in enumerate(self.pairs):
            w = self.weights[1 + dim + k]
            if i >= self.n_states:
                out[i - self.n_states] += w * z[j]
            if j >= self.n_states and j != i:
                out[j - self.n_states] += w * z[i]
            elif j >= self.n_states and j == i:
                out[i - self.n_states] += w * z[i]
        return out

    def updated(self, delta):
        return QuadraticCritic(self.n_states, self.n_inputs,
                               weights=self.weights + delta)


def dpg_actor_critic_step(ocp, theta, critic, transition, alpha_w, alpha_theta,
                          ip, config=None, v_solution=None, v_next_solution=None):
    """One deterministic-policy-gradient actor-critic update.

    The critic learns from the true plant cost carried by the transition;
    the actor descends the policy gradient assembled from the policy
    Jacobian and the critic's action gradient.  Returns
    (theta', critic', UpdateInfo).
    """
    config = config or LearnerConfig(alpha_w=alpha_w, alpha_theta=alpha_theta)
    if v_solution is None:
        _, v_solution = ip.solve_v(ocp, theta, transition.s)
    if v_next_solution is None:
        _, v_next_solution = ip.solve_v(ocp, theta, transition.s_next)
    a_now = v_solution.trajectory.us[0]
    a_next = v_next_solution.trajectory.us[0]

    tau = (transition.cost
           + ocp.discount * critic.value(transition.s_next, a_next)
           - critic.value(transition.s, transition.a))
    critic_new = critic.updated(
        alpha_w * tau * critic.grad_weights(transition.s, transition.a)
    )

    jac = sensitivity.policy_jacobian(ocp, theta, transition.s, v_solution)
    grad_a = critic.grad_action(transition.s, a_now)
    # descending the closed-loop cost: J is a cost, so step against its gradient
    direction = -alpha_theta * (jac.T @ grad_a)
    theta_new, clipped, projected = _apply_update(
        theta, direction, config.grad_clip, config.eps_pd
    )
    info = UpdateInfo(tau=float(tau),
                      grad_norm=float(np.linalg.norm(jac.T @ grad_a)),
                      clipped=clipped, projected=projected)
    return theta_new, critic_new, info
