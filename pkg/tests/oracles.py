"""Independent brute-force oracles used only by the test suite.

These deliberately take different computational routes than the library:
policy iteration with exact linear-solve evaluation instead of value
iteration, and Monte-Carlo rollouts instead of Riccati algebra.
"""

import numpy as np


def policy_iteration(kernel, stage_cost, discount, max_iters=1000):
    """Exact policy iteration for an all-finite tabular MDP.

    Policy evaluation solves (I - gamma P_pi) V = L_pi directly.
    Returns (V, Q, pi).
    """
    n_states, n_actions, _ = kernel.shape
    pi = np.zeros(n_states, dtype=int)
    for _ in range(max_iters):
        P_pi = kernel[np.arange(n_states), pi, :]
        L_pi = stage_cost[np.arange(n_states), pi]
        V = np.linalg.solve(np.eye(n_states) - discount * P_pi, L_pi)
        Q = stage_cost + discount * np.einsum("sat,t->sa", kernel, V)
        pi_new = np.argmin(Q, axis=1)
        if np.array_equal(pi_new, pi):
            return V, Q, pi
        pi = pi_new
    raise RuntimeError("policy iteration did not settle")


def rollout_discounted_cost(A, B, K, T, N, R, Sigma, gamma, s0, steps, rng):
    """Monte-Carlo discounted quadratic cost of the feedback a = -K s."""
    n = A.shape[0]
    chol = np.linalg.cholesky(Sigma + 1e-15 * np.eye(n))
    s = np.asarray(s0, dtype=float).copy()
    total = 0.0
    for k in range(steps):
        a = -K @ s
        total += gamma**k * float(s @ T @ s + 2.0 * s @ N @ a + a @ R @ a)
        s = A @ s + B @ a + chol @ rng.standard_normal(n)
    return total


def finite_difference_gradient(fun, x0, step=1e-5):
    """Central finite-difference gradient of a scalar function."""
    x0 = np.asarray(x0, dtype=float)
    grad = np.zeros_like(x0)
    for i in range(x0.size):
        dx = np.zeros_like(x0)
        dx[i] = step
        grad[i] = (fun(x0 + dx) - fun(x0 - dx)) / (2.0 * step)
    return grad


def finite_difference_jacobian(fun, x0, step=1e-5):
    """Central finite-difference Jacobian of a vector function."""
    x0 = np.asarray(x0, dtype=float)
    f0 = np.asarray(fun(x0))
    jac = np.zeros((f0.size, x0.size))
    for i in range(x0.size):
        dx = np.zeros_like(x0)
        dx[i] = step
        jac[:, i] = (np.asarray(fun(x0 + dx)) - np.asarray(fun(x0 - dx))) / (2.0 * step)
    return jac
