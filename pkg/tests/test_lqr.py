"""Tests for the discounted LQR machinery."""

import numpy as np
import pytest

from empcrl import lqr
from empcrl.errors import ContractError, ConvergenceError

from oracles import rollout_discounted_cost


def scalar_problem(gamma=1.0, sigma=0.0):
    return lqr.LqrProblem(
        A=[[1.0]], B=[[1.0]], T=[[1.0]], N=[[0.0]], R=[[2.0]],
        Sigma=[[sigma]], gamma=gamma,
    )


def random_problem(seed, n=3, m=2, gamma=0.9):
    rng = np.random.default_rng(seed)
    A = rng.normal(scale=0.6, size=(n, n))
    B = rng.normal(size=(n, m))
    M = rng.normal(size=(n + m, n + m))
    W = M @ M.T + 0.1 * np.eye(n + m)
    Sigma_half = rng.normal(size=(n, n))
    return lqr.LqrProblem(
        A=A, B=B,
        T=W[:n, :n], N=W[:n, n:], R=W[n:, n:],
        Sigma=0.01 * Sigma_half @ Sigma_half.T,
        gamma=gamma,
    )


class TestSolveDiscountedDare:
    def test_scalar_golden_values(self):
        sol = lqr.solve_discounted_dare(scalar_problem())
        assert abs(sol.S[0, 0] - 2.0) <= 1e-12
        assert abs(sol.K[0, 0] - 0.5) <= 1e-12
        assert sol.V0 == 0.0

    def test_no_control_authority_reduces_to_lyapunov(self):
        A = np.array([[0.5, 0.1], [0.0, 0.4]])
        prob = lqr.LqrProblem(
            A=A, B=np.zeros((2, 1)), T=np.eye(2), N=np.zeros((2, 1)),
            R=[[1.0]], Sigma=np.zeros((2, 2)), gamma=1.0,
        )
        sol = lqr.solve_discounted_dare(prob)
        assert np.allclose(sol.K, 0.0, atol=1e-12)
        assert np.allclose(np.eye(2) + A.T @ sol.S @ A, sol.S, atol=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_residuals(self, seed):
        prob = random_problem(seed)
        sol = lqr.solve_discounted_dare(prob)
        r1, r2 = lqr.problem_residuals(prob, sol.S, sol.K)
        assert max(r1, r2) <= 1e-10 * max(1.0, np.linalg.norm(sol.S, np.inf))

    def test_value_matches_monte_carlo_rollout(self):
        prob = random_problem(11, n=3, m=2, gamma=0.9)
        sol = lqr.solve_discounted_dare(prob)
        rng = np.random.default_rng(123)
        s0 = np.array([1.0, -0.5, 0.3])
        samples = [
            rollout_discounted_cost(
                prob.A, prob.B, sol.K, prob.T, prob.N, prob.R,
                prob.Sigma, prob.gamma, s0, steps=400, rng=rng,
            )
            for _ in range(400)
        ]
        predicted = float(s0 @ sol.S @ s0) + sol.V0
        assert np.mean(samples) == pytest.approx(predicted, rel=0.01)

    def test_discounted_equals_scaled_undiscounted(self):
        prob = random_problem(4, gamma=0.85)
        sol = lqr.solve_discounted_dare(prob)
        sg = np.sqrt(prob.gamma)
        scaled = lqr.LqrProblem(
            A=sg * prob.A, B=sg * prob.B, T=prob.T, N=prob.N, R=prob.R,
            Sigma=prob.Sigma, gamma=1.0,
        )
        sol_scaled = lqr.solve_discounted_dare(scaled)
        assert np.allclose(sol.S, sol_scaled.S, atol=1e-10)

    def test_unstabilizable_raises(self):
        prob = lqr.LqrProblem(
            A=[[2.0]], B=[[0.0]], T=[[1.0]], N=[[0.0]], R=[[1.0]],
            Sigma=[[0.0]], gamma=1.0,
        )
        with pytest.raises(ConvergenceError):
            lqr.solve_discounted_dare(prob)

    def test_noise_offset(self):
        assert lqr.noise_offset(np.eye(2), np.zeros((2, 2)), 1.0) == 0.0
        assert np.isinf(lqr.noise_offset(np.eye(2), 0.1 * np.eye(2), 1.0))
        v0 = lqr.noise_offset(2.0 * np.eye(2), 0.5 * np.eye(2), 0.9)
        assert v0 == pytest.approx(0.9 / 0.1 * 2.0, rel=1e-12)


class TestModifiedCostMatrices:
    def test_scalar_golden_values(self):
        prob = scalar_problem()
        sol = lqr.solve_discounted_dare(prob)
        T_hat, N_hat, R_hat = lqr.modified_cost_matrices(prob, [[2.0]], [[1.0]], sol.S)
        assert T_hat[0, 0] == pytest.approx(-5.0, abs=1e-12)
        assert N_hat[0, 0] == pytest.approx(-2.0, abs=1e-12)
        assert R_hat[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_exact_model_is_identity(self):
        prob = random_problem(2)
        sol = lqr.solve_discounted_dare(prob)
        T_hat, N_hat, R_hat = lqr.modified_cost_matrices(prob, prob.A, prob.B, sol.S)
        assert np.allclose(T_hat, prob.T, atol=1e-12)
        assert np.allclose(N_hat, prob.N, atol=1e-12)
        assert np.allclose(R_hat, prob.R, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_true_solution_satisfies_model_dare(self, seed):
        """(S, K*) of the true problem solves the modified-cost model DARE."""
        prob = random_problem(seed, n=2, m=1)
        sol = lqr.solve_discounted_dare(prob)
        rng = np.random.default_rng(seed + 100)
        Ah = prob.A + 0.2 * rng.normal(size=prob.A.shape)
        Bh = prob.B + 0.2 * rng.normal(size=prob.B.shape)
        T_hat, N_hat, R_hat = lqr.modified_cost_matrices(prob, Ah, Bh, sol.S)
        r1, r2 = lqr.dare_residuals(
            Ah, Bh, T_hat, N_hat, R_hat, prob.gamma, sol.S, sol.K
        )
        assert max(r1, r2) <= 1e-10 * max(1.0, np.linalg.norm(sol.S, np.inf))


class TestDareSolutionBranches:
    def test_scalar_golden_branches(self):
        prob = scalar_problem()
        sol = lqr.solve_discounted_dare(prob)
        T_hat, N_hat, R_hat = lqr.modified_cost_matrices(prob, [[2.0]], [[1.0]], sol.S)
        branches = lqr.dare_solution_branches([[2.0]], [[1.0]], T_hat, N_hat, R_hat, gamma=1.0)
        assert len(branches) == 2
        non_stab, stab = branches
        assert abs(non_stab.S[0, 0] - 2.0) <= 1e-10
        assert abs(non_stab.K[0, 0] - 0.5) <= 1e-10
        assert non_stab.spectral_radius == pytest.approx(1.5, abs=1e-10)
        assert not non_stab.stabilizing
        assert abs(stab.S[0, 0] - 7.0) <= 1e-10
        assert abs(stab.K[0, 0] - 4.0 / 3.0) <= 1e-10
        assert stab.spectral_radius == pytest.approx(2.0 / 3.0, abs=1e-10)
        assert stab.stabilizing

    def test_exact_model_contains_true_solution(self):
        prob = random_problem(8, n=2, m=1)
        sol = lqr.solve_discounted_dare(prob)
        branches = lqr.dare_solution_branches(
            prob.A, prob.B, prob.T, prob.N, prob.R, gamma=prob.gamma
        )
        stab = [b for b in branches if b.stabilizing]
        assert len(stab) == 1
        assert np.allclose(stab[0].S, sol.S, atol=1e-8)

    @pytest.mark.parametrize("seed", range(6))
    def test_every_branch_satisfies_dare(self, seed):
        rng = np.random.default_rng(seed)
        A = [[float(rng.uniform(-2, 2))]]
        B = [[1.0]]
        T = [[float(rng.uniform(-5, 5))]]
        R = [[float(rng.uniform(0.5, 3))]]
        for b in lqr.dare_solution_branches(A, B, T, [[0.0]], R, gamma=1.0):
            r1, r2 = lqr.dare_residuals(A, B, T, [[0.0]], R, 1.0, b.S, b.K)
            assert max(r1, r2) <= 1e-10 * max(1.0, np.linalg.norm(b.S, np.inf))


class TestRotationMatrices:
    def test_zero_modifiers_vanish(self):
        dW, dW0, dW1 = lqr.rotation_matrices(
            np.zeros((1, 1)), np.zeros((1, 1)), [[1.5]], [[1.0]], [[0.5]], gamma=0.9
        )
        assert not dW.any() and not dW0.any() and not dW1.any()

    def test_zero_input_weight_reduces_to_state_rotation(self):
        """With no input modifier the rotation is the pure storage term."""
        Ah, Bh, K = np.array([[1.2]]), np.array([[0.7]]), np.array([[0.4]])
        dS = np.array([[1.3]])
        g = 0.9
        dW, dW0, dW1 = lqr.rotation_matrices(np.zeros((1, 1)), dS, Ah, Bh, K, gamma=g)
        assert not dW0.any()
        rng = np.random.default_rng(5)
        for _ in range(20):
            s, a = rng.normal(), rng.normal()
            z = np.array([s, a])
            s_next = Ah[0, 0] * s + Bh[0, 0] * a
            expected = s * dS[0, 0] * s - g * s_next * dS[0, 0] * s_next
            assert z @ dW @ z == pytest.approx(expected, abs=1e-12)

    def test_input_term_is_feedback_deviation_penalty(self):
        rng = np.random.default_rng(9)
        K = rng.normal(size=(1, 2))
        dR = np.array([[0.8]])
        _, dW0, _ = lqr.rotation_matrices(
            dR, np.zeros((2, 2)), np.eye(2), np.ones((2, 1)), K, gamma=1.0
        )
        for _ in range(20):
            s = rng.normal(size=2)
            a = rng.normal(size=1)
            z = np.concatenate([s, a])
            dev = a + K @ s
            assert z @ dW0 @ z == pytest.approx(float(dev @ dR @ dev), abs=1e-12)

    def test_indefinite_delta_r_rejected(self):
        with pytest.raises(ContractError):
            lqr.rotation_matrices([[-1.0]], [[0.0]], [[1.0]], [[1.0]], [[0.5]])


class TestPositivityChecks:
    def test_indefinite_cost_without_rotation(self):
        W = np.diag([1.0, -1.0])
        report = lqr.positivity_checks(W, np.zeros((2, 2)), np.zeros((2, 2)))
        assert not report.rotated_positive
        assert not report.strictly_dissipative

    def test_grid_search_certifies_economic_case(self):
        """An indefinite economic cost becomes positive definite after rotation."""
        prob = lqr.LqrProblem(
            A=[[0.9]], B=[[0.5]], T=[[1.0]], N=[[0.0]], R=[[1.0]],
            Sigma=[[0.0]], gamma=0.95,
        )
        sol = lqr.solve_discounted_dare(prob)
        W = lqr.q_star_matrix(prob, sol.S)
        W_econ = W - np.diag([3.0, 0.0])  # indefinite state weighting
        dS, dR, report = lqr.search_rotation(
            W_econ, prob.A, prob.B, sol.K, gamma=prob.gamma
        )
        assert report.rotated_positive
        assert report.min_eig_rotated >= 1e-6

    def test_rotated_cost_satisfies_dissipation_inequality(self):
        """A positive rotated stage form implies the storage-function inequality.

        With storage lambda(s) = s' dS s, the rotated stage cost satisfies
        L_bar(s,a) = L_hat(s,a) + lambda(s) - gamma lambda(s_next) by
        construction; when the rotated form is bounded below by rho |s|^2
        along the optimal feedback, the original cost dissipates:
        lambda(s_next) - lambda(s) <= L_hat(s,a) - rho |s|^2 at gamma = 1.
        """
        prob = lqr.LqrProblem(
            A=[[0.9]], B=[[0.5]], T=[[1.0]], N=[[0.0]], R=[[1.0]],
            Sigma=[[0.0]], gamma=0.95,
        )
        sol = lqr.solve_discounted_dare(prob)
        W = lqr.q_star_matrix(prob, sol.S)
        W_econ = W - np.diag([3.0, 0.0])
        dS, dR, report = lqr.search_rotation(
            W_econ, prob.A, prob.B, sol.K, gamma=prob.gamma
        )
        assert report.rotated_positive
        rho = report.min_eig_rotated
        dW, _, _ = lqr.rotation_matrices(dR, dS, prob.A, prob.B, sol.K, prob.gamma)
        rng = np.random.default_rng(3)
        g = prob.gamma
        for _ in range(30):
            s = rng.normal(size=1)
            a = rng.normal(size=1)
            z = np.concatenate([s, a])
            s_next = prob.A @ s + prob.B @ a
            dev = a + sol.K @ s
            lam_sa = float(dev @ dR @ dev) + float(s @ dS @ s)
            lam_next = float(s_next @ dS @ s_next)
            l_hat = float(z @ W_econ @ z)
            l_bar = float(z @ (W_econ + dW) @ z)
            assert l_bar == pytest.approx(l_hat + lam_sa - g * lam_next, abs=1e-9)
            # dissipation bound along the optimal feedback
            a_fb = -sol.K @ s
            z_fb = np.concatenate([s, a_fb])
            s_fb = prob.A @ s + prob.B @ a_fb
            lam_s = float(s @ dS @ s)
            lam_fb = float(s_fb @ dS @ s_fb)
            l_hat_fb = float(z_fb @ W_econ @ z_fb)
            assert g * lam_fb - lam_s <= l_hat_fb - rho * float(s @ s) + 1e-9

    def test_rotation_preserves_minimizer(self):
        """argmin_a of the rotated action-value form stays at -K s."""
        rng = np.random.default_rng(17)
        checked = 0
        for seed in range(10):
            prob = random_problem(seed, n=2, m=1, gamma=0.9)
            sol = lqr.solve_discounted_dare(prob)
            W = lqr.q_star_matrix(prob, sol.S)
            dR = np.abs(rng.normal()) * np.eye(1)
            dS = rng.normal() * np.eye(2)
            rotated = lqr.rotated_action_value_form(W, dR, dS, sol.K)
            if np.min(np.linalg.eigvalsh(rotated)) <= 1e-9:
                continue
            Wsa, Waa = rotated[:2, 2:], rotated[2:, 2:]
            s = rng.normal(size=2)
            a_min = -np.linalg.solve(Waa, Wsa.T @ s)
            assert np.allclose(a_min, -sol.K @ s, atol=1e-8)
            checked += 1
        assert checked >= 5
