"""Tests for the tabular MDP ground-truth engine."""

import numpy as np
import pytest

from empcrl import mdp
from empcrl.errors import ContractError, ConvergenceError

from oracles import policy_iteration

# Frozen from the exact policy-iteration oracle (tests/oracles.py) on the
# seed-0 random instance below.
SEED0_V = np.array(
    [4.255727556264609, 4.116519295457427, 4.09950839572328,
     3.6900116109630487, 4.385791239400836]
)
SEED0_PI = np.array([2, 2, 1, 2, 0])


def two_state_with_trap():
    """State 0 can reach an absorbing trap (state 2) with infinite cost."""
    kernel = np.zeros((3, 2, 3))
    kernel[0, 0, 1] = 1.0
    kernel[0, 1, 2] = 1.0
    kernel[1, 0, 1] = 1.0
    kernel[1, 1, 0] = 1.0
    kernel[2, :, 2] = 1.0
    cost = np.array([[1.0, 0.5], [0.2, 0.4], [np.inf, np.inf]])
    return mdp.FiniteMDP(kernel=kernel, stage_cost=cost, discount=0.9)


class TestFiniteMDP:
    def test_rejects_non_stochastic_kernel(self):
        kernel = np.zeros((2, 1, 2))
        kernel[0, 0, 0] = 0.9
        kernel[1, 0, 1] = 1.0
        with pytest.raises(ContractError):
            mdp.FiniteMDP(kernel=kernel, stage_cost=np.zeros((2, 1)), discount=0.9)

    def test_rejects_nan_cost(self):
        kernel = np.ones((1, 1, 1))
        with pytest.raises(ContractError):
            mdp.FiniteMDP(kernel=kernel, stage_cost=[[np.nan]], discount=0.9)

    def test_roundtrip_serialization(self, tmp_path):
        m = two_state_with_trap()
        path = tmp_path / "mdp.txt"
        mdp.save_mdp(m, path)
        m2 = mdp.load_mdp(path)
        assert np.array_equal(m.kernel, m2.kernel)
        assert np.array_equal(m.stage_cost, m2.stage_cost)
        assert m.discount == m2.discount


class TestValueIteration:
    def test_single_state_geometric_series(self):
        m = mdp.FiniteMDP(kernel=np.ones((1, 1, 1)), stage_cost=[[1.0]], discount=0.9)
        t = mdp.value_iteration(m)
        assert t.V[0] == pytest.approx(10.0, abs=1e-10)

    def test_zero_cost_gives_zero_values(self):
        m = mdp.random_mdp(5)
        m = mdp.FiniteMDP(kernel=m.kernel, stage_cost=np.zeros_like(m.stage_cost),
                          discount=0.9)
        t = mdp.value_iteration(m)
        assert np.all(t.V == 0.0)
        assert np.all(t.Q == 0.0)

    def test_matches_policy_iteration_oracle(self):
        m = mdp.random_mdp(0, n_states=5, n_actions=3, discount=0.9)
        t = mdp.value_iteration(m)
        assert np.max(np.abs(t.V - SEED0_V)) <= 1e-10
        assert np.array_equal(t.pi, SEED0_PI)

    @pytest.mark.parametrize("seed", range(10))
    def test_bellman_consistency(self, seed):
        m = mdp.random_mdp(seed, n_states=6, n_actions=4)
        t = mdp.value_iteration(m)
        assert np.allclose(t.V, t.Q.min(axis=1))
        assert np.allclose(t.Q[np.arange(m.n_states), t.pi], t.V)

    def test_infinite_trap_detected(self):
        t = mdp.value_iteration(two_state_with_trap())
        assert np.isinf(t.V[2])
        assert np.isfinite(t.V[0]) and np.isfinite(t.V[1])
        # action 1 from state 0 walks into the trap
        assert np.isinf(t.Q[0, 1])
        assert t.pi[0] == 0

    def test_contraction_per_sweep(self):
        m = mdp.random_mdp(2, n_states=8, n_actions=3, discount=0.8)
        V = np.zeros(m.n_states)
        residuals = []
        for _ in range(40):
            V_new, _ = mdp.bellman_backup(m, V)
            residuals.append(np.max(np.abs(V_new - V)))
            V = V_new
        for prev, nxt in zip(residuals[:-1], residuals[1:]):
            assert nxt <= m.discount * prev + 1e-13

    def test_gamma_one_divergence_raises(self):
        # strictly positive cost, no absorbing zero-cost state, gamma = 1
        m = mdp.FiniteMDP(kernel=np.ones((1, 1, 1)), stage_cost=[[1.0]], discount=1.0)
        with pytest.raises(ConvergenceError) as err:
            mdp.value_iteration(m, max_sweeps=500)
        assert err.value.residual is not None


class TestModifiedStageCost:
    def test_exact_model_recovers_original(self):
        m = mdp.random_mdp(1)
        t = mdp.value_iteration(m)
        L_hat = mdp.modified_stage_cost(m, m.kernel, t)
        assert np.allclose(L_hat, m.stage_cost, atol=1e-9)

    def test_exact_model_recovers_original_on_finite_set(self):
        m = two_state_with_trap()
        t = mdp.value_iteration(m)
        L_hat = mdp.modified_stage_cost(m, m.kernel, t)
        finite = np.isfinite(m.stage_cost) & np.isfinite(L_hat)
        assert np.allclose(L_hat[finite], m.stage_cost[finite], atol=1e-9)

    def test_mass_on_infinite_state_gives_infinite_cost(self):
        m = two_state_with_trap()
        t = mdp.value_iteration(m)
        model = m.kernel.copy()
        model[1, 0] = [0.0, 0.5, 0.5]  # model thinks (1, 0) can hit the trap
        L_hat = mdp.modified_stage_cost(m, model, t)
        assert np.isinf(L_hat[1, 0])

    def test_shape_mismatch_rejected(self):
        m = mdp.random_mdp(1)
        t = mdp.value_iteration(m)
        with pytest.raises(ContractError):
            mdp.modified_stage_cost(m, m.kernel[:, :1, :], t)


class TestTheorem1:
    def test_exact_model_identities_trivial(self):
        m = mdp.random_mdp(3)
        for horizon in (1, 2, 5):
            report = mdp.verify_theorem1(m, m.kernel, horizon)
            assert report.passed

    def test_perturbed_model_identities(self):
        m = mdp.random_mdp(0)
        model = mdp.perturb_kernel(m.kernel, seed=1)
        report = mdp.verify_theorem1(m, model, horizon=3, tol=1e-9)
        assert report.passed
        assert not report.excluded_states

    def test_model_reaching_trap_shrinks_membership(self):
        kernel = np.zeros((3, 1, 3))
        kernel[0, 0, 1] = 1.0
        kernel[1, 0, 1] = 1.0
        kernel[2, 0, 2] = 1.0
        cost = np.array([[1.0], [0.5], [np.inf]])
        true_m = mdp.FiniteMDP(kernel=kernel, stage_cost=cost, discount=0.9)
        model = kernel.copy()
        model[0, 0] = [0.0, 0.5, 0.5]  # model steers state 0 into the trap
        report = mdp.verify_theorem1(true_m, model, horizon=3)
        assert report.passed
        assert 0 in report.excluded_states
        assert 2 in report.excluded_states
        assert bool(report.member_states[1])

    @pytest.mark.parametrize("seed", range(25))
    def test_random_instance_property(self, seed):
        m = mdp.random_mdp(seed, n_states=6, n_actions=3,
                           discount=0.9 if seed % 2 else 0.95)
        model = mdp.perturb_kernel(m.kernel, seed=seed + 1000)
        report = mdp.verify_theorem1(m, model, horizon=2 + seed % 4, tol=1e-9)
        assert report.passed


class TestCorollary1:
    def test_exact_model_gap_shrinks_geometrically(self):
        m = mdp.random_mdp(4, discount=0.9)
        report = mdp.verify_corollary1(m, m.kernel, horizon_max=30)
        assert report.passed
        gaps = report.details["gaps"]
        assert gaps[-1] <= 0.9**30 * np.max(np.abs(mdp.value_iteration(m).V)) + 1e-9

    def test_perturbed_model_gap_bound(self):
        m = mdp.random_mdp(0, discount=0.9)
        model = mdp.perturb_kernel(m.kernel, seed=7)
        report = mdp.verify_corollary1(m, model, horizon_max=30, tol=1e-9)
        assert report.passed

    def test_cost_divergent_cycle_flags_assumption(self):
        # true system: 0 -> 1 (cost 2), 1 absorbing free; model cycles at 0
        kernel = np.zeros((2, 2, 2))
        kernel[0, 0, 1] = 1.0
        kernel[0, 1, 0] = 1.0
        kernel[1, :, 1] = 1.0
        cost = np.array([[2.0, 5.0], [0.0, 0.0]])
        true_m = mdp.FiniteMDP(kernel=kernel, stage_cost=cost, discount=1.0)
        model = kernel.copy()
        model[0, 0] = [1.0, 0.0]
        report = mdp.verify_corollary1(true_m, model, horizon_max=20)
        assert not report.passed
        assert report.details["assumption_violated"]
        assert report.details["assumption_violated_states"] == [0]


def make_rotation(seed, m, triple, kind="state"):
    """Random admissible rotation term for a solved MDP."""
    rng = np.random.default_rng(seed)
    lam = rng.normal(size=m.n_states)
    Lam = np.tile(lam[:, None], (1, m.n_actions))
    if kind == "margin":
        bonus = rng.uniform(0.1, 1.0, size=(m.n_states, m.n_actions))
        bonus[np.arange(m.n_states), triple.pi] = 0.0
        Lam = Lam + bonus
    return Lam


class TestRotation:
    def setup_method(self):
        self.m = mdp.random_mdp(0)
        self.model = mdp.perturb_kernel(self.m.kernel, seed=1)
        self.triple = mdp.value_iteration(self.m)
        self.L_hat = mdp.modified_stage_cost(self.m, self.model, self.triple)

    def test_zero_rotation_is_identity(self):
        Lam = np.zeros_like(self.L_hat)
        L_bar, V_bar = mdp.rotate_cost(
            self.L_hat, Lam, self.model, self.triple.pi, self.triple.V, self.m.discount
        )
        assert np.allclose(L_bar, self.L_hat)
        assert np.allclose(V_bar, self.triple.V)

    def test_state_only_rotation_accepted(self):
        Lam = make_rotation(3, self.m, self.triple, kind="state")
        L_bar, V_bar = mdp.rotate_cost(
            self.L_hat, Lam, self.model, self.triple.pi, self.triple.V, self.m.discount
        )
        assert np.all(np.isfinite(L_bar))

    def test_inadmissible_rotation_rejected(self):
        Lam = make_rotation(3, self.m, self.triple, kind="margin")
        Lam[0, self.triple.pi[0]] += 10.0  # optimal action no longer the minimum
        with pytest.raises(ContractError) as err:
            mdp.rotate_cost(
                self.L_hat, Lam, self.model, self.triple.pi, self.triple.V,
                self.m.discount,
            )
        assert "s=0" in str(err.value)

    @pytest.mark.parametrize("kind", ["state", "margin"])
    @pytest.mark.parametrize("seed", range(10))
    def test_theorem2_identities(self, seed, kind):
        Lam = make_rotation(seed, self.m, self.triple, kind=kind)
        L_bar, V_bar = mdp.rotate_cost(
            self.L_hat, Lam, self.model, self.triple.pi, self.triple.V, self.m.discount
        )
        original = mdp.DpProblem(self.model, self.L_hat, self.triple.V, self.m.discount)
        rotated = mdp.DpProblem(self.model, L_bar, V_bar, self.m.discount)
        report = mdp.verify_theorem2(original, rotated, Lam, horizon=3, tol=1e-9)
        assert report.passed

    def test_margin_rotation_strict_gap(self):
        Lam = make_rotation(5, self.m, self.triple, kind="margin")
        L_bar, V_bar = mdp.rotate_cost(
            self.L_hat, Lam, self.model, self.triple.pi, self.triple.V, self.m.discount
        )
        _, Q_bar, pi_bar = mdp.finite_horizon_dp(
            self.model, L_bar, V_bar, self.m.discount, 3
        )
        for s in range(self.m.n_states):
            for a in range(self.m.n_actions):
                if a != pi_bar[s]:
                    assert Q_bar[s, a] > Q_bar[s, pi_bar[s]] + 0.05

    def test_lemma1_match_target_value(self):
        """A state rotation can move the value function onto any target."""
        other_cost = mdp.random_mdp(9).stage_cost
        V_check, _, _ = mdp.finite_horizon_dp(
            self.model, other_cost, np.zeros(self.m.n_states), self.m.discount, 3
        )
        V_hat, _, _ = mdp.finite_horizon_dp(
            self.model, self.L_hat, self.triple.V, self.m.discount, 3
        )
        lam = V_hat - V_check
        Lam = np.tile(lam[:, None], (1, self.m.n_actions))
        # rotating the check problem by lam lands exactly on the target value
        L_check_bar, V_check_bar = mdp.rotate_cost(
            other_cost, Lam, self.model,
            np.argmin(
                mdp.finite_horizon_dp(self.model, other_cost,
                                      np.zeros(self.m.n_states),
                                      self.m.discount, 3)[1], axis=1),
            np.zeros(self.m.n_states), self.m.discount,
        )
        V_rot, _, _ = mdp.finite_horizon_dp(
            self.model, L_check_bar, V_check_bar, self.m.discount, 3
        )
        assert np.allclose(V_rot, V_check + lam, atol=1e-9)
