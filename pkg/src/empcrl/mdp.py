"""Tabular ground-truth engine for finite MDPs.

Computes exact optimal value functions by value iteration, builds the
modified stage cost that lets a wrong transition model reproduce the true
optimal policy, and numerically certifies the model-equivalence and
cost-rotation identities by brute-force dynamic programming.

Costs may be +inf (hard exclusion of a state-action pair).  Infinity
propagates through minima and expectations: an expectation that puts any
positive probability on an infinite value is infinite.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ConvergenceError

KERNEL_TOL = 1e-12


def _check_kernel(kernel, n_states, n_actions, name="kernel"):
    kernel = np.asarray(kernel, dtype=float)
    if kernel.shape != (n_states, n_actions, n_states):
        raise ContractError(
            f"{name} shape {kernel.shape} != {(n_states, n_actions, n_states)}"
        )
    if np.any(kernel < 0):
        raise ContractError(f"{name} has negative entries")
    row_sums = kernel.sum(axis=2)
    if np.max(np.abs(row_sums - 1.0)) > KERNEL_TOL:
        raise ContractError(f"{name} rows must sum to 1 within {KERNEL_TOL}")
    return kernel


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP: transition kernel, stage-cost table, discount factor.

    kernel[s, a, s'] is the probability of landing in s' from (s, a).
    stage_cost[s, a] may be +inf, never NaN.
    """

    kernel: np.ndarray
    stage_cost: np.ndarray
    discount: float

    def __post_init__(self):
        cost = np.asarray(self.stage_cost, dtype=float)
        if cost.ndim != 2:
            raise ContractError("stage_cost must be a 2-D table")
        n_states, n_actions = cost.shape
        if np.any(np.isnan(cost)) or np.any(np.isneginf(cost)):
            raise ContractError("stage_cost entries must be finite or +inf")
        kernel = _check_kernel(self.kernel, n_states, n_actions)
        if not 0.0 < self.discount <= 1.0:
            raise ContractError("discount must lie in (0, 1]")
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "stage_cost", cost)

    @property
    def n_states(self):
        return self.stage_cost.shape[0]

    @property
    def n_actions(self):
        return self.stage_cost.shape[1]


@dataclass(frozen=True)
class ValueTriple:
    """Optimal value function, action-value table, and greedy policy."""

    V: np.ndarray
    Q: np.ndarray
    pi: np.ndarray


def expected_value(kernel, values):
    """E[values(s')] per (s, a) row with infinity propagation.

    Any row putting positive probability on an infinite value yields +inf.
    """
    values = np.asarray(values, dtype=float)
    finite = np.isfinite(values)
    out = kernel[:, :, finite] @ values[finite]
    hits_inf = kernel[:, :, ~finite].sum(axis=2) > 0
    out[hits_inf] = np.inf
    return out


def _doomed_states(mdp):
    """States from which every policy incurs an infinite cost eventually."""
    doomed = np.zeros(mdp.n_states, dtype=bool)
    while True:
        mass_on_doomed = mdp.kernel[:, :, doomed].sum(axis=2) > 0
        action_bad = np.isinf(mdp.stage_cost) | mass_on_doomed
        new_doomed = action_bad.all(axis=1)
        if np.array_equal(new_doomed, doomed):
            return doomed
        doomed = new_doomed


def bellman_backup(mdp, V):
    """One Bellman sweep: Q(s,a) = L(s,a) + gamma E[V(s')], V'(s) = min_a Q."""
    Q = mdp.stage_cost + mdp.discount * expected_value(mdp.kernel, V)
    return Q.min(axis=1), Q


def value_iteration(mdp, tol=1e-12, max_sweeps=100_000):
    """Optimal values by value iteration, exact +inf on divergent states.

    States whose cost-to-go diverges (every policy hits an infinite cost
    with positive probability) are detected by a reachability fixed point
    and reported as +inf; value iteration then runs on the complement.
    Raises ConvergenceError with the last residual if the sweep cap is hit,
    which happens for ill-posed discount-1 instances.
    """
    doomed = _doomed_states(mdp)
    V = np.where(doomed, np.inf, 0.0)
    residual = np.inf
    for _ in range(max_sweeps):
        V_new, _ = bellman_backup(mdp, V)
        finite = np.isfinite(V_new) & np.isfinite(V)
        residual = np.max(np.abs(V_new[finite] - V[finite])) if np.any(finite) else 0.0
        if np.any(np.isfinite(V_new) != np.isfinite(V)):
            residual = np.inf
        V = V_new
        if residual <= tol:
            V_final, Q = bellman_backup(mdp, V)
            pi = np.argmin(Q, axis=1)
            return ValueTriple(V=V_final, Q=Q, pi=pi)
    raise ConvergenceError(
        f"value iteration did not converge in {max_sweeps} sweeps",
        residual=residual,
        iterations=max_sweeps,
    )


def modified_stage_cost(true_mdp, model_kernel, triple):
    """Stage cost that makes the model reproduce the true optimal values.

    L_hat(s,a) = Q*(s,a) - gamma E_model[V*(s')|s,a] where the model
    expectation is finite, +inf otherwise.  With the exact model this
    reduces to the original stage cost wherever values are finite.
    """
    model_kernel = _check_kernel(
        model_kernel, true_mdp.n_states, true_mdp.n_actions, name="model_kernel"
    )
    ev = expected_value(model_kernel, triple.V)
    L_hat = np.full_like(triple.Q, np.inf)
    ok = np.isfinite(ev)
    L_hat[ok] = triple.Q[ok] - true_mdp.discount * ev[ok]
    # Q* = +inf with finite model expectation still means an excluded pair.
    L_hat[np.isinf(triple.Q)] = np.inf
    return L_hat


def finite_horizon_dp(kernel, stage_cost, terminal_cost, discount, horizon):
    """Exact backward dynamic programming over a fixed horizon.

    Returns (V, Q, pi) at the initial stage: V is the optimal cost-to-go
    over `horizon` steps plus the terminal cost, Q embeds the first action,
    pi is the greedy initial policy (lowest index on ties).
    """
    if horizon < 1:
        raise ContractError("horizon must be >= 1")
    V = np.asarray(terminal_cost, dtype=float).copy()
    Q = None
    for _ in range(horizon):
        ev = expected_value(kernel, V)
        Q = stage_cost + discount * np.where(np.isfinite(ev), ev, np.inf)
        Q[np.isinf(stage_cost)] = np.inf
        V = Q.min(axis=1)
    return V, Q, np.argmin(Q, axis=1)


def model_invariant_set(true_mdp, model_kernel, triple):
    """States whose model trajectories under the true optimal policy stay finite.

    Forward-reachability closure: a state is excluded if the model kernel,
    driven by the optimal policy, can reach a state with infinite optimal
    value in any number of steps.
    """
    bad = ~np.isfinite(triple.V)
    rows = model_kernel[np.arange(true_mdp.n_states), triple.pi, :]
    while True:
        new_bad = bad | (rows[:, bad].sum(axis=1) > 0)
        if np.array_equal(new_bad, bad):
            return ~bad
        bad = new_bad


@dataclass
class IdentityReport:
    """Result of a brute-force identity check on a finite MDP."""

    passed: bool
    max_value_gap: float
    max_q_gap: float
    policy_mismatches: list[int]
    member_states: np.ndarray
    excluded_states: list[int]
    details: dict = field(default_factory=dict)

    def to_text(self):
        lines = [
            f"passed {self.passed}",
            f"max_value_gap {self.max_value_gap:.3e}",
            f"max_q_gap {self.max_q_gap:.3e}",
            f"policy_mismatches {self.policy_mismatches}",
            f"excluded_states {self.excluded_states}",
        ]
        for key, val in self.details.items():
            lines.append(f"{key} {val}")
        return "\n".join(lines)


def verify_theorem1(true_mdp, model_kernel, horizon, tol=1e-9):
    """Certify the model-equivalence identities by exact dynamic programming.

    Computes the finite-horizon values under the model kernel with the
    modified stage cost and the true optimal terminal cost, then checks,
    on the invariant set: (i) the values match the true optimal values,
    (ii) the greedy policy matches, (iii) the action values match wherever
    the model expectation of the true value is finite.
    """
    model_kernel = _check_kernel(
        model_kernel, true_mdp.n_states, true_mdp.n_actions, name="model_kernel"
    )
    triple = value_iteration(true_mdp)
    L_hat = modified_stage_cost(true_mdp, model_kernel, triple)
    members = model_invariant_set(true_mdp, model_kernel, triple)
    V_hat, Q_hat, pi_hat = finite_horizon_dp(
        model_kernel, L_hat, triple.V, true_mdp.discount, horizon
    )

    v_gap = 0.0
    q_gap = 0.0
    mismatches = []
    for s in np.flatnonzero(members):
        v_gap = max(v_gap, abs(V_hat[s] - triple.V[s]))
        if pi_hat[s] != triple.pi[s]:
            mismatches.append(int(s))
        ev = expected_value(model_kernel, triple.V)[s]
        for a in range(true_mdp.n_actions):
            if np.isfinite(ev[a]) and np.isfinite(triple.Q[s, a]):
                q_gap = max(q_gap, abs(Q_hat[s, a] - triple.Q[s, a]))
    passed = v_gap <= tol and q_gap <= tol and not mismatches
    return IdentityReport(
        passed=passed,
        max_value_gap=float(v_gap),
        max_q_gap=float(q_gap),
        policy_mismatches=mismatches,
        member_states=members,
        excluded_states=[int(s) for s in np.flatnonzero(~members)],
    )


def verify_corollary1(true_mdp, model_kernel, horizon_max, tol=1e-9):
    """Check terminal-cost-free convergence of the model values.

    Runs backward DP with zero terminal cost for increasing horizons and
    records the sup-norm gap to the true optimal values on the invariant
    set.  The gap at the final horizon must fall below
    gamma^horizon * max|V*| + tol.  The terminal-decay assumption
    gamma^k E_model[V*(s_k)] -> 0 under the optimal policy is checked
    directly by propagating the state distribution; states where it fails
    (e.g. a cost-carrying model cycle at discount 1) are flagged.
    """
    model_kernel = _check_kernel(
        model_kernel, true_mdp.n_states, true_mdp.n_actions, name="model_kernel"
    )
    triple = value_iteration(true_mdp)
    L_hat = modified_stage_cost(true_mdp, model_kernel, triple)
    members = model_invariant_set(true_mdp, model_kernel, triple)
    gamma = true_mdp.discount
    n_states = true_mdp.n_states

    gaps = []
    V = np.zeros(n_states)
    for _ in range(horizon_max):
        ev = expected_value(model_kernel, V)
        Q = L_hat + gamma * np.where(np.isfinite(ev), ev, np.inf)
        Q[np.isinf(L_hat)] = np.inf
        V = Q.min(axis=1)
        diffs = np.abs(V[members] - triple.V[members])
        gaps.append(float(np.max(diffs)) if np.any(members) else 0.0)

    # Decay of the discounted terminal term along model trajectories under
    # the optimal policy, per member state: the term at the full horizon
    # must have shrunk relative to the half horizon (stalling means a
    # cost-carrying model cycle, the discount-1 failure mode).
    rows = model_kernel[np.arange(n_states), triple.pi, :]
    half = max(1, horizon_max // 2)
    dist_half = np.linalg.matrix_power(rows, half)
    dist_full = dist_half @ np.linalg.matrix_power(rows, horizon_max - half)
    v_clip = np.where(np.isfinite(triple.V), triple.V, 0.0)
    term_half = gamma**half * np.abs(dist_half @ v_clip)
    term_full = gamma**horizon_max * np.abs(dist_full @ v_clip)
    violated = members & (term_full > 1e-6) & (term_full > 0.9 * term_half)
    violated_states = [int(s) for s in np.flatnonzero(violated)]

    v_max = float(np.max(np.abs(triple.V[np.isfinite(triple.V)])))
    bound = gamma**horizon_max * v_max + tol
    passed = np.isfinite(gaps[-1]) and gaps[-1] <= bound and not violated_states
    return IdentityReport(
        passed=passed,
        max_value_gap=gaps[-1],
        max_q_gap=0.0,
        policy_mismatches=[],
        member_states=members,
        excluded_states=[int(s) for s in np.flatnonzero(~members)],
        details={
            "gaps": gaps,
            "decay_bound": bound,
            "assumption_violated": bool(violated_states),
            "assumption_violated_states": violated_states,
        },
    )


def rotate_cost(L_hat, Lam, model_kernel, pi_hat, terminal_cost, discount):
    """Policy-preserving cost rotation.

    L_bar(s,a) = L_hat(s,a) + Lam(s,a) - gamma E_model[Lam(s', pi_hat(s'))],
    V_bar_f(s) = terminal_cost(s) + Lam(s, pi_hat(s)).

    Requires Lam(s,a) >= Lam(s, pi_hat(s)) for all (s, a) and Lam finite
    wherever L_hat is finite.
    """
    L_hat = np.asarray(L_hat, dtype=float)
    Lam = np.asarray(Lam, dtype=float)
    pi_hat = np.asarray(pi_hat, dtype=int)
    n_states, n_actions = L_hat.shape
    model_kernel = _check_kernel(model_kernel, n_states, n_actions, name="model_kernel")
    lam_pi = Lam[np.arange(n_states), pi_hat]
    slack = Lam - lam_pi[:, None]
    if np.min(slack) < -1e-12:
        s, a = np.unravel_index(np.argmin(slack), slack.shape)
        raise ContractError(
            f"rotation term violates Lam(s,a) >= Lam(s, pi(s)) at (s={s}, a={a})"
        )
    if np.any(np.isfinite(L_hat) & ~np.isfinite(Lam)):
        raise ContractError("rotation term must be finite wherever the cost is finite")
    ev = expected_value(model_kernel, lam_pi)
    L_bar = L_hat + Lam - discount * ev
    L_bar[np.isinf(L_hat)] = np.inf
    V_bar_f = np.asarray(terminal_cost, dtype=float) + lam_pi
    return L_bar, V_bar_f


@dataclass(frozen=True)
class DpProblem:
    """A finite-horizon DP instance: kernel, stage cost, terminal cost."""

    kernel: np.ndarray
    stage_cost: np.ndarray
    terminal_cost: np.ndarray
    discount: float


def verify_theorem2(original, rotated, Lam, horizon, tol=1e-9, members=None):
    """Certify that a cost rotation preserves the policy and shifts values.

    Solves both DP problems over the horizon and checks, on `members`
    (default: states where both values are finite): exact equality of the
    greedy policies, V_bar = V + Lam(s, pi(s)), Q_bar = Q + Lam(s, a).
    """
    V, Q, pi = finite_horizon_dp(
        original.kernel, original.stage_cost, original.terminal_cost,
        original.discount, horizon,
    )
    V_bar, Q_bar, pi_bar = finite_horizon_dp(
        rotated.kernel, rotated.stage_cost, rotated.terminal_cost,
        rotated.discount, horizon,
    )
    Lam = np.asarray(Lam, dtype=float)
    n_states = V.shape[0]
    if members is None:
        members = np.isfinite(V) & np.isfinite(V_bar)
    lam_pi = Lam[np.arange(n_states), pi]

    v_gap = 0.0
    q_gap = 0.0
    mismatches = []
    for s in np.flatnonzero(members):
        if pi_bar[s] != pi[s]:
            mismatches.append(int(s))
        v_gap = max(v_gap, abs(V_bar[s] - V[s] - lam_pi[s]))
        finite = np.isfinite(Q[s]) & np.isfinite(Q_bar[s])
        if np.any(finite):
            q_gap = max(
                q_gap, np.max(np.abs(Q_bar[s, finite] - Q[s, finite] - Lam[s, finite]))
            )
    passed = v_gap <= tol and q_gap <= tol and not mismatches
    return IdentityReport(
        passed=passed,
        max_value_gap=float(v_gap),
        max_q_gap=float(q_gap),
        policy_mismatches=mismatches,
        member_states=members,
        excluded_states=[int(s) for s in np.flatnonzero(~members)],
    )


def save_mdp(mdp, path):
    """Write the plain-text tabular format: header, then one line per (s,a)."""
    with open(path, "w") as fh:
        fh.write(f"{mdp.n_states} {mdp.n_actions} {mdp.discount!r}\n")
        for s in range(mdp.n_states):
            for a in range(mdp.n_actions):
                cost = mdp.stage_cost[s, a]
                cost_tok = "inf" if np.isinf(cost) else repr(float(cost))
                probs = " ".join(repr(float(p)) for p in mdp.kernel[s, a])
                fh.write(f"{s} {a} {cost_tok} {probs}\n")


def load_mdp(path):
    """Read the plain-text tabular format written by save_mdp."""
    with open(path) as fh:
        header = fh.readline().split()
        n_states, n_actions, gamma = int(header[0]), int(header[1]), float(header[2])
        kernel = np.zeros((n_states, n_actions, n_states))
        cost = np.zeros((n_states, n_actions))
        for line in fh:
            toks = line.split()
            if not toks:
                continue
            s, a = int(toks[0]), int(toks[1])
            cost[s, a] = np.inf if toks[2] == "inf" else float(toks[2])
            kernel[s, a] = [float(t) for t in toks[3 : 3 + n_states]]
    return FiniteMDP(kernel=kernel, stage_cost=cost, discount=gamma)


def random_mdp(seed, n_states=5, n_actions=3, discount=0.9, cost_scale=1.0):
    """Seeded random MDP with Dirichlet transition rows and uniform costs."""
    rng = np.random.default_rng(seed)
    kernel = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    cost = cost_scale * rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    return FiniteMDP(kernel=kernel, stage_cost=cost, discount=discount)


def perturb_kernel(kernel, seed, mix=0.3):
    """Row-stochastic perturbation: blend with an independent random kernel."""
    rng = np.random.default_rng(seed)
    n_states, n_actions, _ = kernel.shape
    noise = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    return (1.0 - mix) * kernel + mix * noise
