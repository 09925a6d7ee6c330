"""Simulated real systems: a noisy linear plant and a stochastic evaporator.

Each plant exposes a step function returning the next state, the realized
stage cost, and the disturbance draw, so that logged runs can be replayed
bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from .errors import ContractError

LINEAR_A_TRUE = np.array([[0.9, 0.35], [0.0, 1.1]])
LINEAR_B_TRUE = np.array([[0.0813], [0.2]])
LINEAR_X_LOWER = np.array([0.0, -1.0])
LINEAR_X_UPPER = np.array([1.0, 1.0])
LINEAR_PENALTY = np.array([100.0, 100.0])


@dataclass(frozen=True)
class PlantStep:
    """One plant transition: successor state, realized cost, disturbance."""

    next_state: np.ndarray
    cost: float
    disturbance: np.ndarray


def linear_stage_cost(s, a):
    """Quadratic tracking cost with an l1 penalty on state-bound violations.

    Shares the slack-group convention of the controller: one penalty entry
    per state, charging the worse of the lower/upper violations.
    """
    s = np.asarray(s, dtype=float)
    a = np.atleast_1d(np.asarray(a, dtype=float))
    viol = np.maximum(0.0, np.maximum(LINEAR_X_LOWER - s, s - LINEAR_X_UPPER))
    return float(0.5 * s @ s + 0.25 * a @ a + LINEAR_PENALTY @ viol)


class LinearPlant:
    """Two-state linear process disturbed on its first state.

    The additive disturbance is uniform on [-0.1, 0], which drags the first
    state toward (and past) its lower bound.
    """

    n_states = 2
    n_inputs = 1

    def __init__(self, seed=0):
        self.seed = seed
        self.rng = np.random.default_rng(seed)

    def step(self, s, a):
        e = self.rng.uniform(-0.1, 0.0)
        return self.replay(s, a, np.array([e]))

    def replay(self, s, a, disturbance):
        s = np.asarray(s, dtype=float)
        a = np.atleast_1d(np.asarray(a, dtype=float))
        e = float(np.asarray(disturbance).ravel()[0])
        s_next = LINEAR_A_TRUE @ s + LINEAR_B_TRUE @ a + np.array([e, 0.0])
        return PlantStep(next_state=s_next, cost=linear_stage_cost(s, a),
                         disturbance=np.array([e]))


@dataclass(frozen=True)
class EvaporationParams:
    """Physical constants and nominal operating data of the evaporator."""

    a: float = 0.5616
    b: float = 0.3126
    c: float = 48.43
    d: float = 0.507
    e: float = 55.0
    f: float = 0.1538
    g: float = 55.0
    h: float = 0.16
    M: float = 20.0
    C: float = 4.0
    U_A2: float = 6.84
    C_p: float = 0.07
    lam: float = 38.5
    lam_s: float = 36.6
    # nominal exogenous conditions (feed flow/concentration, temperatures)
    F1: float = 10.0
    X1: float = 5.0
    F3: float = 50.0
    T1: float = 40.0
    T200: float = 25.0
    # disturbance scales applied to (X1, F1, T1, T200)
    sigma_X1: float = 1.0
    sigma_F1: float = 2.0
    sigma_T1: float = 8.0
    sigma_T200: float = 5.0


EVAP_X_LOWER = np.array([25.0, 40.0])
EVAP_X_UPPER = np.array([100.0, 80.0])
EVAP_U_LOWER = np.array([100.0, 100.0])
EVAP_U_UPPER = np.array([400.0, 400.0])
EVAP_PENALTY_WEIGHT = 1.0


def evaporation_algebra(X2, P2, P100, F200, exogenous=None, params=EvaporationParams()):
    """Algebraic relations of the evaporator, evaluated in dependency order.

    exogenous is (X1, F1, T1, T200); defaults to the nominal values.
    Returns a dict with T2, T3, T100, U_A1, Q100, Q200, F4, F5, F100, F2.
    Entries stay complex if the inputs are complex, so the whole map is
    differentiable by complex step.
    """
    p = params
    if exogenous is None:
        X1, F1, T1, T200 = p.X1, p.F1, p.T1, p.T200
    else:
        X1, F1, T1, T200 = exogenous
    if np.any(F200 == 0):
        raise ContractError("F200 must be nonzero (division guard)")
    T2 = p.a * P2 + p.b * X2 + p.c
    T3 = p.d * P2 + p.e
    T100 = p.f * P100 + p.g
    U_A1 = p.h * (F1 + p.F3)
    Q100 = U_A1 * (T100 - T2)
    F4 = (Q100 - F1 * p.C_p * (T2 - T1)) / p.lam
    F100 = Q100 / p.lam_s
    Q200 = p.U_A2 * (T3 - T200) / (1.0 + p.U_A2 / (2.0 * p.C_p * F200))
    F5 = Q200 / p.lam
    F2 = F1 - F4
    return {
        "T2": T2, "T3": T3, "T100": T100, "U_A1": U_A1, "Q100": Q100,
        "Q200": Q200, "F4": F4, "F5": F5, "F100": F100, "F2": F2,
        "X1": X1, "F1": F1, "T1": T1, "T200": T200,
    }


def evaporation_rhs(x, u, exogenous=None, params=EvaporationParams()):
    """Continuous-time derivatives (dX2/dt, dP2/dt).

    Elementwise algebra only, so x and u may carry a trailing batch axis
    and may be complex (for complex-step differentiation).
    """
    X2, P2 = x[0], x[1]
    P100, F200 = u[0], u[1]
    alg = evaporation_algebra(X2, P2, P100, F200, exogenous, params)
    dX2 = (alg["F1"] * alg["X1"] - alg["F2"] * X2) / params.M
    dP2 = (alg["F4"] - alg["F5"]) / params.C
    return np.stack([np.asarray(dX2), np.asarray(dP2)])


def evaporation_discrete_step(x, u, exogenous=None, params=EvaporationParams(),
                              h_int=1.0, substeps=10):
    """One control period of classic fixed-step RK4 with frozen exogenous."""
    x = np.asarray(x)
    u = np.asarray(u)
    dt = h_int / substeps
    for _ in range(substeps):
        k1 = evaporation_rhs(x, u, exogenous, params)
        k2 = evaporation_rhs(x + 0.5 * dt * k1, u, exogenous, params)
        k3 = evaporation_rhs(x + 0.5 * dt * k2, u, exogenous, params)
        k4 = evaporation_rhs(x + dt * k3, u, exogenous, params)
        x = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return x


def evaporation_economic_cost(X2, P2, P100, F200, exogenous=None,
                              params=EvaporationParams()):
    """Operating cost rate: steam, cooling water, and pump terms."""
    alg = evaporation_algebra(X2, P2, P100, F200, exogenous, params)
    return 10.09 * (alg["F2"] + params.F3) + 600.0 * alg["F100"] + 0.6 * F200


def evaporation_bound_penalty(x):
    """l1 state-bound violation charge at unit weight."""
    x = np.asarray(x, dtype=float)
    viol = np.maximum(0.0, EVAP_X_LOWER - x) + np.maximum(0.0, x - EVAP_X_UPPER)
    return EVAP_PENALTY_WEIGHT * float(viol.sum())


class EvaporationPlant:
    """Stochastic evaporation process.

    Exogenous conditions (X1, F1, T1, T200) are drawn once per control
    period from independent Gaussians centered on their nominal values and
    held constant while the two-state ODE is integrated.
    """

    n_states = 2
    n_inputs = 2

    def __init__(self, seed=0, params=EvaporationParams(), h_int=1.0, substeps=10,
                 noise_scale=1.0):
        self.seed = seed
        self.params = params
        self.h_int = h_int
        self.substeps = substeps
        self.noise_scale = noise_scale
        self.rng = np.random.default_rng(seed)

    def draw_exogenous(self):
        p = self.params
        scale = self.noise_scale
        return np.array([
            p.X1 + scale * p.sigma_X1 * self.rng.standard_normal(),
            p.F1 + scale * p.sigma_F1 * self.rng.standard_normal(),
            p.T1 + scale * p.sigma_T1 * self.rng.standard_normal(),
            p.T200 + scale * p.sigma_T200 * self.rng.standard_normal(),
        ])

    def step(self, s, a):
        return self.replay(s, a, self.draw_exogenous())

    def replay(self, s, a, disturbance):
        s = np.asarray(s, dtype=float)
        a = np.asarray(a, dtype=float)
        exog = tuple(np.asarray(disturbance, dtype=float))
        s_next = evaporation_discrete_step(
            s, a, exog, self.params, self.h_int, self.substeps
        )
        if not np.all(np.isfinite(s_next)):
            raise ContractError(
                f"integration produced non-finite state from s={s}, a={a}, "
                f"disturbance={disturbance}"
            )
        cost = evaporation_economic_cost(s[0], s[1], a[0], a[1], exog, self.params)
        cost += evaporation_bound_penalty(s)
        return PlantStep(next_state=s_next, cost=float(cost),
                         disturbance=np.asarray(disturbance, dtype=float))


def find_steady_state(u, x_guess=(30.0, 50.0), params=EvaporationParams()):
    """Root-solve the nominal continuous dynamics for a steady state at fixed u."""
    u = np.asarray(u, dtype=float)
    sol = scipy.optimize.root(
        lambda x: evaporation_rhs(x, u, None, params), np.asarray(x_guess, float),
        tol=1e-12,
    )
    if not sol.success:
        raise ContractError(f"steady-state root solve failed: {sol.message}")
    return sol.x


def steady_input(X2, P2, params=EvaporationParams()):
    """Inputs holding (X2, P2) stationary under nominal conditions.

    The two steady-state equations fix the flows in closed form: the solute
    balance pins F2 (hence F4), the heat balance then pins Q100 (hence P100),
    and matching F5 = F4 pins F200.  Returns None when the required inputs
    are not realizable (nonpositive flow or heat duty).
    """
    p = params
    T2 = p.a * P2 + p.b * X2 + p.c
    T3 = p.d * P2 + p.e
    F2 = p.F1 * p.X1 / X2
    F4 = p.F1 - F2
    Q100 = p.lam * F4 + p.F1 * p.C_p * (T2 - p.T1)
    U_A1 = p.h * (p.F1 + p.F3)
    T100 = T2 + Q100 / U_A1
    P100 = (T100 - p.g) / p.f
    Q200 = p.lam * F4  # F5 = F4 at steady state
    if Q200 <= 0 or T3 <= p.T200:
        return None
    denom = p.U_A2 * (T3 - p.T200) / Q200 - 1.0
    if denom <= 0:
        return None
    F200 = p.U_A2 / (2.0 * p.C_p * denom)
    return np.array([P100, F200])


def economic_steady_state(params=EvaporationParams(), x2_min=EVAP_X_LOWER[0],
                          grid=60):
    """Economically optimal admissible steady state of the nominal model.

    The steady manifold is parametrized in closed form by (X2, P2), so the
    search is a fine grid over the state box followed by a local polish,
    with the product quality bound X2 >= x2_min.
    """
    lo = np.array([x2_min, EVAP_X_LOWER[1]])
    hi = EVAP_X_UPPER

    def admissible_cost(x):
        u = steady_input(x[0], x[1], params)
        if u is None or np.any(u < EVAP_U_LOWER) or np.any(u > EVAP_U_UPPER):
            return np.inf
        return evaporation_economic_cost(x[0], x[1], u[0], u[1], None, params)

    best_x, best_c = None, np.inf
    for X2 in np.linspace(lo[0], hi[0], grid):
        for P2 in np.linspace(lo[1], hi[1], grid):
            c = admissible_cost([X2, P2])
            if c < best_c:
                best_x, best_c = np.array([X2, P2]), c
    if best_x is None:
        raise ContractError("economic steady-state search found no admissible point")
    res = scipy.optimize.minimize(
        admissible_cost, best_x, method="Nelder-Mead",
        options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 2000},
    )
    x_e = np.clip(res.x, lo, hi) if res.success else best_x
    if admissible_cost(x_e) > best_c:
        x_e = best_x
    u_e = steady_input(x_e[0], x_e[1], params)
    return x_e, u_e, float(admissible_cost(x_e))
