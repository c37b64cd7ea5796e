"""Per-agent primal-dual iteration and its convergence analysis.

One agent minimizes its augmented Lagrangian by gradient descent on the
primal vector and gradient ascent on the duals.  Coupled equality rows enter
through per-row residual terms supplied by the exchange layer, so the same
update code serves the plaintext incremental scheme, the non-incremental
scheme, and the secured runs where the residual arrives pre-multiplied by a
random coefficient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import BUYER, INACTIVE, P_IDX, N_SCALAR_VARS


class AnalysisPreconditionError(ValueError):
    """Inputs violate the assumptions behind the feasible-range derivation."""


class RateBoundError(ValueError):
    """The contraction factor did not come out below one."""


@dataclass
class StepParams:
    """Step sizes shared by all update modes.

    mu drives the primal descent, xi_a scales the coupled-row dual ascent
    (the initial value when the secured runs rescale it), xi_b the local-row
    ascent, and eta is the quadratic penalty weight on coupled residuals.
    """

    mu: float = 0.07
    xi_a: float = 0.02
    xi_b: float = 0.015
    eta: float = 1.6


@dataclass
class AgentState:
    phi: np.ndarray
    lam_a: np.ndarray
    lam_b: np.ndarray

    @classmethod
    def zeros(cls, blocks):
        return cls(
            phi=np.zeros(blocks.dim),
            lam_a=np.zeros(blocks.A.shape[0]),
            lam_b=np.zeros(blocks.B.shape[0]),
        )

    def copy(self):
        return AgentState(self.phi.copy(), self.lam_a.copy(), self.lam_b.copy())


def role_price(case, i):
    """Utility-company price seen by this prosumer's cost terms."""
    return case.omega_b if case.role(i) == BUYER else case.omega_s


def cost_gradient(pro, omega_i, phi):
    """Gradient of the individual cost over the agent's own variables.

    The utility-company term is differentiated on its role-active branch
    (buyers pay omega_b on net purchases, sellers forgo omega_s on net
    sales), which the energy-balance rows enforce at any feasible point.
    Inactive prosumers carry a constant-zero cost.
    """
    g = np.zeros(len(phi))
    if pro.role == INACTIVE:
        return g
    g[P_IDX] = 2.0 * pro.epsilon * (phi[P_IDX] - pro.p_desired) - omega_i
    for k in range(N_SCALAR_VARS, len(phi)):
        g[k] = 2.0 * pro.alpha * phi[k] + pro.beta + omega_i
    return g


def cost_value(pro, omega_i, phi):
    if pro.role == INACTIVE:
        return 0.0
    e = phi[N_SCALAR_VARS:]
    trade = float(np.sum(e))
    return (
        pro.alpha * float(np.sum(e * e))
        + pro.beta * trade
        + pro.epsilon * (phi[P_IDX] - pro.p_desired) ** 2
        + omega_i * (trade - phi[P_IDX])
    )


def lagrangian_value(blocks, pro, omega_i, phi, lam_a, lam_b, foreign, eta):
    """Augmented Lagrangian value with the coupled data frozen at `foreign`."""
    res = blocks.A @ phi + foreign
    local = blocks.B @ phi - blocks.b
    return (
        cost_value(pro, omega_i, phi)
        + float(lam_a @ res)
        + 0.5 * eta * float(res @ res)
        + float(lam_b @ local)
    )


def grad_primal(blocks, pro, omega_i, state, penalty_terms):
    """Full primal gradient; penalty_terms[r] is the weighted residual of row r.

    For the incremental scheme that is eta * residual; for the
    non-incremental scheme eta * y where y may carry a blinding coefficient.
    """
    if len(penalty_terms) != blocks.A.shape[0]:
        raise ValueError("one penalty term per coupled row required")
    g = cost_gradient(pro, omega_i, state.phi)
    g += blocks.A.T @ (state.lam_a + penalty_terms)
    g += blocks.B.T @ state.lam_b
    return g


def primal_update(state, grad, mu):
    return state.phi - mu * grad


def dual_update_global_incremental(state, residuals, xi_a):
    return state.lam_a + xi_a * residuals


def dual_update_global_nonincremental(state, y, xi_a):
    """Ascent with the stale-residual products; y already carries any blinding."""
    return state.lam_a + xi_a * y


def dual_update_local(state, blocks, phi_fresh, xi_b):
    return np.maximum(0.0, state.lam_b + xi_b * (blocks.B @ phi_fresh - blocks.b))


def kkt_residual(blocks, pro, omega_i, state, foreign, eta):
    """Residual norms of the five optimality groups at the current point."""
    res = blocks.A @ state.phi + foreign
    local = blocks.B @ state.phi - blocks.b
    stationarity = (
        cost_gradient(pro, omega_i, state.phi)
        + blocks.A.T @ (state.lam_a + eta * res)
        + blocks.B.T @ state.lam_b
    )
    return {
        "stationarity": float(np.max(np.abs(stationarity))) if stationarity.size else 0.0,
        "primal_eq": float(np.max(np.abs(res))) if res.size else 0.0,
        "primal_ineq": float(np.max(np.maximum(local, 0.0))) if local.size else 0.0,
        "dual_sign": float(np.max(np.maximum(-state.lam_b, 0.0))) if state.lam_b.size else 0.0,
        "comp_slack": float(np.max(np.abs(state.lam_b * local))) if local.size else 0.0,
    }


@dataclass
class FeasibleRange:
    """Admissible interval for the blinding coefficient of one agent."""

    condition_id: int
    k1: float
    k2: float | None
    r_lo: float
    r_hi: float
    empty: bool
    inputs: dict = field(default_factory=dict)

    def contains(self, r):
        return not self.empty and self.r_lo <= r <= self.r_hi

    def width(self):
        return 0.0 if self.empty else self.r_hi - self.r_lo


def feasible_range(rho, delta, mu, xi_a, xi_b, eta, sigma_max_a, sigma_min_a, sigma_max_b):
    """Coefficient interval preserving linear convergence of the iteration.

    Branches on the sign of xi_a * smax(A)^2 - (eta - xi_a) * smin(A)^2; the
    returned interval is closed, with a zero lower endpoint standing for the
    open constraint r > 0.
    """
    inputs = {
        "rho": rho, "delta": delta, "mu": mu, "xi_a": xi_a, "xi_b": xi_b,
        "eta": eta, "sigma_max_a": sigma_max_a, "sigma_min_a": sigma_min_a,
        "sigma_max_b": sigma_max_b,
    }
    if eta - xi_a <= 0:
        raise AnalysisPreconditionError(
            f"initial penalty {eta} must exceed the dual step {xi_a}"
        )
    if 1.0 - mu * delta <= 0:
        raise AnalysisPreconditionError(f"mu * delta = {mu * delta} must stay below one")

    smax_a2 = sigma_max_a ** 2
    smin_a2 = sigma_min_a ** 2
    smax_b2 = sigma_max_b ** 2
    k1 = (1.0 - mu * delta) / (mu * (eta - xi_a) * smax_a2)
    s = xi_a * smax_a2 - (eta - xi_a) * smin_a2
    ratio = rho / smax_b2

    scale = max(abs(xi_a * smax_a2), abs((eta - xi_a) * smin_a2), 1e-30)
    if abs(s) <= 1e-12 * scale:
        if xi_b <= ratio:
            return FeasibleRange(3, k1, None, 0.0, k1, empty=k1 <= 0, inputs=inputs)
        return FeasibleRange(3, k1, None, 0.0, 0.0, empty=True, inputs=inputs)
    if s > 0:
        if xi_b >= ratio:
            return FeasibleRange(1, k1, None, 0.0, 0.0, empty=True, inputs=inputs)
        k2 = (rho - xi_b * smax_b2) / s
        hi = min(k1, k2)
        return FeasibleRange(1, k1, k2, 0.0, hi, empty=hi <= 0, inputs=inputs)
    k2 = (xi_b * smax_b2 - rho) / (-s)
    lo = max(0.0, k2)
    return FeasibleRange(2, k1, k2, lo, k1, empty=lo > k1, inputs=inputs)


def linear_rate_bound(rho, delta, mu, xi_a, xi_b, eta, sigma_max_a, sigma_min_a, sigma_min_m, r):
    """Contraction factor bound for the weighted error under coefficient r."""
    eta_r = (eta - xi_a) * r
    delta_eta = delta + eta_r * sigma_max_a ** 2
    rho_eta = rho + eta_r * sigma_min_a ** 2
    if mu * delta_eta >= 1.0:
        raise RateBoundError(f"mu * delta_eta = {mu * delta_eta} must stay below one")
    theta = 1.0 + (mu * mu * delta_eta - mu) * rho_eta
    smin_m2 = sigma_min_m ** 2
    rate = max(theta, 1.0 - mu * xi_a * r * smin_m2, 1.0 - mu * xi_b * smin_m2)
    if rate >= 1.0:
        raise RateBoundError(f"rate bound {rate} is not below one")
    return rate


def lyapunov_weights(params, sigma_max_a, sigma_max_b, r=1.0):
    """Weights (c_phi, c_a, c_b) of the contraction functional."""
    xi_a = params.xi_a * r
    c_phi = 1.0 - params.mu * xi_a * sigma_max_a ** 2 - params.mu * params.xi_b * sigma_max_b ** 2
    if c_phi <= 0:
        raise AnalysisPreconditionError("primal weight must stay positive")
    return c_phi, params.mu / xi_a, params.mu / params.xi_b


def weighted_error(weights, state, reference):
    c_phi, c_a, c_b = weights
    dp = state.phi - reference.phi
    da = state.lam_a - reference.lam_a
    db = state.lam_b - reference.lam_b
    return c_phi * float(dp @ dp) + c_a * float(da @ da) + c_b * float(db @ db)
