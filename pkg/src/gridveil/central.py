"""Centralized market clearing, used as the exactness reference.

Solves the full radial-feeder quadratic program in one shot with cvxpy and
maps the solution (including duals) back onto the per-agent layout so KKT
certification and optimality-gap checks can reuse the distributed code.
"""

from __future__ import annotations

from dataclasses import dataclass

import cvxpy as cp
import numpy as np

from .grid import BUYER, INACTIVE, SELLER, N_SCALAR_VARS, P_IDX, Q_IDX, PF_IDX, QF_IDX, V_IDX
from .pdhg import AgentState

_SOLVER_PREFERENCE = ("CLARABEL", "ECOS", "SCS")


class CentralSolveError(RuntimeError):
    pass


@dataclass
class CentralSolution:
    objective: float
    traded_energy: float
    states: dict  # agent id -> AgentState with mapped duals
    status: str


def _dual_scalar(constraint):
    val = np.atleast_1d(constraint.dual_value)
    return float(val[0])


def solve_centralized(case, blocks_by_agent):
    """Clear the whole market as one quadratic program."""
    agents = case.agent_ids
    var = {
        i: {
            "p": cp.Variable(), "q": cp.Variable(), "P": cp.Variable(),
            "Q": cp.Variable(), "v": cp.Variable(),
            "e": {j: cp.Variable() for j in case.partners.get(i, ())},
        }
        for i in agents
    }

    cost = 0
    for i in agents:
        pro = case.prosumers[i]
        if pro.role == INACTIVE:
            continue
        omega_i = case.omega_b if pro.role == BUYER else case.omega_s
        trades = list(var[i]["e"].values())
        cost = cost + pro.epsilon * cp.square(var[i]["p"] - pro.p_desired)
        if trades:
            stacked = cp.hstack(trades)
            total = cp.sum(stacked)
            cost = cost + pro.alpha * cp.sum_squares(stacked) + pro.beta * total
            cost = cost + omega_i * (total - var[i]["p"])
        else:
            cost = cost - omega_i * var[i]["p"]

    cons = []
    tags = []

    def add(expr, tag):
        cons.append(expr)
        tags.append(tag)

    for i in agents:
        pro = case.prosumers[i]
        bus = case.buses[i]
        vi = var[i]
        add(vi["p"] <= pro.p_max, (i, "p_hi"))
        add(-vi["p"] <= -pro.p_min, (i, "p_lo"))
        add(vi["q"] <= pro.q_max, (i, "q_hi"))
        add(-vi["q"] <= -pro.q_min, (i, "q_lo"))
        add(vi["P"] <= bus.p_flow_max, (i, "P_hi"))
        add(-vi["P"] <= -bus.p_flow_min, (i, "P_lo"))
        add(vi["Q"] <= bus.q_flow_max, (i, "Q_hi"))
        add(-vi["Q"] <= -bus.q_flow_min, (i, "Q_lo"))
        add(vi["v"] <= bus.v_max, (i, "v_hi"))
        add(-vi["v"] <= -bus.v_min, (i, "v_lo"))

        sign = 1.0 if pro.role == BUYER else -1.0
        for j in case.partners.get(i, ()):
            add(sign * vi["e"][j] <= 0, (i, "e_sign", j))
        if pro.role != INACTIVE and case.partners.get(i, ()):
            total = cp.sum(cp.hstack(list(vi["e"].values())))
            add(sign * (vi["p"] - total) <= 0, (i, "balance"))

        parent = case.parent_of(i)
        v_up = case.root_voltage if parent == 0 else var[parent]["v"]
        r_pu, x_pu = case.line(i)
        add(v_up - vi["v"] - 2.0 * (r_pu * vi["P"] + x_pu * vi["Q"]) == 0, (i, "vv"))
        p_in = sum(var[c]["P"] for c in case.children.get(i, ())) if case.children.get(i, ()) else 0
        q_in = sum(var[c]["Q"] for c in case.children.get(i, ())) if case.children.get(i, ()) else 0
        add(p_in - vi["P"] - vi["p"] == 0, (i, "pp"))
        add(q_in - vi["Q"] - vi["q"] == 0, (i, "qq"))

    for i in agents:
        for j in case.partners.get(i, ()):
            if i < j:
                add(var[i]["e"][j] + var[j]["e"][i] == 0, (i, "ee", j))

    problem = cp.Problem(cp.Minimize(cost), cons)
    status = None
    for solver in _SOLVER_PREFERENCE:
        if solver not in cp.installed_solvers():
            continue
        try:
            problem.solve(solver=solver)
        except cp.SolverError:
            continue
        status = problem.status
        if status == cp.OPTIMAL:
            break
    if status != cp.OPTIMAL:
        raise CentralSolveError(f"centralized solve failed with status {status}")

    duals = {tag: cons[k] for k, tag in enumerate(tags)}
    states = {}
    for i in agents:
        blocks = blocks_by_agent[i]
        phi = np.zeros(blocks.dim)
        phi[P_IDX] = var[i]["p"].value
        phi[Q_IDX] = var[i]["q"].value
        phi[PF_IDX] = var[i]["P"].value
        phi[QF_IDX] = var[i]["Q"].value
        phi[V_IDX] = var[i]["v"].value
        for j in blocks.partners:
            phi[blocks.e_index(j)] = var[i]["e"][j].value

        lam_a = np.zeros(blocks.A.shape[0])
        for r, (kind, other) in enumerate(blocks.a_rows):
            if kind == "ee":
                pair = (i, "ee", other) if i < other else (other, "ee", i)
                lam_a[r] = _dual_scalar(duals[pair])
            else:
                lam_a[r] = _dual_scalar(duals[(i, kind)])
        lam_b = np.zeros(blocks.B.shape[0])
        for r, (kind, other) in enumerate(blocks.b_rows):
            tag = (i, kind, other) if kind == "e_sign" else (i, kind)
            lam_b[r] = max(0.0, _dual_scalar(duals[tag]))
        states[i] = AgentState(phi=phi, lam_a=lam_a, lam_b=lam_b)

    traded = 0.0
    for i in agents:
        if case.role(i) == SELLER:
            traded += sum(float(var[i]["e"][j].value) for j in case.partners.get(i, ()))
    return CentralSolution(
        objective=float(problem.value),
        traded_energy=traded,
        states=states,
        status=status,
    )
