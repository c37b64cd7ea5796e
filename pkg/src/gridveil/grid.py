"""Radial feeder and market data model.

A case bundles the tree topology (bus 0 is the utility head), per-line
impedances, prosumer utility parameters, and the trading-partner graph.
Each prosumer owns the decision vector [p, q, P, Q, v, e_j...] where P, Q
are the flows on its line to the parent and e_j the energy traded with
partner j.  The constraint split mirrors the per-agent decomposition: one
equality block for the coupled rows (reciprocity, voltage drop, flow
balance) and one inequality block for the purely local rows.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

P_IDX, Q_IDX, PF_IDX, QF_IDX, V_IDX = 0, 1, 2, 3, 4
N_SCALAR_VARS = 5

BUYER, SELLER, INACTIVE = "buyer", "seller", "inactive"


class CaseValidationError(ValueError):
    """Raised with the full list of offending elements."""


@dataclass(frozen=True)
class BusSpec:
    id: int
    parent: int | None
    r_pu: float
    x_pu: float
    v_min: float
    v_max: float
    p_flow_min: float
    p_flow_max: float
    q_flow_min: float
    q_flow_max: float


@dataclass(frozen=True)
class ProsumerParams:
    bus: int
    alpha: float
    beta: float
    epsilon: float
    p_desired: float
    p_min: float
    p_max: float
    q_min: float
    q_max: float

    @property
    def role(self):
        if self.p_desired < 0:
            return BUYER
        if self.p_desired > 0:
            return SELLER
        return INACTIVE


@dataclass
class GridCase:
    buses: dict
    prosumers: dict
    omega_b: float
    omega_s: float
    partners: dict
    seed: int
    children: dict = field(default_factory=dict)
    source: str = ""

    @property
    def agent_ids(self):
        return sorted(self.prosumers)

    @property
    def root_voltage(self):
        head = self.buses[0]
        return 0.5 * (head.v_min + head.v_max)

    def parent_of(self, i):
        return self.buses[i].parent

    def line(self, i):
        bus = self.buses[i]
        return bus.r_pu, bus.x_pu

    def role(self, i):
        return self.prosumers[i].role

    def conservative_curvature(self):
        """Case-wide (rho, delta) bounds from the active prosumers."""
        active = [p for p in self.prosumers.values() if p.role != INACTIVE]
        rho = min(2.0 * p.alpha for p in active)
        delta = max(2.0 * p.epsilon for p in active)
        return rho, delta


def classify_agents(case):
    """Partition prosumers by the sign of their preferred injection."""
    buyers = tuple(i for i in case.agent_ids if case.role(i) == BUYER)
    sellers = tuple(i for i in case.agent_ids if case.role(i) == SELLER)
    inactive = tuple(i for i in case.agent_ids if case.role(i) == INACTIVE)
    return buyers, sellers, inactive


def _expand_partners(spec, buyers, sellers, inactive):
    partners = {i: set() for i in list(buyers) + list(sellers) + list(inactive)}
    if spec == "complete":
        for b in buyers:
            for s in sellers:
                partners[b].add(s)
                partners[s].add(b)
    else:
        for i, j in spec:
            partners[i].add(j)
            partners[j].add(i)
    return {i: tuple(sorted(js)) for i, js in partners.items()}


def load_case(source):
    """Parse and validate a case document (path, JSON string, or dict)."""
    if isinstance(source, dict):
        doc, origin = source, "<dict>"
    else:
        path = Path(source)
        doc = json.loads(path.read_text())
        origin = str(path)

    buses = {}
    for entry in doc["buses"]:
        bus = BusSpec(
            id=int(entry["id"]),
            parent=None if entry["parent"] is None else int(entry["parent"]),
            r_pu=float(entry.get("r_pu", 0.0)),
            x_pu=float(entry.get("x_pu", 0.0)),
            v_min=float(entry["v_min"]),
            v_max=float(entry["v_max"]),
            p_flow_min=float(entry["p_flow_min"]),
            p_flow_max=float(entry["p_flow_max"]),
            q_flow_min=float(entry["q_flow_min"]),
            q_flow_max=float(entry["q_flow_max"]),
        )
        buses[bus.id] = bus

    prosumers = {}
    for entry in doc["prosumers"]:
        pro = ProsumerParams(
            bus=int(entry["bus"]),
            alpha=float(entry["alpha"]),
            beta=float(entry["beta"]),
            epsilon=float(entry["epsilon"]),
            p_desired=float(entry["p_desired"]),
            p_min=float(entry["p_min"]),
            p_max=float(entry["p_max"]),
            q_min=float(entry["q_min"]),
            q_max=float(entry["q_max"]),
        )
        prosumers[pro.bus] = pro

    problems = []
    if 0 not in buses:
        problems.append("bus 0 (utility) missing")
    for bus in buses.values():
        if bus.id == 0:
            if bus.parent is not None:
                problems.append("bus 0 must have no parent")
            continue
        if bus.parent is None:
            problems.append(f"bus {bus.id}: missing parent")
        elif bus.parent not in buses:
            problems.append(f"bus {bus.id}: parent {bus.parent} unknown")

    # Tree check: every bus must reach the root without revisiting a node.
    for start in buses:
        seen = set()
        node = start
        while node != 0 and node is not None:
            if node in seen:
                problems.append(f"cycle through bus {node}")
                break
            seen.add(node)
            node = buses[node].parent if node in buses else None

    for bus_id in prosumers:
        if bus_id not in buses or bus_id == 0:
            problems.append(f"prosumer at unknown or utility bus {bus_id}")
    for bus_id in buses:
        if bus_id != 0 and bus_id not in prosumers:
            problems.append(f"bus {bus_id} has no prosumer")

    market = doc["market"]
    omega_b = float(market["omega_b"])
    omega_s = float(market["omega_s"])
    if omega_s > omega_b:
        problems.append(f"omega_s {omega_s} exceeds omega_b {omega_b}")

    buyers = tuple(i for i, p in sorted(prosumers.items()) if p.role == BUYER)
    sellers = tuple(i for i, p in sorted(prosumers.items()) if p.role == SELLER)
    inactive = tuple(i for i, p in sorted(prosumers.items()) if p.role == INACTIVE)

    spec = market.get("partners", "complete")
    if spec != "complete":
        roles = {i: prosumers[i].role for i in prosumers}
        for pair in spec:
            i, j = int(pair[0]), int(pair[1])
            if i not in prosumers or j not in prosumers:
                problems.append(f"partner pair ({i}, {j}) references unknown prosumer")
                continue
            if INACTIVE in (roles[i], roles[j]):
                problems.append(f"partner pair ({i}, {j}) includes an inactive prosumer")
            elif roles[i] == roles[j]:
                problems.append(f"partner pair ({i}, {j}) is not buyer-seller")

    if problems:
        raise CaseValidationError("; ".join(problems))

    partners = _expand_partners(
        spec if spec == "complete" else [(int(a), int(b)) for a, b in spec],
        buyers,
        sellers,
        inactive,
    )

    children = {i: [] for i in buses}
    for bus in buses.values():
        if bus.parent is not None:
            children[bus.parent].append(bus.id)
    children = {i: tuple(sorted(c)) for i, c in children.items()}

    return GridCase(
        buses=buses,
        prosumers=prosumers,
        omega_b=omega_b,
        omega_s=omega_s,
        partners=partners,
        seed=int(doc.get("seed", 0)),
        children=children,
        source=origin,
    )


@dataclass
class ConstraintBlocks:
    """Per-agent constraint matrices over the agent's own variables.

    Coupled rows keep only the own-variable coefficients here; the foreign
    contributions (partner trades, parent voltage, child flows) arrive each
    round as an additive offset, so the row residual is A @ phi + foreign.
    """

    agent: int
    var_names: list
    partners: tuple
    A: np.ndarray
    a_rows: list  # (kind, counterparty) with kind in {"ee", "vv", "pp", "qq"}
    B: np.ndarray
    b: np.ndarray
    b_rows: list
    sigma_max_A: float | None
    sigma_min_A: float | None
    sigma_max_B: float | None
    sigma_min_pos_M: float | None

    @property
    def dim(self):
        return len(self.var_names)

    def e_index(self, j):
        return N_SCALAR_VARS + self.partners.index(j)


def build_constraint_blocks(case, i):
    """Assemble the equality/inequality blocks for one prosumer."""
    pro = case.prosumers[i]
    role = pro.role
    parts = case.partners.get(i, ())
    if role != INACTIVE and pro.p_desired != 0 and not parts:
        import warnings

        warnings.warn(f"agent {i} wants to trade but has no partners", stacklevel=2)

    dim = N_SCALAR_VARS + len(parts)
    var_names = ["p", "q", "P", "Q", "v"] + [f"e_{j}" for j in parts]
    r_pu, x_pu = case.line(i)

    a_rows = []
    rows = []
    for j in parts:
        row = np.zeros(dim)
        row[N_SCALAR_VARS + parts.index(j)] = 1.0
        rows.append(row)
        a_rows.append(("ee", j))
    row = np.zeros(dim)
    row[V_IDX] = -1.0
    row[PF_IDX] = -2.0 * r_pu
    row[QF_IDX] = -2.0 * x_pu
    rows.append(row)
    a_rows.append(("vv", case.parent_of(i)))
    row = np.zeros(dim)
    row[P_IDX] = -1.0
    row[PF_IDX] = -1.0
    rows.append(row)
    a_rows.append(("pp", None))
    row = np.zeros(dim)
    row[Q_IDX] = -1.0
    row[QF_IDX] = -1.0
    rows.append(row)
    a_rows.append(("qq", None))
    A = np.array(rows)

    bus = case.buses[i]
    b_rows = []
    brows = []
    bvals = []

    def box(idx, lo, hi, name):
        row = np.zeros(dim)
        row[idx] = -1.0
        brows.append(row)
        bvals.append(-lo)
        b_rows.append((f"{name}_lo", None))
        row = np.zeros(dim)
        row[idx] = 1.0
        brows.append(row)
        bvals.append(hi)
        b_rows.append((f"{name}_hi", None))

    box(P_IDX, pro.p_min, pro.p_max, "p")
    box(Q_IDX, pro.q_min, pro.q_max, "q")
    box(PF_IDX, bus.p_flow_min, bus.p_flow_max, "P")
    box(QF_IDX, bus.q_flow_min, bus.q_flow_max, "Q")
    box(V_IDX, bus.v_min, bus.v_max, "v")

    sign = 1.0 if role == BUYER else -1.0
    for j in parts:
        row = np.zeros(dim)
        row[N_SCALAR_VARS + parts.index(j)] = sign
        brows.append(row)
        bvals.append(0.0)
        b_rows.append(("e_sign", j))
    if role != INACTIVE and parts:
        row = np.zeros(dim)
        row[P_IDX] = sign
        for j in parts:
            row[N_SCALAR_VARS + parts.index(j)] = -sign
        brows.append(row)
        bvals.append(0.0)
        b_rows.append(("balance", None))

    B = np.array(brows)
    b = np.array(bvals)

    if A.shape[0]:
        svals = np.linalg.svd(A, compute_uv=False)
        sigma_max_A = float(svals.max())
        sigma_min_A = float(svals.min())
    else:
        sigma_max_A = sigma_min_A = None
    sigma_max_B = float(np.linalg.svd(B, compute_uv=False).max()) if B.shape[0] else None

    M = np.hstack([A.T, B.T]) if A.shape[0] else B.T
    msvals = np.linalg.svd(M, compute_uv=False)
    positive = msvals[msvals > 1e-10]
    sigma_min_pos_M = float(positive.min()) if positive.size else None

    return ConstraintBlocks(
        agent=i,
        var_names=var_names,
        partners=parts,
        A=A,
        a_rows=a_rows,
        B=B,
        b=b,
        b_rows=b_rows,
        sigma_max_A=sigma_max_A,
        sigma_min_A=sigma_min_A,
        sigma_max_B=sigma_max_B,
        sigma_min_pos_M=sigma_min_pos_M,
    )
