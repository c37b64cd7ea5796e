"""Construction of bundled and randomly grown feeder cases.

Parameter draws follow the published prosumer ranges (buyer alpha in
[0.01, 0.1] cents/kWh^2 and beta in [1.0, 3.0] cents/kWh, seller alpha in
[0.02, 0.1] and beta in [0.1, 0.8], discomfort weight in [2.5, 3.5]); the
seed is recorded inside the case file so every run is reproducible.
Reactive demand is pinned (q_min == q_max), which keeps the market optimum
unique, and network bounds are generous enough that voltage and flow boxes
stay slack at the optimum.
"""

from __future__ import annotations

import json
import random
from importlib import resources
from pathlib import Path

OMEGA_B = 3.0
OMEGA_S = 1.0
V_ROOT = 1.05
V_BAND = (0.81, 1.21)
FLOW_BAND = (-500.0, 500.0)


def bundled_case_path(name):
    """Filesystem path of a case shipped with the package (3bus, 15bus)."""
    return Path(resources.files("gridveil.cases") / f"{name}.json")


def _utility_bus():
    return {
        "id": 0,
        "parent": None,
        "r_pu": 0.0,
        "x_pu": 0.0,
        "v_min": V_ROOT,
        "v_max": V_ROOT,
        "p_flow_min": 0.0,
        "p_flow_max": 0.0,
        "q_flow_min": 0.0,
        "q_flow_max": 0.0,
    }


def _bus(bus_id, parent, rng):
    # Impedances are scaled to the kW flow convention so feeder-head flows of
    # a few hundred kW produce squared-voltage drops well inside the band.
    return {
        "id": bus_id,
        "parent": parent,
        "r_pu": round(rng.uniform(2e-5, 1e-4), 9),
        "x_pu": round(rng.uniform(2e-5, 1e-4), 9),
        "v_min": V_BAND[0],
        "v_max": V_BAND[1],
        "p_flow_min": FLOW_BAND[0],
        "p_flow_max": FLOW_BAND[1],
        "q_flow_min": FLOW_BAND[0],
        "q_flow_max": FLOW_BAND[1],
    }


def _prosumer(bus_id, role, rng):
    q_fixed = round(rng.uniform(-2.0, 2.0), 4)
    if role == "buyer":
        alpha = rng.uniform(0.01, 0.1)
        beta = rng.uniform(1.0, 3.0)
        p_desired = -round(rng.uniform(25.0, 60.0), 4)
        p_min, p_max = -150.0, 0.0
    else:
        alpha = rng.uniform(0.02, 0.1)
        beta = rng.uniform(0.1, 0.8)
        p_desired = round(rng.uniform(25.0, 60.0), 4)
        p_min, p_max = 0.0, 150.0
    return {
        "bus": bus_id,
        "alpha": round(alpha, 6),
        "beta": round(beta, 6),
        "epsilon": round(rng.uniform(2.5, 3.5), 6),
        "p_desired": p_desired,
        "p_min": p_min,
        "p_max": p_max,
        "q_min": q_fixed,
        "q_max": q_fixed,
    }


def make_three_bus_case(seed=20240301):
    """Single feeder 0-1-2 with one seller feeding one buyer."""
    rng = random.Random(seed)
    buses = [_utility_bus(), _bus(1, 0, rng), _bus(2, 1, rng)]
    prosumers = [_prosumer(1, "seller", rng), _prosumer(2, "buyer", rng)]
    return {
        "buses": buses,
        "prosumers": prosumers,
        "market": {"omega_b": OMEGA_B, "omega_s": OMEGA_S, "partners": [[2, 1]]},
        "seed": seed,
    }


# Feeder shape for the 15-prosumer case: node 3 sits under seller 2 and has
# the three children {4, 6, 8}, so its flow-balance rows exercise the
# multi-party path while leaf lines stay two-party.
FIFTEEN_BUS_PARENTS = {
    1: 0, 2: 1, 3: 2, 4: 3, 5: 4, 6: 3, 7: 6, 8: 3, 9: 8,
    10: 2, 11: 10, 12: 11, 13: 12, 14: 1, 15: 14,
}
FIFTEEN_BUS_SELLERS = (2, 3, 4, 7, 8, 12, 14)
FIFTEEN_BUS_PAIRS = [
    [1, 7], [1, 2], [6, 3], [6, 7], [5, 4], [5, 14], [9, 8], [9, 3],
    [10, 2], [11, 12], [13, 12], [15, 14],
]


def make_fifteen_bus_case(seed=20240315):
    rng = random.Random(seed)
    buses = [_utility_bus()]
    prosumers = []
    for bus_id in sorted(FIFTEEN_BUS_PARENTS):
        buses.append(_bus(bus_id, FIFTEEN_BUS_PARENTS[bus_id], rng))
        role = "seller" if bus_id in FIFTEEN_BUS_SELLERS else "buyer"
        prosumers.append(_prosumer(bus_id, role, rng))
    return {
        "buses": buses,
        "prosumers": prosumers,
        "market": {
            "omega_b": OMEGA_B,
            "omega_s": OMEGA_S,
            "partners": FIFTEEN_BUS_PAIRS,
        },
        "seed": seed,
    }


def make_tree_case(n_buses, seed, max_span=6):
    """Random tree with n_buses prosumers, half-and-half buyers and sellers."""
    rng = random.Random(seed)
    buses = [_utility_bus()]
    roles = {}
    for bus_id in range(1, n_buses + 1):
        parent = 0 if bus_id == 1 else rng.randint(max(0, bus_id - max_span), bus_id - 1)
        buses.append(_bus(bus_id, parent, rng))
        roles[bus_id] = "seller" if rng.random() < 0.5 else "buyer"
    if "seller" not in roles.values():
        roles[1] = "seller"
    if "buyer" not in roles.values():
        roles[n_buses] = "buyer"
    prosumers = [_prosumer(b, roles[b], rng) for b in sorted(roles)]

    sellers = [b for b in sorted(roles) if roles[b] == "seller"]
    buyers = [b for b in sorted(roles) if roles[b] == "buyer"]
    pairs = []
    for k, b in enumerate(buyers):
        pairs.append([b, sellers[k % len(sellers)]])
        if rng.random() < 0.4:
            pairs.append([b, sellers[(k + 1) % len(sellers)]])
    pairs = [list(t) for t in dict.fromkeys(tuple(p) for p in pairs)]
    return {
        "buses": buses,
        "prosumers": prosumers,
        "market": {"omega_b": OMEGA_B, "omega_s": OMEGA_S, "partners": pairs},
        "seed": seed,
    }


SCALING_SIZES = (15, 34, 69, 94, 141)


def write_scaling_cases(out_dir, sizes=SCALING_SIZES, base_seed=77000):
    """Materialize the generated tree cases used by the scaling benchmark."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for size in sizes:
        if size == 15:
            doc = make_fifteen_bus_case()
        else:
            doc = make_tree_case(size, seed=base_seed + size)
        path = out / f"tree{size}.json"
        path.write_text(json.dumps(doc, indent=1))
        written.append(path)
    return written
