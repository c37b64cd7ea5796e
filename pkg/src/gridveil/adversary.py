"""Honest-but-curious inference attacks against market transcripts.

Against plaintext exchanges the wiretap recovers private injections from the
shared flows and utility-curve parameters from a two-iteration trade
trajectory.  Against the secured exchanges the same equations become an
underdetermined system, which is certified here by an explicit rank check
plus a least-squares recovery attempt.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .paillier import Ciphertext, decrypt_crt, default_codec


@dataclass
class Underdetermined:
    """Marker: the transcript does not pin the requested quantity."""

    reason: str


@dataclass
class Inconclusive:
    reason: str


@dataclass
class AttackTranscript:
    """Wiretap view: every message envelope plus the public run settings."""

    mode: str
    tau: int
    key_bits: int
    omega_b: float
    omega_s: float
    settings: dict
    messages: list = field(default_factory=list)

    @classmethod
    def load(cls, path):
        header = None
        messages = []
        with Path(path).open() as fh:
            for line in fh:
                doc = json.loads(line)
                if doc["type"] == "header":
                    header = doc
                elif doc["type"] == "msg":
                    messages.append(doc)
        if header is None:
            raise ValueError(f"{path}: transcript has no header")
        return cls(
            mode=header["mode"],
            tau=header["tau"],
            key_bits=header["key_bits"],
            omega_b=header["omega_b"],
            omega_s=header["omega_s"],
            settings=header["settings"],
            messages=messages,
        )

    def stream(self, kind, sender=None, recipient=None, phase="primal", tag=None):
        """Payloads of matching messages ordered by round."""
        picked = [
            m
            for m in self.messages
            if m["kind"] == kind
            and (sender is None or m["sender"] == sender)
            and (recipient is None or m["recipient"] == recipient)
            and (phase is None or m["phase"] == phase)
            and (tag is None or m.get("tag") == tag)
        ]
        picked.sort(key=lambda m: m["round"])
        return [(m["round"], m["payload"]) for m in picked]

    def value_at(self, kind, sender, recipient, round_no, phase="primal"):
        for rnd, payload in self.stream(kind, sender, recipient, phase):
            if rnd == round_no:
                return payload
        raise KeyError(f"no {kind} {sender}->{recipient} at round {round_no}")

    def children_of(self, agent):
        return sorted(
            {m["sender"] for m in self.messages if m["kind"] == "flow_P" and m["recipient"] == agent}
        )

    def partners_of(self, agent):
        return sorted(
            {m["recipient"] for m in self.messages if m["kind"] == "trade_e" and m["sender"] == agent}
        )


def infer_injections(tr, agent, round_no):
    """Recover (p, q) of an agent from the flows its neighbourhood shared."""
    if tr.mode == "secure":
        return Underdetermined("flows travel masked or encrypted; balance rows are unsatisfiable")
    children = tr.children_of(agent)
    p_in = sum(tr.value_at("flow_P", c, agent, round_no) for c in children)
    q_in = sum(tr.value_at("flow_Q", c, agent, round_no) for c in children)
    parent_candidates = {
        m["recipient"] for m in tr.messages if m["kind"] == "flow_P" and m["sender"] == agent
    }
    parent = sorted(parent_candidates)[0]
    p_own = tr.value_at("flow_P", agent, parent, round_no)
    q_own = tr.value_at("flow_Q", agent, parent, round_no)
    return p_in - p_own, q_in - q_own


def infer_utility_params(tr, buyer, partner=None):
    """Two-iteration inversion of a buyer's trade updates.

    Works on a zero-initialized plaintext trajectory with uniform public
    step sizes.  The first-round local duals are reconstructed with their
    projection applied; the balance-row dual is zero then because a buyer's
    preferred-demand pull leaves that row slack on the first step.
    """
    if tr.mode == "secure":
        return Underdetermined("trade values never appear in the clear")
    mu = tr.settings["mu"]
    xi_a = tr.settings["xi_a"]
    xi_b = tr.settings["xi_b"]
    eta = tr.settings["eta"]
    if partner is None:
        partner = tr.partners_of(buyer)[0]

    e1 = tr.value_at("trade_e", buyer, partner, 1)
    e2 = tr.value_at("trade_e", buyer, partner, 2)
    e_back1 = tr.value_at("trade_e", partner, buyer, 1)
    if abs(e1) < 1e-12:
        return Inconclusive("first-iteration trade is zero; inversion divides by it")

    beta_hat = -e1 / mu - tr.omega_b
    s1 = e1 + e_back1
    lam_sign1 = max(0.0, xi_b * e1)
    lam_balance1 = 0.0
    if tr.mode == "plaintext-p3":
        lam_pair1 = xi_a * s1
    else:  # non-incremental: the pair dual still holds its zero initialization
        lam_pair1 = 0.0
    alpha_hat = (
        (e1 - e2) / mu - beta_hat - tr.omega_b - lam_sign1 + lam_balance1 - lam_pair1 - eta * s1
    ) / (2.0 * e1)
    return {"alpha": alpha_hat, "beta": beta_hat, "partner": partner}


@dataclass
class SecuredAttackReport:
    equations: int
    unknowns: int
    rank: int
    rank_deficient: bool
    recovered: list
    recovery_error: float | None
    tail_relation: list


def _decrypt_stream(tr, key, kind, agent_field, agent, tag):
    codec = default_codec(key, tr.tau)
    out = []
    for m in tr.messages:
        if m["kind"] != kind or m.get("tag") != tag or m[agent_field] != agent:
            continue
        ct = Ciphertext.from_json_dict(m["payload"])
        out.append((m["round"], decrypt_crt(key, ct, codec)))
    out.sort()
    return out


def attack_secured(tr, viewpoint, key, row_tag, true_stream=None, tail_tol=1e-9):
    """Requester-side attack on one blinded-sum session.

    The curious requester holds its key, so it can read back its own
    operands and the blinded products.  Each round contributes one equation
    y_k = r_k * x_own_k + (r_k * x_other_k) in the two unknowns
    (r_k, r_k * x_other_k), so the system stays rank-deficient however long
    the wiretap runs; the minimum-norm least-squares recovery quantifies how
    far the best guess lands from the truth.  At rounds where the product
    vanished, the converged relation x_other = -x_own is disclosed.
    """
    row_tag = list(row_tag) if isinstance(row_tag, (list, tuple)) else row_tag
    x_own = _decrypt_stream(tr, key, "ct_request", "sender", viewpoint, row_tag)
    y = _decrypt_stream(tr, key, "ct_response", "recipient", viewpoint, row_tag)
    rounds = sorted(set(r for r, _ in x_own) & set(r for r, _ in y))
    x_map, y_map = dict(x_own), dict(y)
    k_count = len(rounds)

    # Linear system in (r_k, w_k = r_k * x_other_k).
    mat = np.zeros((k_count, 2 * k_count))
    rhs = np.zeros(k_count)
    for idx, rnd in enumerate(rounds):
        mat[idx, idx] = x_map[rnd]
        mat[idx, k_count + idx] = 1.0
        rhs[idx] = y_map[rnd]
    rank = int(np.linalg.matrix_rank(mat)) if k_count else 0
    sol, *_ = np.linalg.lstsq(mat, rhs, rcond=None)

    recovered = []
    for idx, rnd in enumerate(rounds):
        r_hat = sol[idx]
        w_hat = sol[k_count + idx]
        recovered.append((rnd, w_hat / r_hat if abs(r_hat) > 1e-12 else 0.0))

    recovery_error = None
    if true_stream is not None:
        truth = dict(true_stream)
        errs = [abs(val - truth[rnd]) for rnd, val in recovered if rnd in truth]
        recovery_error = float(np.mean(errs)) if errs else None

    tail = [
        (rnd, -x_map[rnd]) for rnd in rounds if abs(y_map[rnd]) <= tail_tol
    ]
    return SecuredAttackReport(
        equations=k_count,
        unknowns=2 * k_count,
        rank=rank,
        rank_deficient=rank < 2 * k_count,
        recovered=recovered,
        recovery_error=recovery_error,
        tail_relation=tail,
    )


def masked_stream_offsets(tr, holder, component, true_of):
    """Best recovery of a masked child stream is off by the unknown secret.

    Returns per-child pairs (observed - true) across rounds: constant and
    equal to the child's secret, which one extra unknown keeps unresolvable.
    """
    offsets = {}
    scale = 10 ** tr.tau
    for m in tr.messages:
        if m["kind"] != f"masked_{component}" or m["recipient"] != holder:
            continue
        child = m["sender"]
        observed = m["payload"]["scaled"] / scale
        truth = true_of(child, m["round"])
        offsets.setdefault(child, []).append(observed - truth)
    return offsets


def attack_report(tr, case=None, targets=None):
    """CLI-facing summary: inferred vs true parameters plus rank analysis."""
    report = {"mode": tr.mode, "inferred_params": [], "true_params": [], "relative_errors": []}
    if tr.mode == "secure":
        report["rank_analysis"] = (
            "blinded two-party streams give D(K+1) equations in (D+1)(K+1) unknowns; "
            "masked multi-party streams carry one extra unknown per child"
        )
        report["note"] = "no plaintext values on any channel; parameter inversion unavailable"
        return report
    buyers = []
    if case is not None:
        buyers = [i for i in case.agent_ids if case.role(i) == "buyer"]
    for buyer in targets if targets is not None else buyers:
        got = infer_utility_params(tr, buyer)
        if not isinstance(got, dict):
            continue
        entry = {"agent": buyer, "alpha": got["alpha"], "beta": got["beta"]}
        report["inferred_params"].append(entry)
        if case is not None:
            pro = case.prosumers[buyer]
            report["true_params"].append({"agent": buyer, "alpha": pro.alpha, "beta": pro.beta})
            report["relative_errors"].append(
                {
                    "agent": buyer,
                    "alpha": abs(got["alpha"] - pro.alpha) / abs(pro.alpha),
                    "beta": abs(got["beta"] - pro.beta) / abs(pro.beta),
                }
            )
    report["rank_analysis"] = "plaintext channels: balance and update equations fully determined"
    return report
