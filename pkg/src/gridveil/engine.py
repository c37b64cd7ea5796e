"""Synchronized-round market simulation across all clearing modes.

Agents advance in lockstep: every round fans out the exchange messages,
delivers them at a barrier, then applies the primal and dual updates.  The
incremental plaintext mode runs a second exchange for the fresh-residual
dual ascent; the non-incremental modes reuse the single blinded (or exact)
product for both the penalty term and the dual step.  All cross-agent reads
go through the message layer, and an optional transcript captures every
envelope for the privacy analysis.
"""

from __future__ import annotations

import hashlib
import json
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .grid import (
    INACTIVE,
    SELLER,
    N_SCALAR_VARS,
    P_IDX,
    PF_IDX,
    Q_IDX,
    QF_IDX,
    V_IDX,
    build_constraint_blocks,
    classify_agents,
    load_case,
)
from .paillier import decrypt_crt, default_codec, keygen
from .pdhg import (
    AgentState,
    StepParams,
    dual_update_global_incremental,
    dual_update_global_nonincremental,
    dual_update_local,
    feasible_range,
    grad_primal,
    kkt_residual,
    primal_update,
    role_price,
)
from .protocols import (
    MultiPartyGroup,
    SecureModeUnavailable,
    TwoPartySession,
    multiparty_mask,
    multiparty_offline,
    multiparty_unmask,
    negotiate_subrange,
    two_party_request,
    two_party_respond,
)

MODE_CENTRALIZED = "centralized"
MODE_P3 = "plaintext-p3"
MODE_P4 = "plaintext-p4"
MODE_SECURE = "secure"
ALL_MODES = (MODE_CENTRALIZED, MODE_P3, MODE_P4, MODE_SECURE)


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class RunConfig:
    case: object
    mode: str = MODE_P3
    key_bits: int = 128
    tau: int = 6
    max_iters: int = 20000
    tol: float = 1e-4
    seed: int = 0
    transcript: str | None = None
    trace_out: str | None = None
    p4_r: float | None = None  # fixed coefficient for the non-incremental modes
    subrange: tuple | None = None  # explicit coefficient sub-range override
    subrange_width_frac: tuple = (0.10, 0.12)
    divergence_window: int = 500
    divergence_factor: float = 10.0
    record_history: bool = False

    def __post_init__(self):
        if self.mode not in ALL_MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")


@dataclass
class RunResult:
    mode: str
    converged: bool
    iterations: int
    traded_energy: float
    gamma_p: float
    gamma_d: float
    objective: float
    kkt: dict
    wall_time_s: float
    states: dict
    blocks: dict
    case: object
    trace: list = field(default_factory=list)
    transcript_path: str | None = None
    keys: dict | None = None
    history: list | None = None
    feasible_ranges: dict | None = None

    def summary_dict(self):
        return {
            "mode": self.mode,
            "converged": self.converged,
            "iterations": self.iterations,
            "traded_energy": self.traded_energy,
            "gamma_p": self.gamma_p,
            "gamma_d": self.gamma_d,
            "objective": self.objective,
            "kkt_residuals": self.kkt,
            "wall_time_s": self.wall_time_s,
        }


def derive_rng(seed, *labels):
    """Independent deterministic stream keyed by the run seed and a label path."""
    digest = hashlib.sha256("|".join([str(seed)] + [str(x) for x in labels]).encode())
    return random.Random(int.from_bytes(digest.digest()[:8], "big"))


class Transcript:
    def __init__(self, path, header):
        self.path = Path(path)
        self._fh = self.path.open("w")
        self._write({"type": "header", **header})

    def _write(self, doc):
        self._fh.write(json.dumps(doc) + "\n")

    def message(self, round_no, phase, sender, recipient, kind, payload, tag=None):
        body = json.dumps(payload)
        self._write(
            {
                "type": "msg",
                "round": round_no,
                "phase": phase,
                "sender": sender,
                "recipient": recipient,
                "kind": kind,
                "tag": tag,
                "payload": payload,
                "bytes": len(body),
            }
        )

    def close(self):
        self._fh.close()


class Router:
    """Barrier-delivery message fabric with replay rejection."""

    def __init__(self, transcript=None):
        self.transcript = transcript
        self._seen = set()
        self.inboxes = {}
        self.round_no = -1
        self.phase = None

    def open_round(self, round_no, phase, agents):
        if round_no < self.round_no or (round_no == self.round_no and phase == self.phase):
            raise RuntimeError("rounds must advance monotonically")
        self.round_no = round_no
        self.phase = phase
        self.inboxes = {i: [] for i in agents}

    def send(self, sender, recipient, kind, payload, tag=None):
        key = (self.round_no, self.phase, sender, recipient, kind, tag)
        if key in self._seen:
            raise RuntimeError(f"replayed message {key}")
        self._seen.add(key)
        if recipient in self.inboxes:
            self.inboxes[recipient].append((sender, kind, tag, payload))
        if self.transcript is not None:
            json_tag = list(tag) if isinstance(tag, tuple) else tag
            self.transcript.message(
                self.round_no, self.phase, sender, recipient, kind, payload, tag=json_tag
            )


class MarketSimulation:
    """Drives one distributed run of a loaded case."""

    def __init__(self, case, config, params=None):
        self.case = case
        self.config = config
        self.params = params or StepParams()
        self.agents = case.agent_ids
        classify_agents(case)
        self.blocks = {i: build_constraint_blocks(case, i) for i in self.agents}
        self.states = {i: AgentState.zeros(self.blocks[i]) for i in self.agents}
        self.prices = {i: role_price(case, i) for i in self.agents}
        self.history = [] if config.record_history else None

        header = {
            "mode": config.mode,
            "tau": config.tau,
            "key_bits": config.key_bits,
            "seed": config.seed,
            "case": case.source,
            "omega_b": case.omega_b,
            "omega_s": case.omega_s,
            "settings": {
                "mu": self.params.mu,
                "xi_a": self.params.xi_a,
                "xi_b": self.params.xi_b,
                "eta": self.params.eta,
            },
        }
        self.transcript = Transcript(config.transcript, header) if config.transcript else None
        self.router = Router(self.transcript)

        self.keys = None
        self.codec = None
        self.sessions = {}
        self.pair_streams = {}
        self.solo_streams = {}
        self.groups = {}
        self.ranges = None
        if config.mode in (MODE_P4, MODE_SECURE):
            self._setup_noninc()
        if config.mode == MODE_SECURE:
            self._setup_crypto()

    # -- setup ----------------------------------------------------------

    def _agent_feasible_range(self, i):
        rho, delta = self.case.conservative_curvature()
        blk = self.blocks[i]
        return feasible_range(
            rho,
            delta,
            self.params.mu,
            self.params.xi_a,
            self.params.xi_b,
            self.params.eta,
            blk.sigma_max_A,
            blk.sigma_min_A,
            blk.sigma_max_B,
        )

    def _setup_noninc(self):
        cfg = self.config
        self.ranges = {i: self._agent_feasible_range(i) for i in self.agents}
        if any(r.empty for r in self.ranges.values()):
            bad = sorted(i for i, r in self.ranges.items() if r.empty)
            raise SecureModeUnavailable(f"empty feasible range for agents {bad}")
        for i in self.agents:
            blk = self.blocks[i]
            for kind, other in blk.a_rows:
                responder = None
                if kind == "ee":
                    responder = other
                elif kind == "vv" and other != 0:
                    responder = other
                elif kind in ("pp", "qq") and len(self.case.children.get(i, ())) == 1:
                    responder = self.case.children[i][0]
                if responder is None:
                    continue
                rng = derive_rng(cfg.seed, "subrange", i, responder, kind, other)
                sub = negotiate_subrange(
                    self.ranges[i], rng, cfg.subrange_width_frac, cfg.subrange
                )
                session = TwoPartySession(
                    requester=i, responder=responder, kind=kind, counterparty=other, subrange=sub
                )
                self.sessions[(i, kind, other)] = session
                if kind == "ee":
                    # Both directions of a trading pair blind with one shared
                    # per-round coefficient stream so their dual trajectories
                    # match; the draw lives in the intersected sub-ranges.
                    self.pair_streams.setdefault(
                        session.pair_key,
                        derive_rng(cfg.seed, "pair_r", *session.pair_key),
                    )
                else:
                    self.solo_streams[(i, kind, other)] = derive_rng(
                        cfg.seed, "solo_r", i, responder, kind, other
                    )

    def _pair_draw_interval(self, pair_key):
        _, a, b = pair_key
        sub_ab = self.sessions[(a, "ee", b)].subrange
        sub_ba = self.sessions[(b, "ee", a)].subrange
        lo, hi = max(sub_ab[0], sub_ba[0]), min(sub_ab[1], sub_ba[1])
        if lo >= hi:
            raise SecureModeUnavailable(f"pair {pair_key} negotiated disjoint sub-ranges")
        return lo, hi

    def _setup_crypto(self):
        cfg = self.config
        self.keys = {i: keygen(cfg.key_bits, derive_rng(cfg.seed, "key", i)) for i in self.agents}
        # The three-interval mapping lives in each key's own ring.
        self.codec_of = {i: default_codec(self.keys[i], cfg.tau) for i in self.agents}
        self.crypto_rng = {i: derive_rng(cfg.seed, "blind", i) for i in self.agents}

        self.router.open_round(-1, "offline", self.agents)
        for session in sorted(self.sessions.values(), key=lambda s: (s.kind, s.requester, s.responder)):
            lo, hi = session.subrange
            pk = self.keys[session.responder].public()
            rng = self.crypto_rng[session.requester]
            from .paillier import encrypt

            for bound, tag in ((lo, "lo"), (hi, "hi")):
                ct = encrypt(pk, self.codec_of[session.responder], bound, rng)
                self.router.send(
                    session.requester,
                    session.responder,
                    "ct_subrange",
                    ct.to_json_dict(),
                    tag=(session.kind, session.counterparty, tag),
                )

        for holder in self.agents:
            children = self.case.children.get(holder, ())
            if len(children) < 2:
                continue
            members = tuple(sorted((holder,) + children))
            for comp in ("P", "Q"):
                group = MultiPartyGroup(holder=holder, members=members, component=comp)
                multiparty_offline(
                    group,
                    self.keys,
                    self.codec_of,
                    lambda a, c=comp: derive_rng(cfg.seed, "mp_secret", holder, c, a),
                    send=lambda s, r, kind, ct, grp: self.router.send(
                        s, r, kind, ct.to_json_dict(), tag=(grp.holder, grp.component)
                    ),
                )
                self.groups[(holder, comp)] = group

    # -- per-round plumbing ---------------------------------------------

    def foreign_vector(self, i, phi_of):
        """Foreign contributions of each coupled row, from a state snapshot."""
        blk = self.blocks[i]
        out = np.zeros(blk.A.shape[0])
        for r, (kind, other) in enumerate(blk.a_rows):
            if kind == "ee":
                jblk = self.blocks[other]
                out[r] = phi_of[other][jblk.e_index(i)]
            elif kind == "vv":
                out[r] = self.case.root_voltage if other == 0 else phi_of[other][V_IDX]
            elif kind == "pp":
                out[r] = sum(phi_of[c][PF_IDX] for c in self.case.children.get(i, ()))
            else:
                out[r] = sum(phi_of[c][QF_IDX] for c in self.case.children.get(i, ()))
        return out

    def _phi_snapshot(self):
        return {i: self.states[i].phi.copy() for i in self.agents}

    def _plaintext_exchange(self, round_no, phase, snapshot):
        """Raw-value broadcast; returns the per-agent foreign vectors."""
        self.router.open_round(round_no, phase, self.agents)
        for i in self.agents:
            blk = self.blocks[i]
            phi = snapshot[i]
            parent = self.case.parent_of(i)
            self.router.send(i, parent, "flow_P", float(phi[PF_IDX]))
            self.router.send(i, parent, "flow_Q", float(phi[QF_IDX]))
            for child in self.case.children.get(i, ()):
                self.router.send(i, child, "voltage", float(phi[V_IDX]), tag=child)
            for j in blk.partners:
                self.router.send(i, j, "trade_e", float(phi[blk.e_index(j)]), tag=j)
        foreign = {}
        for i in self.agents:
            blk = self.blocks[i]
            got_e, got_v, got_p, got_q = {}, None, {}, {}
            for sender, kind, tag, payload in self.router.inboxes[i]:
                if kind == "trade_e":
                    got_e[sender] = payload
                elif kind == "voltage":
                    got_v = payload
                elif kind == "flow_P":
                    got_p[sender] = payload
                elif kind == "flow_Q":
                    got_q[sender] = payload
            vec = np.zeros(blk.A.shape[0])
            for r, (kind, other) in enumerate(blk.a_rows):
                if kind == "ee":
                    vec[r] = got_e[other]
                elif kind == "vv":
                    vec[r] = self.case.root_voltage if other == 0 else got_v
                elif kind == "pp":
                    vec[r] = sum(got_p.values())
                else:
                    vec[r] = sum(got_q.values())
            foreign[i] = vec
        return foreign

    def _draw_round_coefficients(self):
        """One draw per reciprocal pair plus one per solo session."""
        cfg = self.config
        rs = {}
        for pair_key in sorted(self.pair_streams):
            if cfg.p4_r is not None:
                rs[pair_key] = cfg.p4_r
            else:
                lo, hi = self._pair_draw_interval(pair_key)
                rs[pair_key] = self.pair_streams[pair_key].uniform(lo, hi)
        for skey in sorted(self.solo_streams):
            if cfg.p4_r is not None:
                rs[skey] = cfg.p4_r
            else:
                lo, hi = self.sessions[skey].subrange
                rs[skey] = self.solo_streams[skey].uniform(lo, hi)
        return rs

    def _noninc_products_plain(self, round_no, snapshot):
        """Plaintext non-incremental products y per agent row (r folded in)."""
        foreign = self._plaintext_exchange(round_no, "primal", snapshot)
        rs = self._draw_round_coefficients()
        y = {}
        for i in self.agents:
            blk = self.blocks[i]
            res = blk.A @ snapshot[i] + foreign[i]
            vec = res.copy()
            for r, (kind, other) in enumerate(blk.a_rows):
                skey = (i, kind, other)
                if kind == "ee":
                    vec[r] = rs[self.sessions[skey].pair_key] * res[r]
                elif skey in self.sessions:
                    vec[r] = rs[skey] * res[r]
            y[i] = vec
        return y

    def _noninc_products_secure(self, round_no, snapshot):
        """Secured products: masked sums for shared rows, ciphertexts elsewhere."""
        rs = self._draw_round_coefficients()
        scale = 10 ** self.config.tau

        self.router.open_round(round_no, "mask", self.agents)
        masked_in = {i: {"P": [], "Q": []} for i in self.agents}
        for (holder, comp), group in sorted(self.groups.items()):
            idx = PF_IDX if comp == "P" else QF_IDX
            for child in group.members:
                if child == holder:
                    continue
                scaled = round(snapshot[child][idx] * scale)
                mv = multiparty_mask(group, child, scaled)
                self.router.send(
                    child, holder, f"masked_{comp}", {"scaled": mv.payload, "tau": self.config.tau},
                    tag=(holder, comp),
                )
                masked_in[holder][comp].append(mv)
        sums = {}
        for (holder, comp), group in sorted(self.groups.items()):
            total = multiparty_unmask(group, masked_in[holder][comp])
            sums[(holder, comp)] = total / scale

        self.router.open_round(round_no, "request", self.agents)
        request_cts = {}
        for skey in sorted(self.sessions):
            i, kind, other = skey
            session = self.sessions[skey]
            blk = self.blocks[i]
            phi = snapshot[i]
            r_pu, x_pu = self.case.line(i)
            if kind == "ee":
                x_req = phi[blk.e_index(other)]
            elif kind == "vv":
                x_req = -phi[V_IDX] - 2.0 * (r_pu * phi[PF_IDX] + x_pu * phi[QF_IDX])
            elif kind == "pp":
                x_req = -phi[PF_IDX] - phi[P_IDX]
            else:
                x_req = -phi[QF_IDX] - phi[Q_IDX]
            ct = two_party_request(
                self.keys[i].public(), self.codec_of[i], x_req, self.crypto_rng[i]
            )
            request_cts[skey] = ct
            self.router.send(i, session.responder, "ct_request", ct.to_json_dict(), tag=(kind, other))

        self.router.open_round(round_no, "respond", self.agents)
        y_by_session = {}
        for skey in sorted(self.sessions):
            i, kind, other = skey
            session = self.sessions[skey]
            t = session.responder
            phi_t = snapshot[t]
            tblk = self.blocks[t]
            if kind == "ee":
                x_resp = phi_t[tblk.e_index(i)]
                r = rs[session.pair_key]
                draw_range = self._pair_draw_interval(session.pair_key)
            else:
                x_resp = phi_t[V_IDX] if kind == "vv" else phi_t[PF_IDX if kind == "pp" else QF_IDX]
                r = rs[skey]
                draw_range = session.subrange
            response = two_party_respond(
                self.keys[i].public(), self.codec_of[i], request_cts[skey], x_resp, r,
                draw_range, self.crypto_rng[t],
            )
            self.router.send(t, i, "ct_response", response.to_json_dict(), tag=(kind, other))
            y_by_session[skey] = decrypt_crt(self.keys[i], response, self.codec_of[i])

        y = {}
        for i in self.agents:
            blk = self.blocks[i]
            phi = snapshot[i]
            vec = np.zeros(blk.A.shape[0])
            children = self.case.children.get(i, ())
            r_pu, x_pu = self.case.line(i)
            for r, (kind, other) in enumerate(blk.a_rows):
                skey = (i, kind, other)
                if skey in self.sessions:
                    vec[r] = y_by_session[skey]
                elif kind == "vv":
                    vec[r] = self.case.root_voltage - phi[V_IDX] - 2.0 * (
                        r_pu * phi[PF_IDX] + x_pu * phi[QF_IDX]
                    )
                elif kind == "pp":
                    inflow = sums[(i, "P")] if (i, "P") in sums else 0.0
                    vec[r] = inflow - phi[PF_IDX] - phi[P_IDX]
                else:
                    inflow = sums[(i, "Q")] if (i, "Q") in sums else 0.0
                    vec[r] = inflow - phi[QF_IDX] - phi[Q_IDX]
            y[i] = vec
        return y

    # -- metrics ---------------------------------------------------------

    def stacked_primal_residual(self, phi_of):
        total = 0.0
        for i in self.agents:
            res = self.blocks[i].A @ phi_of[i] + self.foreign_vector(i, phi_of)
            total += float(res @ res)
        return float(np.sqrt(total))

    def traded_energy(self):
        total = 0.0
        for i in self.agents:
            if self.case.role(i) == SELLER:
                blk = self.blocks[i]
                total += float(np.sum(self.states[i].phi[N_SCALAR_VARS:]))
        return total

    def market_objective(self):
        from .pdhg import cost_value

        return sum(
            cost_value(self.case.prosumers[i], self.prices[i], self.states[i].phi)
            for i in self.agents
        )

    def kkt_report(self):
        snapshot = self._phi_snapshot()
        worst = {}
        for i in self.agents:
            groups = kkt_residual(
                self.blocks[i],
                self.case.prosumers[i],
                self.prices[i],
                self.states[i],
                self.foreign_vector(i, snapshot),
                self.params.eta,
            )
            for name, val in groups.items():
                worst[name] = max(worst.get(name, 0.0), val)
        return worst

    # -- main loop --------------------------------------------------------

    def run(self):
        cfg = self.config
        mode = cfg.mode
        t0 = time.perf_counter()
        trace = []
        gamma_p_hist = []
        converged = False
        iterations = 0

        for k in range(cfg.max_iters):
            snapshot = self._phi_snapshot()
            if self.history is not None:
                self.history.append(snapshot)
            gamma_p = self.stacked_primal_residual(snapshot)

            if mode == MODE_P3:
                foreign = self._plaintext_exchange(2 * k, "primal", snapshot)
                new_phi = {}
                for i in self.agents:
                    blk = self.blocks[i]
                    res = blk.A @ snapshot[i] + foreign[i]
                    grad = grad_primal(
                        blk, self.case.prosumers[i], self.prices[i], self.states[i],
                        self.params.eta * res,
                    )
                    new_phi[i] = primal_update(self.states[i], grad, self.params.mu)
                fresh = self._plaintext_exchange(2 * k + 1, "dual", new_phi)
                for i in self.agents:
                    blk = self.blocks[i]
                    state = self.states[i]
                    res_fresh = blk.A @ new_phi[i] + fresh[i]
                    state.lam_a = dual_update_global_incremental(state, res_fresh, self.params.xi_a)
                    state.lam_b = dual_update_local(state, blk, new_phi[i], self.params.xi_b)
                    state.phi = new_phi[i]
            else:
                if mode == MODE_P4:
                    y = self._noninc_products_plain(k, snapshot)
                else:
                    y = self._noninc_products_secure(k, snapshot)
                for i in self.agents:
                    blk = self.blocks[i]
                    state = self.states[i]
                    grad = grad_primal(
                        blk, self.case.prosumers[i], self.prices[i], state,
                        self.params.eta * y[i],
                    )
                    new_phi = primal_update(state, grad, self.params.mu)
                    state.lam_a = dual_update_global_nonincremental(state, y[i], self.params.xi_a)
                    state.lam_b = dual_update_local(state, blk, new_phi, self.params.xi_b)
                    state.phi = new_phi

            gamma_d = float(
                np.sqrt(
                    sum(
                        float(np.sum((self.states[i].phi - snapshot[i]) ** 2))
                        for i in self.agents
                    )
                )
            )
            iterations = k + 1
            traded = self.traded_energy()
            trace.append((k, gamma_p, gamma_d, traded, (time.perf_counter() - t0) * 1e6))
            gamma_p_hist.append(gamma_p)

            if gamma_p < cfg.tol and gamma_d < cfg.tol:
                converged = True
                break
            w = cfg.divergence_window
            if (
                k >= w
                and gamma_p_hist[k] > cfg.divergence_factor * gamma_p_hist[k - w]
                and gamma_p_hist[k] > 100 * cfg.tol
            ):
                raise DivergenceError(
                    f"primal residual grew from {gamma_p_hist[k - w]:.3e} to {gamma_p_hist[k]:.3e}"
                )

        if self.transcript is not None:
            self.transcript.close()
        if cfg.trace_out:
            with open(cfg.trace_out, "w") as fh:
                fh.write("k,gamma_p,gamma_d,traded_energy,wall_us\n")
                for row in trace:
                    fh.write(",".join(str(x) for x in row) + "\n")

        final_snapshot = self._phi_snapshot()
        return RunResult(
            mode=mode,
            converged=converged,
            iterations=iterations,
            traded_energy=self.traded_energy(),
            gamma_p=trace[-1][1] if trace else 0.0,
            gamma_d=trace[-1][2] if trace else 0.0,
            objective=self.market_objective(),
            kkt=self.kkt_report(),
            wall_time_s=time.perf_counter() - t0,
            states=self.states,
            blocks=self.blocks,
            case=self.case,
            trace=trace,
            transcript_path=cfg.transcript,
            keys=self.keys,
            history=self.history,
            feasible_ranges=self.ranges,
        )


def run_market(config, params=None):
    """Load the case and clear the market in the configured mode."""
    case = config.case if hasattr(config.case, "agent_ids") else load_case(config.case)
    if config.mode == MODE_CENTRALIZED:
        from .central import solve_centralized

        t0 = time.perf_counter()
        blocks = {i: build_constraint_blocks(case, i) for i in case.agent_ids}
        sol = solve_centralized(case, blocks)
        sim = MarketSimulation(case, RunConfig(case=case, mode=MODE_P3), params=params)
        sim.states = sol.states
        kkt = sim.kkt_report()
        return RunResult(
            mode=MODE_CENTRALIZED,
            converged=True,
            iterations=0,
            traded_energy=sol.traded_energy,
            gamma_p=0.0,
            gamma_d=0.0,
            objective=sol.objective,
            kkt=kkt,
            wall_time_s=time.perf_counter() - t0,
            states=sol.states,
            blocks=blocks,
            case=case,
        )
    sim = MarketSimulation(case, config, params=params)
    return sim.run()
