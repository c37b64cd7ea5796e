"""Secure two-party and multi-party exchange mechanisms.

Two-party: the requester ships an encryption of its own operand, the
responder folds in its operand homomorphically and multiplies by a random
coefficient drawn from a sub-interval of the requester's admissible range,
and only the blinded sum ever returns.  Multi-party: an offline phase
distributes polynomial shares of per-agent secrets (each share travelling
inside a ciphertext under the recipient's key) so that the holder learns
exactly one number, the sum of all secrets; afterwards every online round
costs one addition per shared scalar.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import sharing
from .paillier import (
    decrypt_crt,
    decrypt_crt_scaled,
    encrypt,
    encrypt_scaled,
    hom_add,
    hom_scalar_mul,
)


class SecureModeUnavailable(RuntimeError):
    """No admissible coefficient interval: the secured run cannot start."""


class ProtocolFault(RuntimeError):
    """A participant broke the session contract (range, round, membership)."""


MIN_SUBRANGE_FRACTION = 0.10


def negotiate_subrange(full, rng, width_frac=(0.10, 0.12), explicit=None):
    """Pick the sub-interval of the feasible range shared with responders.

    The width is drawn at random (at least a tenth of the full width); the
    center is deterministic, preferring the neutral coefficient 1.0, so that
    every session on a reciprocal pair ends up with the same sub-interval
    and the pair's dual trajectories stay synchronized.
    """
    if full.empty:
        raise SecureModeUnavailable("feasible range is empty")
    lo, hi = full.r_lo, full.r_hi
    span = hi - lo
    if explicit is not None:
        sub_lo, sub_hi = explicit
        if sub_lo < lo - 1e-12 or sub_hi > hi + 1e-12 or sub_lo >= sub_hi:
            raise ProtocolFault(f"sub-range {explicit} escapes the feasible range [{lo}, {hi}]")
        if (sub_hi - sub_lo) < MIN_SUBRANGE_FRACTION * span - 1e-12:
            raise ProtocolFault("sub-range narrower than a tenth of the feasible width")
        return float(sub_lo), float(sub_hi)
    frac = rng.uniform(max(width_frac[0], MIN_SUBRANGE_FRACTION), max(width_frac[1], MIN_SUBRANGE_FRACTION))
    width = span * frac
    floor = lo if lo > 0 else lo + 1e-6 * span
    center = 1.0 if floor + width / 2 <= 1.0 <= hi - width / 2 else 0.5 * (floor + hi)
    center = min(max(center, floor + width / 2), hi - width / 2)
    return center - width / 2, center + width / 2


@dataclass(frozen=True)
class TwoPartySession:
    """One directed blinded-sum channel tied to a single coupled row."""

    requester: int
    responder: int
    kind: str  # "ee", "vv", "pp", "qq"
    counterparty: int | None
    subrange: tuple

    @property
    def pair_key(self):
        a, b = sorted((self.requester, self.responder))
        return (self.kind, a, b)


def two_party_request(pk, codec, x_req, rng):
    return encrypt(pk, codec, x_req, rng)


def two_party_respond(pk, codec, request_ct, x_resp, r, subrange, rng):
    """Homomorphic sum of both operands, scaled by the drawn coefficient."""
    if not subrange[0] - 1e-12 <= r <= subrange[1] + 1e-12:
        raise ProtocolFault(f"coefficient {r} escapes the agreed sub-range {subrange}")
    summed = hom_add(request_ct, encrypt(pk, codec, x_resp, rng), pk.n)
    return hom_scalar_mul(summed, r, codec, pk.n)


def two_party_decrypt(sk, codec, response_ct):
    return decrypt_crt(sk, response_ct, codec)


def two_party_exchange(req_key, codec, x_req, x_resp, r, rng, subrange=None):
    """Run one full request/respond/decrypt cycle, returning r * (x_req + x_resp)."""
    if subrange is None:
        subrange = (r, r)
    ct = two_party_request(req_key.public(), codec, x_req, rng)
    response = two_party_respond(req_key.public(), codec, ct, x_resp, r, subrange, rng)
    return two_party_decrypt(req_key, codec, response)


@dataclass
class MultiPartyGroup:
    """Holder plus its child agents; the holder reconstructs the secret sum."""

    holder: int
    members: tuple  # sorted, includes the holder
    component: str  # which shared scalar this instance protects
    eval_points: tuple = ()
    secrets: dict = field(default_factory=dict)
    omega: int | None = None
    offline_done: bool = False

    def __post_init__(self):
        if self.holder not in self.members:
            raise ProtocolFault("holder must belong to the group")
        if len(self.members) < 2:
            raise ProtocolFault("multi-party group needs at least two members")
        if not self.eval_points:
            self.eval_points = tuple(range(1, len(self.members) + 1))

    @property
    def m(self):
        return len(self.members)

    def point_of(self, agent):
        return self.eval_points[self.members.index(agent)]


def multiparty_offline(group, keys, codec_of, rng_of, send=None):
    """Offline phase: share distribution and reconstruction of the secret sum.

    Every share and every share-sum travels only inside a ciphertext under
    the recipient's public key (and its ring's codec); `send` (if given)
    sees one call per message so the harness can log the envelope.  After
    this, the group carries one secret per member and the holder's omega.
    """
    members = group.members
    if not isinstance(codec_of, dict):
        codec_of = {agent: codec_of for agent in members}
    scale = codec_of[group.holder].scale
    bundles = {}
    for agent in members:
        bundles[agent] = sharing.ShareBundle.create(
            agent, members, group.eval_points, rng_of(agent), scale
        )
    # Shares move under the recipient's key; own share stays local.
    for sender in members:
        bundle = bundles[sender]
        for recipient in members:
            if recipient == sender:
                bundles[recipient].received[sender] = bundle.outgoing[recipient]
                continue
            codec = codec_of[recipient]
            ct = encrypt_scaled(keys[recipient].public(), codec, bundle.outgoing[recipient], rng_of(sender))
            if send is not None:
                send(sender, recipient, "ct_share", ct, group)
            plain = decrypt_crt_scaled(keys[recipient], ct, codec)
            if plain != bundle.outgoing[recipient]:
                raise ProtocolFault("share corrupted in transit")
            bundles[recipient].received[sender] = plain
    sums = {}
    for agent in members:
        sums[agent] = bundles[agent].accumulate(group.m)
    holder_codec = codec_of[group.holder]
    holder_points = []
    for agent in members:
        if agent == group.holder:
            holder_points.append((group.point_of(agent), sums[agent]))
            continue
        ct = encrypt_scaled(keys[group.holder].public(), holder_codec, sums[agent], rng_of(agent))
        if send is not None:
            send(agent, group.holder, "ct_share_sum", ct, group)
        holder_points.append(
            (group.point_of(agent), decrypt_crt_scaled(keys[group.holder], ct, holder_codec))
        )
    group.secrets = {agent: bundles[agent].secret for agent in members}
    group.omega = sharing.reconstruct_omega(holder_points)
    if group.omega != sum(group.secrets.values()):
        raise ProtocolFault("omega does not match the secret sum")
    group.offline_done = True
    return group


def multiparty_mask(group, agent, value_scaled):
    if not group.offline_done:
        raise ProtocolFault("offline phase incomplete")
    if agent == group.holder or agent not in group.members:
        raise ProtocolFault(f"agent {agent} does not mask in this group")
    return sharing.mask(value_scaled, group.secrets[agent], agent_id=agent)


def multiparty_unmask(group, masked_values):
    """Holder-side recovery of the exact sum of the children's values."""
    if not group.offline_done:
        raise ProtocolFault("offline phase incomplete")
    expected = set(group.members) - {group.holder}
    got = {mv.agent_id for mv in masked_values}
    if got != expected:
        raise ProtocolFault(f"masked values from {sorted(got)}, expected {sorted(expected)}")
    return sharing.unmask_sum(masked_values, group.secrets[group.holder], group.omega)


def deviation_check(eta, eta_prime, coeffs, child_flows, own_flow, own_injection):
    """Gradient deviation when per-child blinding is forced onto a shared row.

    Splitting the holder's own terms evenly across children, each child k
    contributes (eta - eta_prime * r_k) * (flow_k + (-own_flow - own_injection) / m);
    the deviation vanishes only when every coefficient equals eta / eta_prime,
    which is why rows with several children use masking instead of blinding.
    """
    if len(coeffs) != len(child_flows):
        raise ValueError("one coefficient per child flow required")
    m = len(child_flows)
    shared = (-own_flow - own_injection) / m
    return sum(
        (eta - eta_prime * r_k) * (flow_k + shared)
        for r_k, flow_k in zip(coeffs, child_flows)
    )
