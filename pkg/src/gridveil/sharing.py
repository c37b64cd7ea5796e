"""Additive-masking secret sharing with an offline distribution phase.

Everything here runs on scaled integers (fixed-point, 10^tau per unit), so
share sums and the masking identity are exact: no floating-point error can
leak into the unmasked totals.  Reconstruction interpolates the summed
polynomial at zero with rational arithmetic.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

SECRET_RANGE_UNITS = 10 ** 6  # secrets and coefficients drawn from [-1e6, 1e6]


class SharingError(Exception):
    """Base class for secret-sharing failures."""


class ConfigurationError(SharingError):
    """Bad group setup: duplicate evaluation points, too few participants."""


class ProtocolIncompleteError(SharingError):
    """A participant's contribution is missing."""


class InterpolationError(SharingError):
    """Reconstruction attempted with coincident evaluation points."""


def draw_secret(rng, scale):
    return rng.randrange(-SECRET_RANGE_UNITS * scale, SECRET_RANGE_UNITS * scale + 1)


def split_secret(secret, m, eval_points, rng=None, coeffs=None):
    """Split a scaled-integer secret into len(eval_points) polynomial shares.

    The polynomial has degree m - 1 with the secret as constant term, so any
    m shares determine it and any fewer leave it free.  Coefficients are
    drawn from rng unless given explicitly (tests inject them).
    """
    if m < 2:
        raise ConfigurationError("need at least two participants")
    if len(eval_points) < m:
        raise ConfigurationError("need at least m evaluation points")
    if len(set(eval_points)) != len(eval_points) or any(z <= 0 for z in eval_points):
        raise ConfigurationError(f"evaluation points must be distinct positive: {eval_points}")
    if coeffs is None:
        scale = 1 if rng is None else getattr(rng, "_share_scale", 1)
        coeffs = [draw_secret(rng, scale) for _ in range(m - 1)]
    if len(coeffs) != m - 1:
        raise ConfigurationError(f"expected {m - 1} coefficients, got {len(coeffs)}")
    shares = []
    for z in eval_points:
        acc = secret
        zp = 1
        for c in coeffs:
            zp *= z
            acc += c * zp
        shares.append(acc)
    return shares


def sum_received_shares(shares, expected_count):
    """Sum the shares evaluated at this participant's point (own one included)."""
    if len(shares) != expected_count:
        raise ProtocolIncompleteError(
            f"have {len(shares)} shares, expected {expected_count}"
        )
    return sum(shares)


def reconstruct_omega(points):
    """Interpolate the summed share polynomial at zero: exactly sum of secrets."""
    zs = [z for z, _ in points]
    if len(set(zs)) != len(zs):
        raise InterpolationError(f"coincident evaluation points: {zs}")
    total = Fraction(0)
    for j, (zj, pj) in enumerate(points):
        weight = Fraction(1)
        for h, (zh, _) in enumerate(points):
            if h != j:
                weight *= Fraction(zh, zh - zj)
        total += pj * weight
    if total.denominator != 1:
        raise InterpolationError("interpolation did not resolve to an integer")
    return int(total)


@dataclass(frozen=True)
class MaskedValue:
    """One agent's state component shifted by its secret."""

    agent_id: int
    payload: int


def mask(value, secret, agent_id=0):
    return MaskedValue(agent_id=agent_id, payload=value + secret)


def unmask_sum(masked, own_secret, omega):
    """Recover the exact sum of the children's true values.

    sum_j (value_j + R_j) + R_holder - Omega cancels every secret because
    Omega is the sum of all participants' secrets, holder included.
    """
    seen = set()
    for mv in masked:
        if mv.agent_id in seen:
            raise ProtocolIncompleteError(f"duplicate masked value from {mv.agent_id}")
        seen.add(mv.agent_id)
    return sum(mv.payload for mv in masked) + own_secret - omega


@dataclass
class ShareBundle:
    """One participant's view of an offline share-distribution round."""

    agent_id: int
    secret: int
    coeffs: list
    eval_points: list
    outgoing: dict = field(default_factory=dict)  # recipient id -> share value
    received: dict = field(default_factory=dict)  # sender id -> share value
    share_sum: int | None = None
    omega: int | None = None

    @classmethod
    def create(cls, agent_id, members, eval_points, rng, scale):
        """Draw a secret, split it, and address one share per group member."""
        if len(members) != len(eval_points):
            raise ConfigurationError("one evaluation point per member required")
        secret = draw_secret(rng, scale)
        coeffs = [draw_secret(rng, scale) for _ in range(len(members) - 1)]
        shares = split_secret(secret, len(members), eval_points, coeffs=coeffs)
        bundle = cls(agent_id=agent_id, secret=secret, coeffs=coeffs, eval_points=list(eval_points))
        for member, share in zip(members, shares):
            bundle.outgoing[member] = share
        return bundle

    def accumulate(self, expected_count):
        self.share_sum = sum_received_shares(list(self.received.values()), expected_count)
        return self.share_sum
