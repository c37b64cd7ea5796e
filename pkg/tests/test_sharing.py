import random
from fractions import Fraction

import pytest

from gridveil.sharing import (
    ConfigurationError,
    InterpolationError,
    MaskedValue,
    ProtocolIncompleteError,
    mask,
    reconstruct_omega,
    split_secret,
    sum_received_shares,
    unmask_sum,
)


def poly_eval(secret, coeffs, z):
    # Independent polynomial-evaluation oracle.
    return secret + sum(c * z ** (t + 1) for t, c in enumerate(coeffs))


def test_split_matches_direct_polynomial_evaluation():
    shares = split_secret(3, m=2, eval_points=[1, 2], coeffs=[1])
    assert shares == [poly_eval(3, [1], 1), poly_eval(3, [1], 2)]
    assert shares == [4, 5]


def test_zero_polynomial_gives_zero_shares():
    assert split_secret(0, m=3, eval_points=[1, 2, 3], coeffs=[0, 0]) == [0, 0, 0]


def test_split_rejects_bad_setup():
    with pytest.raises(ConfigurationError):
        split_secret(1, m=1, eval_points=[1])
    with pytest.raises(ConfigurationError):
        split_secret(1, m=2, eval_points=[2, 2])
    with pytest.raises(ConfigurationError):
        split_secret(1, m=3, eval_points=[1, 2])


def test_any_m_minus_one_shares_leave_secret_free():
    # With m=3 the polynomial has two free coefficients, so any 2 of 3 shares
    # are consistent with every candidate secret: solve the 2x2 Vandermonde
    # system for each candidate over exact rationals and check both shares.
    shares = split_secret(17, m=3, eval_points=[1, 2, 3], coeffs=[5, -2])
    z1, z2 = 1, 3
    s1, s2 = shares[0], shares[2]
    for candidate in range(-50, 50):
        det = z1 * z2 ** 2 - z2 * z1 ** 2
        b1, b2 = s1 - candidate, s2 - candidate
        phi1 = Fraction(b1 * z2 ** 2 - b2 * z1 ** 2, det)
        phi2 = Fraction(b2 * z1 - b1 * z2, det)
        assert candidate + phi1 * z1 + phi2 * z1 ** 2 == s1
        assert candidate + phi1 * z2 + phi2 * z2 ** 2 == s2


def test_sum_received_shares_hand_case():
    # R1=3 with phi=1 and R2=5 with phi=2, both evaluated at Z=1.
    g1 = poly_eval(3, [1], 1)
    g2 = poly_eval(5, [2], 1)
    assert sum_received_shares([g1, g2], 2) == 11


def test_sum_received_shares_identity_and_missing():
    assert sum_received_shares([7, 0, 0], 3) == 7
    with pytest.raises(ProtocolIncompleteError):
        sum_received_shares([1, 2], 3)


def test_sum_matches_recomputation_oracle_m3():
    rng = random.Random(99)
    secrets = [rng.randrange(-1000, 1000) for _ in range(3)]
    coeffs = [[rng.randrange(-50, 50) for _ in range(2)] for _ in range(3)]
    points = [1, 2, 3]
    all_shares = [split_secret(s, 3, points, coeffs=c) for s, c in zip(secrets, coeffs)]
    for j, z in enumerate(points):
        got = sum_received_shares([all_shares[i][j] for i in range(3)], 3)
        assert got == sum(poly_eval(secrets[i], coeffs[i], z) for i in range(3))


def test_reconstruct_hand_lagrange():
    # Points (1, 11), (2, 14): 11*2/(2-1) + 14*1/(1-2) = 8 = 3 + 5.
    assert reconstruct_omega([(1, 11), (2, 14)]) == 8


def test_reconstruct_zero_secrets():
    shares = [split_secret(0, 2, [1, 2], coeffs=[c]) for c in (4, -9)]
    sums = [(z, shares[0][j] + shares[1][j]) for j, z in enumerate([1, 2])]
    assert reconstruct_omega(sums) == 0


def test_reconstruct_matches_direct_sum_m4():
    rng = random.Random(5)
    secrets = [rng.randrange(-10 ** 9, 10 ** 9) for _ in range(4)]
    points = [1, 2, 3, 4]
    all_shares = [
        split_secret(s, 4, points, coeffs=[rng.randrange(-10 ** 6, 10 ** 6) for _ in range(3)])
        for s in secrets
    ]
    sums = [(z, sum(all_shares[i][j] for i in range(4))) for j, z in enumerate(points)]
    assert reconstruct_omega(sums) == sum(secrets)


def test_reconstruct_rejects_coincident_points():
    with pytest.raises(InterpolationError):
        reconstruct_omega([(1, 5), (1, 6)])


def test_mask_spec_values():
    # Fixed-point with four fraction digits: 1.5 + 4.2417 = 5.7417.
    scale = 10 ** 4
    mv = mask(15000, 42417, agent_id=6)
    assert mv.payload == 57417
    assert mv.payload / scale == 5.7417
    assert mask(123, 0).payload == 123


def test_unmask_sum_arithmetic_identity():
    masked = [MaskedValue(1, 2 + 10), MaskedValue(2, 3 + 20)]
    assert unmask_sum(masked, own_secret=5, omega=35) == 5


def test_unmask_sum_zero_secrets_is_plain_sum():
    masked = [MaskedValue(1, 4), MaskedValue(2, 9)]
    assert unmask_sum(masked, own_secret=0, omega=0) == 13


def test_unmask_sum_rejects_duplicates():
    with pytest.raises(ProtocolIncompleteError):
        unmask_sum([MaskedValue(1, 1), MaskedValue(1, 2)], 0, 0)


def test_randomized_group_pipeline_is_exact():
    # Full offline+online pipeline for m in [2, 10]: reconstruction equals the
    # sum of secrets and unmasking equals the plaintext sum, exactly.
    rng = random.Random(123)
    for m in range(2, 11):
        points = list(range(1, m + 1))
        secrets = [rng.randrange(-10 ** 10, 10 ** 10) for _ in range(m)]
        all_shares = [
            split_secret(
                s, m, points, coeffs=[rng.randrange(-10 ** 9, 10 ** 9) for _ in range(m - 1)]
            )
            for s in secrets
        ]
        sums = [(z, sum(all_shares[i][j] for i in range(m))) for j, z in enumerate(points)]
        omega = reconstruct_omega(sums)
        assert omega == sum(secrets)

        child_values = [rng.randrange(-10 ** 6, 10 ** 6) for _ in range(m - 1)]
        masked = [
            mask(v, secrets[i + 1], agent_id=i + 1) for i, v in enumerate(child_values)
        ]
        assert unmask_sum(masked, secrets[0], omega) == sum(child_values)
