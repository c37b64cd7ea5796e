import math
import random

import pytest

from gridveil.paillier import (
    ArithmeticOverflowError,
    Ciphertext,
    EncodingOverflowError,
    KeyMaterial,
    ProtocolError,
    SignedFixedCodec,
    decrypt_crt,
    decrypt_standard,
    default_codec,
    encrypt,
    hom_add,
    hom_scalar_mul,
    keygen,
)


def toy_key():
    return KeyMaterial.from_primes(5, 7)


class FixedRng:
    """Stub rng returning a preset blinding value."""

    def __init__(self, value):
        self.value = value

    def randrange(self, a, b):
        return self.value


def egcd_inverse(a, m):
    # Independent extended-Euclid oracle.
    r0, r1, s0, s1 = a, m, 1, 0
    while r1:
        quo = r0 // r1
        r0, r1 = r1, r0 - quo * r1
        s0, s1 = s1, s0 - quo * s1
    assert r0 == 1
    return s0 % m


def test_toy_key_constants_match_euclid_oracle():
    key = toy_key()
    assert key.n == 35
    assert key.pi == 24
    assert key.theta == egcd_inverse(24, 35)
    assert key.theta == 19
    assert key.key_bits == 6
    assert key.validate()


def test_keygen_is_deterministic_under_seed():
    k1 = keygen(64, rng=1234)
    k2 = keygen(64, rng=1234)
    assert k1 == k2


def test_keygen_128_bits_and_coprimality():
    key = keygen(128, rng=7)
    assert key.n.bit_length() == 128
    assert math.gcd(key.n, key.pi) == 1
    assert key.p != key.q


def test_keygen_rejects_bad_sizes():
    from gridveil.paillier import KeyGenerationError

    with pytest.raises(KeyGenerationError):
        keygen(8)
    with pytest.raises(KeyGenerationError):
        keygen(8192)


def test_toy_encrypt_matches_direct_modular_evaluation():
    key = toy_key()
    codec = default_codec(key, tau=0)
    ct = encrypt(key.public(), codec, 3, FixedRng(2))
    expected = (1 + 35 * 3) * pow(2, 35, 1225) % 1225
    assert ct.value == expected
    assert ct.scale_exp == 1
    assert decrypt_crt(key, ct, codec) == 3
    assert decrypt_standard(key, ct, codec) == 3


def test_zero_round_trip():
    key = keygen(64, rng=3)
    codec = default_codec(key, tau=4)
    rng = random.Random(0)
    assert decrypt_crt(key, encrypt(key.public(), codec, 0.0, rng), codec) == 0.0


def test_signed_encoding_symmetry():
    key = keygen(64, rng=3)
    codec = default_codec(key, tau=4)
    assert codec.encode(-1.5) == codec.z_star - 15000
    rng = random.Random(1)
    ct = encrypt(key.public(), codec, -1.5, rng)
    assert decrypt_crt(key, ct, codec) == -1.5


@pytest.mark.parametrize("d", [-9.9999, 0.0001, 123.4567])
def test_round_trip_four_digit_decimals(d):
    key = keygen(96, rng=5)
    codec = default_codec(key, tau=4)
    rng = random.Random(2)
    ct = encrypt(key.public(), codec, d, rng)
    assert decrypt_crt(key, ct, codec) == d
    assert decrypt_standard(key, ct, codec) == d


def test_crt_equals_standard_on_random_plaintexts():
    key = keygen(96, rng=11)
    codec = default_codec(key, tau=4)
    rng = random.Random(42)
    for _ in range(1000):
        d = round(rng.uniform(-1e6, 1e6), 4)
        ct = encrypt(key.public(), codec, d, rng)
        assert decrypt_crt(key, ct, codec) == decrypt_standard(key, ct, codec)


def test_hom_add_shifts_and_identity():
    key = keygen(96, rng=13)
    codec = default_codec(key, tau=4)
    rng = random.Random(3)
    pk = key.public()
    out = hom_add(encrypt(pk, codec, 2.5, rng), encrypt(pk, codec, -1.0, rng), key.n)
    assert decrypt_crt(key, out, codec) == 1.5
    x = 17.25
    out = hom_add(encrypt(pk, codec, x, rng), encrypt(pk, codec, 0.0, rng), key.n)
    assert decrypt_crt(key, out, codec) == x


def test_hom_add_toy_cross_checked_against_ciphertext_product():
    key = toy_key()
    codec = default_codec(key, tau=0)
    e1 = encrypt(key.public(), codec, 3, FixedRng(2))
    e2 = encrypt(key.public(), codec, 4, FixedRng(3))
    out = hom_add(e1, e2, key.n)
    assert out.value == e1.value * e2.value % 1225
    assert decrypt_crt(key, out, codec) == 7


def test_hom_add_rejects_scale_mismatch():
    key = toy_key()
    with pytest.raises(ProtocolError):
        hom_add(Ciphertext(3, 1), Ciphertext(3, 2), key.n)


def test_hom_scalar_mul_unit_sign_and_toy_cases():
    key = keygen(96, rng=17)
    codec = default_codec(key, tau=4)
    rng = random.Random(4)
    pk = key.public()
    out = hom_scalar_mul(encrypt(pk, codec, 2.0, rng), 1.0, codec, key.n)
    assert out.scale_exp == 2
    assert decrypt_crt(key, out, codec) == 2.0
    out = hom_scalar_mul(encrypt(pk, codec, -3.0, rng), 0.5, codec, key.n)
    assert decrypt_crt(key, out, codec) == -1.5

    # n=77 keeps the product 12 inside the positive third; on the 35-key it
    # would land in the reserved interval (checked below).
    toy = KeyMaterial.from_primes(7, 11)
    toy_codec = default_codec(toy, tau=0)
    ct = encrypt(toy.public(), toy_codec, 3, FixedRng(2))
    out = hom_scalar_mul(ct, 4, toy_codec, toy.n)
    assert out.value == pow(ct.value, 4, toy.n * toy.n)
    assert decrypt_crt(toy, out, toy_codec) == 12

    tiny = toy_key()
    tiny_codec = default_codec(tiny, tau=0)
    out = hom_scalar_mul(encrypt(tiny.public(), tiny_codec, 3, FixedRng(2)), 4, tiny_codec, tiny.n)
    with pytest.raises(ArithmeticOverflowError):
        decrypt_crt(tiny, out, tiny_codec)


def test_hom_scalar_mul_quantization_bound():
    key = keygen(96, rng=19)
    codec = default_codec(key, tau=4)
    rng = random.Random(5)
    pk = key.public()
    for _ in range(200):
        d = round(rng.uniform(-50, 50), 4)
        s = round(rng.uniform(0.01, 3.0), 4)
        got = decrypt_crt(key, hom_scalar_mul(encrypt(pk, codec, d, rng), s, codec, key.n), codec)
        assert abs(got - d * s) <= 10 ** (-2 * codec.tau) + 1e-12


def test_encoding_overflow_raises():
    key = toy_key()
    codec = default_codec(key, tau=0)
    with pytest.raises(EncodingOverflowError):
        codec.encode(12)  # 3*12 >= 35


def test_homomorphic_overflow_hits_middle_interval():
    key = keygen(64, rng=23)
    codec = default_codec(key, tau=0)
    rng = random.Random(6)
    pk = key.public()
    big = key.n // 3 - 1
    out = hom_add(encrypt(pk, codec, big, rng), encrypt(pk, codec, big, rng), key.n)
    with pytest.raises(ArithmeticOverflowError):
        decrypt_crt(key, out, codec)
    with pytest.raises(ArithmeticOverflowError):
        decrypt_standard(key, out, codec)


def test_semantic_blinding_gives_distinct_ciphertexts():
    key = keygen(96, rng=29)
    codec = default_codec(key, tau=4)
    rng = random.Random(7)
    pk = key.public()
    values = {encrypt(pk, codec, 1.2345, rng).value for _ in range(50)}
    assert len(values) == 50


def test_key_and_ciphertext_serialization_round_trip():
    key = keygen(64, rng=31)
    doc = key.to_json_dict()
    assert set(doc) == {"p", "q", "n", "key_bits"}
    assert KeyMaterial.from_json_dict(doc) == key
    ct = Ciphertext(123456789, 2)
    assert Ciphertext.from_json_dict(ct.to_json_dict()) == ct


def test_codec_round_trip_property_randomized():
    key = keygen(96, rng=37)
    codec = default_codec(key, tau=4)
    rng = random.Random(8)
    for _ in range(2000):
        scaled = rng.randrange(-(10 ** 9), 10 ** 9)
        d = scaled / 10 ** 4
        assert codec.decode(codec.encode(d)) == d
