"""CRT-accelerated Paillier cryptosystem with a signed fixed-point codec.

Decryption is offered in two flavours: the fast path splits the modular
exponentiation across the two prime squares and recombines the halves, the
slow path runs one full-width exponentiation.  Both recover the same plaintext
bit for bit, which the test suite checks exhaustively.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction

MILLER_RABIN_ROUNDS = 40
KEYGEN_MAX_ATTEMPTS = 10000

_SMALL_PRIMES = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59]


class CryptoError(Exception):
    """Base class for cryptosystem failures."""


class KeyGenerationError(CryptoError):
    """Prime generation did not succeed within the retry budget."""


class EncodingOverflowError(CryptoError):
    """Plaintext magnitude does not fit the positive or negative interval."""


class ArithmeticOverflowError(CryptoError):
    """A decrypted value landed in the reserved middle interval."""


class ProtocolError(CryptoError):
    """Ciphertexts were combined in a way the codec cannot track."""


def _is_probable_prime(n, rng, rounds=MILLER_RABIN_ROUNDS):
    if n < 2:
        return False
    for p in [2] + _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits, rng):
    # Top two bits forced so the product of two such primes has exactly
    # bits_p + bits_q bits.
    for _ in range(KEYGEN_MAX_ATTEMPTS):
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | (1 << (bits - 2)) | 1
        if _is_probable_prime(cand, rng):
            return cand
    raise KeyGenerationError(f"no {bits}-bit prime found after {KEYGEN_MAX_ATTEMPTS} attempts")


def _lfunc(x, d):
    return (x - 1) // d


@dataclass(frozen=True)
class PublicKey:
    """Public half of a keypair: modulus n and generator n + 1."""

    n: int
    g: int

    @property
    def n_sq(self):
        return self.n * self.n

    def to_json_dict(self):
        return {"n": str(self.n)}

    @classmethod
    def from_json_dict(cls, doc):
        n = int(doc["n"])
        return cls(n=n, g=n + 1)


@dataclass(frozen=True)
class KeyMaterial:
    """Full keypair plus the precomputed constants the fast decryptor needs."""

    p: int
    q: int
    n: int
    pk_g: int
    pi: int
    theta: int
    gamma_p: int
    gamma_q: int
    key_bits: int

    @classmethod
    def from_primes(cls, p, q, key_bits=None):
        if p == q:
            raise KeyGenerationError("primes must be distinct")
        n = p * q
        pi = (p - 1) * (q - 1)
        if math.gcd(n, pi) != 1:
            raise KeyGenerationError("gcd(pq, (p-1)(q-1)) != 1")
        theta = pow(pi, -1, n)
        g = n + 1
        gamma_p = pow(_lfunc(pow(g, p - 1, p * p), p), -1, p)
        gamma_q = pow(_lfunc(pow(g, q - 1, q * q), q), -1, q)
        return cls(
            p=p,
            q=q,
            n=n,
            pk_g=g,
            pi=pi,
            theta=theta,
            gamma_p=gamma_p,
            gamma_q=gamma_q,
            key_bits=key_bits if key_bits is not None else n.bit_length(),
        )

    def public(self):
        return PublicKey(n=self.n, g=self.pk_g)

    def validate(self):
        """Recompute every derived constant and compare."""
        fresh = KeyMaterial.from_primes(self.p, self.q, self.key_bits)
        return fresh == self

    def to_json_dict(self):
        return {
            "p": str(self.p),
            "q": str(self.q),
            "n": str(self.n),
            "key_bits": self.key_bits,
        }

    @classmethod
    def from_json_dict(cls, doc):
        key = cls.from_primes(int(doc["p"]), int(doc["q"]), int(doc["key_bits"]))
        if key.n != int(doc["n"]):
            raise KeyGenerationError("modulus does not match stored primes")
        return key


@dataclass(frozen=True)
class SignedFixedCodec:
    """Maps signed decimals into the three-interval integer domain (0, Z*].

    Positive values occupy (0, Z*/3), negatives (2Z*/3, Z*] after adding Z*,
    and the middle third is reserved so overflows surface at decode time
    instead of wrapping silently.
    """

    tau: int
    z_star: int

    @property
    def scale(self):
        return 10 ** self.tau

    def encode_scaled(self, scaled):
        """Map an already-scaled signed integer into (0, Z*]."""
        if 3 * abs(scaled) >= self.z_star:
            raise EncodingOverflowError(
                f"scaled magnitude {abs(scaled)} exceeds a third of the domain"
            )
        return scaled % self.z_star

    def encode(self, d):
        """Quantize d to tau fraction digits and map it into the domain.

        Nearest-integer rounding (ties to even) on the exact rational value:
        binary floats cannot represent decimal fractions, so literal
        truncation would corrupt exact tau-digit inputs like -9.9999.
        """
        scaled = round(Fraction(d) * self.scale)
        return self.encode_scaled(scaled)

    def decode_scaled(self, mapped, scale_exp=1):
        """Undo the three-interval mapping, returning the signed scaled integer."""
        if not 0 <= mapped < self.z_star:
            mapped %= self.z_star
        lo = self.z_star // 3
        hi = (2 * self.z_star) // 3
        if mapped <= lo:
            return mapped
        if mapped > hi:
            return mapped - self.z_star
        raise ArithmeticOverflowError(
            f"recovered value {mapped} lies in the reserved middle interval"
        )

    def decode(self, mapped, scale_exp=1):
        return self.decode_scaled(mapped, scale_exp) / 10 ** (self.tau * scale_exp)

    def decode_fraction(self, mapped, scale_exp=1):
        return Fraction(self.decode_scaled(mapped, scale_exp), 10 ** (self.tau * scale_exp))


@dataclass(frozen=True)
class Ciphertext:
    """Paillier ciphertext plus the number of 10^tau factors it carries."""

    value: int
    scale_exp: int = 1

    def to_json_dict(self):
        return {"value": str(self.value), "scale_exp": self.scale_exp}

    @classmethod
    def from_json_dict(cls, doc):
        return cls(value=int(doc["value"]), scale_exp=int(doc["scale_exp"]))


def default_codec(key, tau):
    """Codec bound to a key: the integer domain upper bound is the modulus."""
    n = key.n if isinstance(key, (KeyMaterial, PublicKey)) else int(key)
    return SignedFixedCodec(tau=tau, z_star=n)


def keygen(key_bits, rng=None):
    """Generate a keypair whose modulus has exactly key_bits bits."""
    if not 16 <= key_bits <= 4096:
        raise KeyGenerationError(f"key_bits must lie in [16, 4096], got {key_bits}")
    if rng is None:
        rng = random.SystemRandom()
    elif isinstance(rng, int):
        rng = random.Random(rng)
    p_bits = key_bits - key_bits // 2
    q_bits = key_bits // 2
    for _ in range(KEYGEN_MAX_ATTEMPTS):
        p = _random_prime(p_bits, rng)
        q = _random_prime(q_bits, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() != key_bits:
            continue
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        return KeyMaterial.from_primes(p, q, key_bits)
    raise KeyGenerationError("could not assemble a valid keypair")


def _draw_blinding(n, rng):
    # Alg-style r in Z_n*; resample on the (astronomically rare) gcd != 1 hit.
    while True:
        r = rng.randrange(1, n)
        if math.gcd(r, n) == 1:
            return r


def encrypt_scaled(pk, codec, scaled, rng):
    mapped = codec.encode_scaled(scaled)
    n, n_sq = pk.n, pk.n_sq
    r = _draw_blinding(n, rng)
    value = (1 + n * mapped) * pow(r, n, n_sq) % n_sq
    return Ciphertext(value=value, scale_exp=1)


def encrypt(pk, codec, d, rng):
    """Encrypt a signed decimal under pk: e = (1 + n D*) r^n mod n^2."""
    mapped = codec.encode(d)
    n, n_sq = pk.n, pk.n_sq
    r = _draw_blinding(n, rng)
    value = (1 + n * mapped) * pow(r, n, n_sq) % n_sq
    return Ciphertext(value=value, scale_exp=1)


def _recover_crt(sk, e):
    p, q = sk.p, sk.q
    e_p = _lfunc(pow(e.value, p - 1, p * p), p) * sk.gamma_p % p
    e_q = _lfunc(pow(e.value, q - 1, q * q), q) * sk.gamma_q % q
    q_inv = pow(q, -1, p)
    return e_q + (q_inv * (e_p - e_q) % p) * q


def decrypt_crt_scaled(sk, e, codec):
    if e.value >= sk.n * sk.n:
        raise ProtocolError("ciphertext is not reduced modulo n^2")
    return codec.decode_scaled(_recover_crt(sk, e), e.scale_exp)


def decrypt_crt(sk, e, codec):
    """Fast decryption via per-prime exponentiations and CRT recombination."""
    return codec.decode(_recover_crt(sk, e), e.scale_exp)


def _recover_standard(sk, e):
    n = sk.n
    return _lfunc(pow(e.value, sk.pi, n * n), n) * sk.theta % n


def decrypt_standard(sk, e, codec):
    """Reference decryption through the single full-width exponentiation."""
    if e.value >= sk.n * sk.n:
        raise ProtocolError("ciphertext is not reduced modulo n^2")
    return codec.decode(_recover_standard(sk, e), e.scale_exp)


def decrypt_standard_scaled(sk, e, codec):
    return codec.decode_scaled(_recover_standard(sk, e), e.scale_exp)


def hom_add(e1, e2, n):
    """Ciphertext product, which decrypts to the plaintext sum."""
    if e1.scale_exp != e2.scale_exp:
        raise ProtocolError(
            f"scale mismatch: {e1.scale_exp} vs {e2.scale_exp}"
        )
    n_sq = n * n
    return Ciphertext(value=e1.value * e2.value % n_sq, scale_exp=e1.scale_exp)


def hom_scalar_mul(e, s, codec, n):
    """Ciphertext exponentiation, which decrypts to the scaled product.

    The scalar is quantized through the same codec, so the result carries two
    10^tau factors and must be decoded with scale_exp = 2.
    """
    if e.scale_exp != 1:
        raise ProtocolError("scalar multiplication requires an unscaled ciphertext")
    exponent = codec.encode(s)
    if exponent <= 0:
        raise ProtocolError("scalar quantized to zero or outside the domain")
    n_sq = n * n
    return Ciphertext(value=pow(e.value, exponent, n_sq), scale_exp=2)
