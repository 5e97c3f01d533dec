"""Paillier public-key cryptosystem over Python integers, plus a signed
fixed-point codec that maps protocol reals into the integer plaintext space.

The construction uses g = n + 1, which turns the encryption exponentiation
g^m mod n^2 into the exact shortcut 1 + m*n and makes lambda = phi(n) with
mu its inverse mod n.  Arithmetic is plain bignum; no constant-time effort
is made (wiretap confidentiality, not side channels, is the threat model).
"""
from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from .errors import (
    ConfigError,
    MagnitudeOverflow,
    MalformedCiphertext,
    PlaintextOutOfRange,
)

# Primes below 1000, used to reject candidates cheaply before Miller-Rabin.
_SMALL_PRIMES: list[int] = [2]
for _c in range(3, 1000, 2):
    if all(_c % _p for _p in _SMALL_PRIMES):
        _SMALL_PRIMES.append(_c)

MILLER_RABIN_ROUNDS = 64


def is_probable_prime(n: int, rng: random.Random, rounds: int = MILLER_RABIN_ROUNDS) -> bool:
    """Miller-Rabin with random bases; error probability <= 4^-rounds."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n == p:
            return True
        if n % p == 0:
            return False
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = pow(a, d, n)
        if x == 1 or x == n - 1:
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


def generate_prime(bits: int, rng: random.Random) -> int:
    """Random prime with the top bit set (exactly ``bits`` bits)."""
    if bits < 2:
        raise ConfigError("prime size must be at least 2 bits")
    while True:
        candidate = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if is_probable_prime(candidate, rng):
            return candidate


def _fingerprint(n: int) -> str:
    raw = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return hashlib.sha256(raw).hexdigest()[:16]


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    g: int
    key_id: str = ""

    def __post_init__(self) -> None:
        if not self.key_id:
            object.__setattr__(self, "key_id", _fingerprint(self.n))

    @property
    def n_squared(self) -> int:
        return self.n * self.n


@dataclass(frozen=True)
class PaillierKeypair:
    public: PaillierPublicKey
    lam: int
    mu: int
    bit_length: int


def keypair_from_primes(p: int, q: int) -> PaillierKeypair:
    """Assemble a keypair from two known primes (toy keys included)."""
    if p == q:
        raise ConfigError("p and q must be distinct primes")
    n = p * q
    lam = (p - 1) * (q - 1)
    if math.gcd(n, lam) != 1:
        raise ConfigError("gcd(n, lambda) must be 1")
    mu = pow(lam, -1, n)
    return PaillierKeypair(
        public=PaillierPublicKey(n=n, g=n + 1),
        lam=lam,
        mu=mu,
        bit_length=n.bit_length(),
    )


def keygen(bit_length: int = 256, rng: random.Random | None = None) -> PaillierKeypair:
    """Generate a keypair with two equal-bit-length primes.

    ``bit_length`` is the target modulus size; 256 is the package default.
    Retries until the primes are distinct and gcd(n, lambda) = 1.
    """
    if bit_length < 16:
        raise ConfigError("key size below 16 bits is not supported")
    if rng is None:
        rng = random.SystemRandom()
    half = bit_length // 2
    while True:
        p = generate_prime(half, rng)
        q = generate_prime(half, rng)
        if p == q:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) != 1:
            continue
        return keypair_from_primes(p, q)


@dataclass(frozen=True)
class Ciphertext:
    """An element of Z*_{n^2} tagged with the key that produced it."""

    value: int
    key_id: str


def encrypt(
    public: PaillierPublicKey,
    m: int,
    rng: random.Random | None = None,
    r: int | None = None,
) -> Ciphertext:
    """Encrypt an integer plaintext in [0, n).

    A fresh blinding factor r, uniform over Z*_n, is drawn unless one is
    forced explicitly (tests only); repeated encryptions of the same
    plaintext therefore differ.
    """
    n = public.n
    if not 0 <= m < n:
        raise PlaintextOutOfRange(f"plaintext {m} outside [0, {n})")
    if r is None:
        if rng is None:
            rng = random.SystemRandom()
        while True:
            r = rng.randrange(1, n)
            if math.gcd(r, n) == 1:
                break
    n2 = public.n_squared
    # g = n + 1 makes g^m mod n^2 collapse to 1 + m*n.
    c = ((1 + m * n) % n2) * pow(r, n, n2) % n2
    return Ciphertext(value=c, key_id=public.key_id)


def decrypt(keypair: PaillierKeypair, c: Ciphertext) -> int:
    """Recover the plaintext via m = L(c^lambda mod n^2) * mu mod n with
    L(u) = (u - 1) / n."""
    n = keypair.public.n
    if c.key_id != keypair.public.key_id:
        raise MalformedCiphertext(
            f"ciphertext was produced under key {c.key_id}, not {keypair.public.key_id}"
        )
    if not 0 < c.value < keypair.public.n_squared or math.gcd(c.value, n) != 1:
        raise MalformedCiphertext("ciphertext is not a valid element for this key")
    u = pow(c.value, keypair.lam, keypair.public.n_squared)
    return (u - 1) // n * keypair.mu % n


def add_ciphertexts(public: PaillierPublicKey, a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition: the product of ciphertexts decrypts to the sum
    of plaintexts mod n."""
    if a.key_id != b.key_id or a.key_id != public.key_id:
        raise MalformedCiphertext("ciphertexts under different keys cannot be combined")
    return Ciphertext(value=a.value * b.value % public.n_squared, key_id=public.key_id)


def public_key_to_bytes(public: PaillierPublicKey) -> bytes:
    """Length-prefixed big-endian serialization of n (g is implied n + 1)."""
    raw = public.n.to_bytes((public.n.bit_length() + 7) // 8, "big")
    return len(raw).to_bytes(4, "big") + raw


def public_key_from_bytes(data: bytes) -> tuple[PaillierPublicKey, bytes]:
    """Parse one serialized key; returns the key and any trailing bytes."""
    if len(data) < 4:
        raise MalformedCiphertext("truncated public-key serialization")
    length = int.from_bytes(data[:4], "big")
    if len(data) < 4 + length:
        raise MalformedCiphertext("truncated public-key serialization")
    n = int.from_bytes(data[4 : 4 + length], "big")
    return PaillierPublicKey(n=n, g=n + 1), data[4 + length :]


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point embedding of reals into Z_n.

    encode(v) = round(v * 2^f), with negative values wrapped to n - |.|;
    decode treats residues above n/2 as negative.  Values must satisfy
    |v| < 2^(bits(n) - 2 - f), which keeps positive and negative ranges
    disjoint with headroom.
    """

    modulus: int
    fractional_bits: int = 32

    def __post_init__(self) -> None:
        if self.fractional_bits <= 0:
            raise ConfigError("fractional_bits must be positive")
        if self.modulus.bit_length() <= self.fractional_bits + 2:
            raise ConfigError("modulus too small for this many fractional bits")

    @property
    def max_magnitude(self) -> float:
        return float(2 ** (self.modulus.bit_length() - 2 - self.fractional_bits))

    def encode(self, v: float) -> int:
        v = float(v)
        if not math.isfinite(v) or abs(v) >= self.max_magnitude:
            raise MagnitudeOverflow(
                f"value {v!r} exceeds representable magnitude {self.max_magnitude!r}"
            )
        q = round(v * float(2**self.fractional_bits))
        return q if q >= 0 else self.modulus + q

    def decode(self, e: int) -> float:
        if not 0 <= e < self.modulus:
            raise MagnitudeOverflow(f"encoded value {e} outside [0, n)")
        if e > self.modulus // 2:
            e -= self.modulus
        return e / 2**self.fractional_bits
