"""Paillier cryptosystem, fixed-point codec, and byte serialization.

Plaintexts live in Z_n; homomorphic laws: multiplying ciphertexts adds
plaintexts, raising a ciphertext to an integer multiplies its plaintext.
Reals enter the ring through the scaled-floor codec, with negatives as
modular additive inverses.  gmpy2 accelerates the modular arithmetic when
present; the stdlib ``pow`` is used otherwise.
"""

from __future__ import annotations

import hashlib
import math
import random
from dataclasses import dataclass

from .errors import KeyMismatchError, RangeError

try:
    from gmpy2 import invert as _g_invert, powmod as _g_powmod

    def _powmod(b, e, m):
        return int(_g_powmod(b, e, m))

    def _invmod(a, m):
        return int(_g_invert(a, m))
except ImportError:
    def _powmod(b, e, m):
        return pow(b, e, m)

    def _invmod(a, m):
        return pow(a, -1, m)

__all__ = ["PublicKey", "KeyPair", "Ciphertext", "FixedPointCodec", "keygen",
           "encrypt", "decrypt", "add_cipher", "add_plain", "scalar_mul",
           "negate_cipher"]

_SMALL_PRIMES = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47]


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = _powmod(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = (x * x) % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    while True:
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(cand, rng):
            return cand


@dataclass(frozen=True)
class PublicKey:
    n: int
    g: int

    def __post_init__(self):
        object.__setattr__(self, "n_sq", self.n * self.n)
        digest = hashlib.sha256(f"{self.n}:{self.g}".encode()).hexdigest()
        object.__setattr__(self, "key_id", digest[:16])

    @property
    def max_plaintext(self) -> int:
        return self.n - 1


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str

    def __post_init__(self):
        if self.value <= 0:
            raise RangeError("ciphertext value must be positive")


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    p: int
    q: int

    def __post_init__(self):
        n = self.p * self.q
        if self.p == self.q:
            raise ValueError("p and q must differ")
        if n != self.public.n:
            raise ValueError("public modulus does not match p*q")
        if math.gcd(n, (self.p - 1) * (self.q - 1)) != 1:
            raise ValueError("gcd(pq, (p-1)(q-1)) must be 1")
        lam = math.lcm(self.p - 1, self.q - 1)
        u = _powmod(self.public.g, lam, self.public.n_sq)
        mu = _invmod((u - 1) // n % n, n)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "mu", mu)


def keygen(bits: int, rng: random.Random | None = None) -> KeyPair:
    """Generate a key pair with primes of bits/2 each.

    Deterministic when given a seeded ``random.Random``; tiny keys are
    allowed so the homomorphic laws can be checked exhaustively.
    """
    if bits < 16:
        raise ValueError("key length must be at least 16 bits")
    rng = rng or random.SystemRandom()
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits // 2, rng)
        if p == q:
            continue
        n = p * q
        if math.gcd(n, (p - 1) * (q - 1)) == 1:
            return KeyPair(PublicKey(n=n, g=n + 1), p=p, q=q)


def _check_key(pk: PublicKey, *cts: Ciphertext) -> None:
    for ct in cts:
        if ct.key_id != pk.key_id:
            raise KeyMismatchError(f"ciphertext under key {ct.key_id}, expected {pk.key_id}")


def encrypt(pk: PublicKey, m: int, rng: random.Random | None = None) -> Ciphertext:
    """Probabilistic encryption of m in Z_n."""
    if not 0 <= m < pk.n:
        raise RangeError(f"plaintext {m} outside [0, n)")
    rng = rng or random.SystemRandom()
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            break
    # g = n+1 makes g^m affine: (1 + m n) mod n^2.
    gm = (1 + m * pk.n) % pk.n_sq if pk.g == pk.n + 1 else _powmod(pk.g, m, pk.n_sq)
    return Ciphertext((gm * _powmod(r, pk.n, pk.n_sq)) % pk.n_sq, pk.key_id)


def decrypt(kp: KeyPair, ct: Ciphertext) -> int:
    _check_key(kp.public, ct)
    n, n_sq = kp.public.n, kp.public.n_sq
    u = _powmod(ct.value, kp.lam, n_sq)
    return ((u - 1) // n % n) * kp.mu % n


def add_cipher(pk: PublicKey, ct1: Ciphertext, ct2: Ciphertext) -> Ciphertext:
    """Homomorphic addition: plaintexts add mod n."""
    _check_key(pk, ct1, ct2)
    return Ciphertext(ct1.value * ct2.value % pk.n_sq, pk.key_id)


def add_plain(pk: PublicKey, ct: Ciphertext, m: int) -> Ciphertext:
    """Homomorphic addition of a known plaintext (cheap for g = n+1)."""
    _check_key(pk, ct)
    m %= pk.n
    gm = (1 + m * pk.n) % pk.n_sq if pk.g == pk.n + 1 else _powmod(pk.g, m, pk.n_sq)
    return Ciphertext(ct.value * gm % pk.n_sq, pk.key_id)


def scalar_mul(pk: PublicKey, ct: Ciphertext, s: int) -> Ciphertext:
    """Homomorphic scalar multiplication: plaintext becomes s*m mod n."""
    _check_key(pk, ct)
    s %= pk.n
    if s == 0:
        # c^0 = 1 encrypts zero deterministically; still a valid ciphertext.
        return Ciphertext(1, pk.key_id)
    return Ciphertext(_powmod(ct.value, s, pk.n_sq), pk.key_id)


def negate_cipher(pk: PublicKey, ct: Ciphertext) -> Ciphertext:
    """Modular additive inverse: decrypts to -m mod n."""
    return scalar_mul(pk, ct, pk.n - 1)


@dataclass(frozen=True)
class FixedPointCodec:
    """Scaled-integer encoding of reals into Z_n.

    encode(r) = floor(c*r) mod n; values at or above n/2 decode as
    negatives.  The representable range is [-n/(2c), (n-1)/(2c)] and the
    round-trip error is below 1/c.
    """

    c: int
    n: int

    def __post_init__(self):
        if self.c <= 0 or 10 ** round(math.log10(self.c)) != self.c:
            raise ValueError("scaling factor must be a positive power of ten")

    @property
    def digits(self) -> int:
        return round(math.log10(self.c))

    def encode(self, r: float) -> int:
        scaled = math.floor(self.c * r)
        if not -(self.n - 1) // 2 <= scaled <= (self.n - 1) // 2:
            raise RangeError(f"real {r} outside the representable range")
        return scaled % self.n

    def decode(self, x: int) -> float:
        if not 0 <= x < self.n:
            raise RangeError(f"encoded value {x} outside [0, n)")
        if x >= (self.n + 1) // 2:
            x -= self.n
        return x / self.c

    def decode_signed_int(self, x: int) -> int:
        """The signed scaled integer itself, without dividing by c."""
        if not 0 <= x < self.n:
            raise RangeError(f"encoded value {x} outside [0, n)")
        return x - self.n if x >= (self.n + 1) // 2 else x


# ---------------------------------------------------------------------------
# Length-prefixed big-endian serialization

def _pack_ints(*values: int) -> bytes:
    out = bytearray()
    for v in values:
        raw = v.to_bytes((v.bit_length() + 7) // 8 or 1, "big")
        out += len(raw).to_bytes(4, "big") + raw
    return bytes(out)


def _unpack_ints(data: bytes, count: int):
    values, pos = [], 0
    for _ in range(count):
        size = int.from_bytes(data[pos:pos + 4], "big")
        pos += 4
        values.append(int.from_bytes(data[pos:pos + size], "big"))
        pos += size
    if pos != len(data):
        raise ValueError("trailing bytes in serialized value")
    return values


def ciphertext_to_bytes(ct: Ciphertext) -> bytes:
    return _pack_ints(ct.value) + ct.key_id.encode("ascii")


def ciphertext_from_bytes(data: bytes) -> Ciphertext:
    size = int.from_bytes(data[:4], "big")
    value = int.from_bytes(data[4:4 + size], "big")
    return Ciphertext(value, data[4 + size:].decode("ascii"))


def public_key_to_bytes(pk: PublicKey) -> bytes:
    return _pack_ints(pk.n, pk.g)


def public_key_from_bytes(data: bytes) -> PublicKey:
    n, g = _unpack_ints(data, 2)
    return PublicKey(n=n, g=g)


def keypair_to_bytes(kp: KeyPair) -> bytes:
    return _pack_ints(kp.public.n, kp.public.g, kp.p, kp.q)


def keypair_from_bytes(data: bytes) -> KeyPair:
    n, g, p, q = _unpack_ints(data, 4)
    return KeyPair(PublicKey(n=n, g=g), p=p, q=q)
