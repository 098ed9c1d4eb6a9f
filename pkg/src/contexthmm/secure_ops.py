"""Encrypted real arithmetic and the two-party logsum/negation protocols.

Log-domain quantities travel as ``EncryptedReal`` values: a Paillier
ciphertext of a scaled integer plus a public decimal scale header.  The
logsum protocol blinds each encrypted log with a fresh additive mask, lets
the keyholder exponentiate the masked plaintexts and return encrypted
linear mantissas under one shared magnitude header, unmasks them
homomorphically with the public weights folded in, and finishes with a
single masked log round.

Error model: every encode quantizes at one part in 10^work_digits, so a
logsum result carries an absolute log-domain error of a few 10^-work_digits
(plus a float64 floor near 1e-11 for very large magnitudes).  Errors
accumulate roughly with the square root of the number of chained protocol
rounds; on hidden-Markov training workloads with c >= 1e6 and >= 512-bit
keys the end-to-end parameter error stays far below the two-percent mark.

The working precision grows with the key size: spare plaintext-ring
capacity beyond what the products and masks need is spent on extra guard
digits, so larger keys quantize less aggressively and small keys or small
scaling factors show visibly larger errors.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass

from .errors import ProtocolError, RangeError
from .paillier import (Ciphertext, FixedPointCodec, KeyPair, PublicKey,
                       add_cipher, add_plain, decrypt, encrypt, negate_cipher,
                       scalar_mul)

__all__ = ["EncryptedReal", "WorkingScale", "MaskRecord", "LogsumHolder",
           "LogsumKeyholder", "secure_logsum", "secure_negate"]

LN10 = math.log(10.0)
# Masks are uniform over [0, 40*ln2): 40 bits of multiplicative hiding.
MASK_LOG_WINDOW = 40.0 * math.log(2.0)
MASK_DIGITS = 13            # ceil(log10(2^40))
GUARD_DIGITS = 6
MAX_EXTRA_DIGITS = 8


@dataclass(frozen=True)
class WorkingScale:
    """Decimal working precision derived from the codec and key size.

    ``digits`` is the codec's base precision plus extra guard digits that
    the plaintext ring can spare; all protocol-internal encodes use it.
    """

    base_c: int
    digits: int
    n: int

    @classmethod
    def derive(cls, codec: FixedPointCodec) -> "WorkingScale":
        n_digits = len(str(codec.n))
        extra = min(MAX_EXTRA_DIGITS, max(0, (codec.n.bit_length() - 256) // 96))
        digits = codec.digits + extra
        # One logsum needs mantissa, weight, and final-mask factors in-ring.
        need = 3 * digits + 2 * MASK_DIGITS + GUARD_DIGITS
        if need > n_digits:
            raise RangeError(
                f"key too small for scaling factor: need {need} digits, "
                f"ring holds {n_digits}")
        return cls(base_c=codec.c, digits=digits, n=codec.n)

    @property
    def grid(self) -> int:
        return 10 ** self.digits

    @property
    def mantissa_digits(self) -> int:
        return self.digits + MASK_DIGITS


@dataclass(frozen=True)
class EncryptedReal:
    """Ciphertext of round(value * 10^scale) with its public scale header."""

    ct: Ciphertext
    scale: int
    exp10: int = 0   # value is additionally multiplied by 10^exp10

    def real_scale(self) -> int:
        return self.scale - self.exp10


def encrypt_real(pk: PublicKey, ws: WorkingScale, value: float,
                 rng: random.Random) -> EncryptedReal:
    scaled = round(value * ws.grid)
    if abs(scaled) > (pk.n - 1) // 2:
        raise RangeError(f"value {value} outside the representable range")
    return EncryptedReal(encrypt(pk, scaled % pk.n, rng), ws.digits)


def decrypt_real(kp: KeyPair, enc: EncryptedReal) -> float:
    raw = decrypt(kp, enc.ct)
    signed = raw - kp.public.n if raw >= (kp.public.n + 1) // 2 else raw
    return signed / 10 ** enc.scale * 10 ** enc.exp10


def add_encrypted(pk: PublicKey, a: EncryptedReal, b: EncryptedReal) -> EncryptedReal:
    """Exact homomorphic addition after aligning the scale headers upward."""
    if a.exp10 != b.exp10:
        raise ProtocolError("cannot add encrypted reals with different exp10")
    target = max(a.scale, b.scale)
    ca = scalar_mul(pk, a.ct, 10 ** (target - a.scale)) if a.scale < target else a.ct
    cb = scalar_mul(pk, b.ct, 10 ** (target - b.scale)) if b.scale < target else b.ct
    return EncryptedReal(add_cipher(pk, ca, cb), target, a.exp10)


def add_public(pk: PublicKey, a: EncryptedReal, value: float) -> EncryptedReal:
    scaled = round(value * 10 ** a.real_scale())
    return EncryptedReal(add_plain(pk, a.ct, scaled), a.scale, a.exp10)


def secure_negate(pk: PublicKey, a: EncryptedReal) -> EncryptedReal:
    """Encrypted negation via the modular additive inverse."""
    return EncryptedReal(negate_cipher(pk, a.ct), a.scale, a.exp10)


@dataclass(frozen=True)
class MaskRecord:
    """Audit trail of one blinding mask: grid units and allowed window."""

    purpose: str
    grid_value: int
    window: int


def _exp_split(log_value: float) -> tuple[float, int]:
    """e^x as (mantissa in (0.1, 1], decimal exponent)."""
    e10 = math.ceil(log_value / LN10)
    frac = log_value - e10 * LN10
    if frac > 0.0:            # guard against float edge at exact multiples
        e10 += 1
        frac -= LN10
    return math.exp(frac), e10


class LogsumKeyholder:
    """Private-key side of the logsum protocol: sees only masked values."""

    def __init__(self, keypair: KeyPair, ws: WorkingScale, rng: random.Random):
        self.kp = keypair
        self.ws = ws
        self.rng = rng

    def exp_masked(self, masked: list[Ciphertext]) -> tuple[list[Ciphertext], int]:
        """Decrypt masked logs, exponentiate, re-encrypt linear mantissas.

        All mantissas share one magnitude header (the max element's decimal
        exponent); elements far below the max quantize to zero, which is
        harmless because the mask window is covered by extra mantissa digits.
        """
        n = self.kp.public.n
        half = (n + 1) // 2
        logs = []
        for ct in masked:
            raw = decrypt(self.kp, ct)
            signed = raw - n if raw >= half else raw
            logs.append(signed / self.ws.grid)
        pairs = [_exp_split(v) for v in logs]
        e_max = max(e for _, e in pairs)
        out = []
        for mant, e in pairs:
            scaled = round(mant * 10 ** (self.ws.mantissa_digits + e - e_max))
            out.append(encrypt(self.kp.public, scaled % n, self.rng))
        return out, e_max

    def log_masked(self, ct: Ciphertext) -> Ciphertext:
        """Decrypt a positive masked linear value and return its encrypted log."""
        v = decrypt(self.kp, ct)
        if v == 0:
            raise RangeError("masked sum decrypted to zero; scaling factor too small")
        scaled = round(math.log(v) * self.ws.grid)
        return encrypt(self.kp.public, scaled % self.kp.public.n, self.rng)


class LogsumHolder:
    """Public-key side: blinds, unmasks with weights, and sums."""

    def __init__(self, pk: PublicKey, ws: WorkingScale, rng: random.Random,
                 mask_log=None):
        self.pk = pk
        self.ws = ws
        self.rng = rng
        self.mask_log = mask_log if mask_log is not None else []
        self._window = round(MASK_LOG_WINDOW * ws.grid)

    def _fresh_mask(self, purpose: str) -> int:
        grid_value = self.rng.randrange(self._window)
        self.mask_log.append(MaskRecord(purpose, grid_value, self._window))
        return grid_value

    def blind(self, encs: list[EncryptedReal]) -> tuple[list[Ciphertext], list[int]]:
        masked, masks = [], []
        for enc in encs:
            if enc.scale != self.ws.digits or enc.exp10 != 0:
                raise ProtocolError("logsum inputs must be log-domain at working scale")
            r = self._fresh_mask("logsum-element")
            masked.append(add_plain(self.pk, enc.ct, -r).__class__(
                add_plain(self.pk, enc.ct, -r).value, enc.ct.key_id))
            masks.append(r)
        return masked, masks

    def weighted_sum(self, linear: list[Ciphertext], e_max: int,
                     masks: list[int], weights) -> EncryptedReal:
        """Unmask element-wise and fold in the public weights."""
        total = None
        for ct, r, w in zip(linear, masks, weights):
            if w < 0:
                raise ProtocolError("logsum weights must be non-negative")
            factor = round(w * math.exp(r / self.ws.grid) * self.ws.grid)
            if factor == 0:
                continue
            term = scalar_mul(self.pk, ct, factor)
            total = term if total is None else add_cipher(self.pk, total, term)
        if total is None:
            raise RangeError("all logsum terms vanished; weights too small")
        return EncryptedReal(total, self.ws.mantissa_digits + self.ws.digits,
                             exp10=e_max)

    def blind_linear(self, enc: EncryptedReal) -> tuple[Ciphertext, int]:
        rho = self._fresh_mask("logsum-final")
        factor = round(math.exp(rho / self.ws.grid) * self.ws.grid)
        return scalar_mul(self.pk, enc.ct, factor), rho

    def unblind_log(self, ct: Ciphertext, rho: int, sum_scale: int,
                    e_max: int) -> EncryptedReal:
        # Keyholder returned log of the raw integer; strip mask and scales.
        correction = -rho / self.ws.grid + (e_max - sum_scale - self.ws.digits) * LN10
        scaled = round(correction * self.ws.grid)
        return EncryptedReal(add_plain(self.pk, ct, scaled), self.ws.digits)


def secure_logsum(holder: LogsumHolder, keyholder: LogsumKeyholder,
                  enc_logs: list[EncryptedReal], weights=None) -> EncryptedReal:
    """E'[log sum_i a_i x_i] from E'[log x_i] without revealing the x_i.

    Direct in-process driver; the multi-party session wraps the same four
    steps in transport messages.
    """
    weights = [1.0] * len(enc_logs) if weights is None else list(weights)
    if len(weights) != len(enc_logs):
        raise ProtocolError("one weight per element required")
    masked, masks = holder.blind(enc_logs)
    linear, e_max = keyholder.exp_masked(masked)
    total = holder.weighted_sum(linear, e_max, masks, weights)
    blinded, rho = holder.blind_linear(total)
    log_ct = keyholder.log_masked(blinded)
    return holder.unblind_log(log_ct, rho, total.scale, e_max)


def linearize(holder: LogsumHolder, keyholder: LogsumKeyholder,
              enc_logs: list[EncryptedReal]) -> list[EncryptedReal]:
    """E'[x_i] from E'[log x_i]: the exponentiation half of the logsum.

    All outputs share one magnitude header so they can be summed
    homomorphically afterwards.
    """
    masked, masks = holder.blind(enc_logs)
    linear, e_max = keyholder.exp_masked(masked)
    out = []
    for ct, r in zip(linear, masks):
        factor = round(math.exp(r / holder.ws.grid) * holder.ws.grid)
        unmasked = scalar_mul(holder.pk, ct, factor)
        out.append(EncryptedReal(unmasked,
                                 holder.ws.mantissa_digits + holder.ws.digits,
                                 exp10=e_max))
    return out
