"""Simulated SIMD homomorphic-encryption backend.

Ciphertexts are fixed-width slot vectors supporting entrywise add,
entrywise multiply (ciphertext-ciphertext or ciphertext-plaintext) and
cyclic slot rotation.  This is a *simulation*: no lattice arithmetic, no
actual security.  What it does provide, exactly, is

- operation metering (HMult c2c/c2p, HAdd, HRot, Enc, Dec) so protocol
  cost laws can be asserted,
- key-id enforcement so role violations (a server decrypting) become
  testable errors,
- optional noise injection emulating approximate HE: each operation on
  real-valued slots adds Gaussian noise clipped to half a standard
  deviation, which keeps any depth-4 chain on unit-scale values within
  a 6-sigma envelope.

Two slot domains exist.  Real payloads use float64 slots and receive
noise.  Exact integer payloads (field elements from the secret-sharing
layer) use object-dtype slots holding Python ints; they are computed
exactly, since sub-integer noise would be lost to rounding anyway.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .matrix import Matrix

__all__ = [
    "HEParams",
    "PublicKey",
    "PrivateKey",
    "KeyPair",
    "CipherVector",
    "CostMeter",
    "CostWeights",
    "HEContext",
    "KeyMismatchError",
    "BackendError",
    "generate_keypair",
    "ciphertext_bytes",
]

PlainOperand = Union[np.ndarray, float, int, Sequence]


class BackendError(ValueError):
    pass


class KeyMismatchError(BackendError):
    """Operation attempted across different key contexts or with the wrong key."""


@dataclass(frozen=True)
class HEParams:
    slot_count: int = 2048
    noise_stddev: float = 0.0
    seed: int = 0

    def __post_init__(self):
        n = self.slot_count
        if n < 1 or (n & (n - 1)) != 0:
            raise BackendError(f"slot_count must be a power of two, got {n}")
        if self.noise_stddev < 0:
            raise BackendError("noise_stddev must be non-negative")


@dataclass(frozen=True)
class PublicKey:
    key_id: str


@dataclass(frozen=True)
class PrivateKey:
    key_id: str


@dataclass(frozen=True)
class KeyPair:
    public: PublicKey
    private: PrivateKey


_key_counter = itertools.count()


def generate_keypair(tag: str | None = None) -> KeyPair:
    key_id = tag if tag is not None else f"key{next(_key_counter)}"
    return KeyPair(PublicKey(key_id), PrivateKey(key_id))


@dataclass(frozen=True)
class CipherVector:
    """One ciphertext: a slot vector bound to a key context."""

    slots: np.ndarray
    key_id: str

    @property
    def width(self) -> int:
        return int(self.slots.size)

    @property
    def is_integer(self) -> bool:
        return self.slots.dtype == object


def ciphertext_bytes(params: HEParams) -> int:
    # two ring polynomials of slot_count coefficients, 8 bytes each
    return 2 * params.slot_count * 8


@dataclass
class CostMeter:
    """Monotone counters for homomorphic operations and traffic."""

    hmult_c2c: int = 0
    hmult_c2p: int = 0
    hadd: int = 0
    hrot: int = 0
    enc: int = 0
    dec: int = 0
    bytes_sent: dict = field(default_factory=dict)  # (sender, receiver) -> bytes

    def record_bytes(self, sender: str, receiver: str, nbytes: int) -> None:
        if nbytes < 0:
            raise ValueError("byte counts are monotone")
        key = (sender, receiver)
        self.bytes_sent[key] = self.bytes_sent.get(key, 0) + nbytes

    def total_bytes(self) -> int:
        return sum(self.bytes_sent.values())

    def merge(self, other: "CostMeter") -> None:
        """Fold a per-worker meter into this one at a barrier point."""
        self.hmult_c2c += other.hmult_c2c
        self.hmult_c2p += other.hmult_c2p
        self.hadd += other.hadd
        self.hrot += other.hrot
        self.enc += other.enc
        self.dec += other.dec
        for pair, nbytes in other.bytes_sent.items():
            self.record_bytes(pair[0], pair[1], nbytes)

    def snapshot(self) -> "CostMeter":
        return CostMeter(
            self.hmult_c2c, self.hmult_c2p, self.hadd, self.hrot,
            self.enc, self.dec, dict(self.bytes_sent),
        )

    def delta(self, earlier: "CostMeter") -> "CostMeter":
        """Counter difference w.r.t. an earlier snapshot."""
        return CostMeter(
            self.hmult_c2c - earlier.hmult_c2c,
            self.hmult_c2p - earlier.hmult_c2p,
            self.hadd - earlier.hadd,
            self.hrot - earlier.hrot,
            self.enc - earlier.enc,
            self.dec - earlier.dec,
            {
                pair: nbytes - earlier.bytes_sent.get(pair, 0)
                for pair, nbytes in self.bytes_sent.items()
            },
        )

    def as_dict(self) -> dict:
        return {
            "hmult_c2c": self.hmult_c2c,
            "hmult_c2p": self.hmult_c2p,
            "hadd": self.hadd,
            "hrot": self.hrot,
            "enc": self.enc,
            "dec": self.dec,
            "bytes_sent": {f"{s}->{r}": b for (s, r), b in sorted(self.bytes_sent.items())},
            "bytes_total": self.total_bytes(),
        }


@dataclass(frozen=True)
class CostWeights:
    """Relative op costs used to collapse a meter into one number.

    c2c multiplications dominate in real HE libraries; rotations sit
    between the two multiplication kinds; additions are nearly free.
    """

    c2c: float = 4.0
    c2p: float = 1.0
    rot: float = 2.0
    add: float = 0.0
    enc: float = 1.0
    dec: float = 0.5

    def weighted(self, meter: CostMeter) -> float:
        return (
            self.c2c * meter.hmult_c2c
            + self.c2p * meter.hmult_c2p
            + self.rot * meter.hrot
            + self.add * meter.hadd
            + self.enc * meter.enc
            + self.dec * meter.dec
        )

    def arithmetic_only(self, meter: CostMeter) -> float:
        return (
            self.c2c * meter.hmult_c2c
            + self.c2p * meter.hmult_c2p
            + self.rot * meter.hrot
            + self.add * meter.hadd
        )


class HEContext:
    """Holds parameters, the meter, and the noise source for one run.

    All homomorphic operations go through a context so that metering is
    exact and noise is reproducible from the seed.
    """

    def __init__(self, params: HEParams, meter: CostMeter | None = None):
        self.params = params
        self.meter = meter if meter is not None else CostMeter()
        self._noise_rng = np.random.default_rng(params.seed)
        self.decrypt_log: list[str] = []  # actor names, for role audits

    # -- noise ---------------------------------------------------------

    def _noisy(self, slots: np.ndarray) -> np.ndarray:
        if self.params.noise_stddev == 0.0 or slots.dtype == object:
            return slots
        sigma = self.params.noise_stddev
        noise = self._noise_rng.normal(0.0, sigma, size=slots.shape)
        np.clip(noise, -0.5 * sigma, 0.5 * sigma, out=noise)
        return slots + noise

    # -- key plumbing ---------------------------------------------------

    @staticmethod
    def _check_same_context(a: CipherVector, b: CipherVector) -> None:
        if a.key_id != b.key_id:
            raise KeyMismatchError(
                f"ciphertexts from different key contexts: {a.key_id} vs {b.key_id}"
            )
        if a.width != b.width:
            raise BackendError(f"slot width mismatch: {a.width} vs {b.width}")

    # -- encryption -----------------------------------------------------

    def _pack(self, flat: np.ndarray, key: PublicKey, integer: bool) -> list[CipherVector]:
        n = self.params.slot_count
        count = max(1, -(-flat.size // n))
        out = []
        for i in range(count):
            chunk = flat[i * n : (i + 1) * n]
            if integer:
                slots = np.zeros(n, dtype=object)
                slots[:] = 0
            else:
                slots = np.zeros(n, dtype=np.float64)
            slots[: chunk.size] = chunk
            self.meter.enc += 1
            out.append(CipherVector(self._noisy(slots) if not integer else slots, key.key_id))
        return out

    def encrypt_matrix(self, m: Matrix, key: PublicKey) -> list[CipherVector]:
        """Row-major scan packed into ceil(rows*cols / N) ciphertexts."""
        return self._pack(m.row_major(), key, integer=False)

    def encrypt_slots(self, values, key: PublicKey) -> CipherVector:
        """Encrypt one ciphertext worth of real values (zero padded)."""
        flat = np.asarray(values, dtype=np.float64).reshape(-1)
        if flat.size > self.params.slot_count:
            raise BackendError(
                f"{flat.size} values exceed {self.params.slot_count} slots"
            )
        return self._pack(flat, key, integer=False)[0]

    def encrypt_int_slots(self, values, key: PublicKey) -> CipherVector:
        """Encrypt exact integers (field elements) into object slots."""
        flat = np.asarray(values, dtype=object).reshape(-1)
        if flat.size > self.params.slot_count:
            raise BackendError(
                f"{flat.size} values exceed {self.params.slot_count} slots"
            )
        return self._pack(flat, key, integer=True)[0]

    # -- decryption -----------------------------------------------------

    def _unseal(self, ct: CipherVector, key: PrivateKey, actor: str | None) -> np.ndarray:
        if ct.key_id != key.key_id:
            raise KeyMismatchError(
                f"private key {key.key_id} cannot decrypt ciphertext under {ct.key_id}"
            )
        self.meter.dec += 1
        if actor is not None:
            self.decrypt_log.append(actor)
        return ct.slots

    def decrypt_matrix(
        self,
        cts: Sequence[CipherVector] | CipherVector,
        shape: tuple[int, int],
        key: PrivateKey,
        actor: str | None = None,
    ) -> Matrix:
        """Unpack ciphertexts back into a rows x cols matrix."""
        if isinstance(cts, CipherVector):
            cts = [cts]
        rows, cols = shape
        needed = rows * cols
        capacity = sum(ct.width for ct in cts)
        if capacity < needed:
            raise BackendError(f"{capacity} slots cannot hold shape {shape}")
        flat = np.concatenate([self._unseal(ct, key, actor) for ct in cts])
        return Matrix(flat[:needed].astype(np.float64).reshape(rows, cols))

    def decrypt_int_slots(
        self, ct: CipherVector, count: int, key: PrivateKey, actor: str | None = None
    ) -> np.ndarray:
        """First ``count`` slots of an exact-integer ciphertext."""
        slots = self._unseal(ct, key, actor)
        return np.asarray(slots[:count], dtype=object)

    # -- homomorphic operations ------------------------------------------

    def _coerce_plain(self, operand: PlainOperand, like: CipherVector) -> np.ndarray:
        if np.isscalar(operand):
            return np.full(like.width, operand, dtype=like.slots.dtype)
        arr = np.asarray(operand)
        if arr.dtype != object and like.slots.dtype != object:
            arr = arr.astype(np.float64)
        flat = arr.reshape(-1)
        if flat.size > like.width:
            raise BackendError(f"plaintext of {flat.size} values exceeds slot width")
        if flat.size < like.width:
            padded = np.zeros(like.width, dtype=like.slots.dtype)
            padded[: flat.size] = flat
            flat = padded
        return flat

    def he_add(self, a: CipherVector, b: CipherVector | PlainOperand) -> CipherVector:
        if isinstance(b, CipherVector):
            self._check_same_context(a, b)
            other = b.slots
        else:
            other = self._coerce_plain(b, a)
        self.meter.hadd += 1
        return CipherVector(self._noisy(a.slots + other), a.key_id)

    def he_mult(self, a: CipherVector, b: CipherVector | PlainOperand) -> CipherVector:
        if isinstance(b, CipherVector):
            self._check_same_context(a, b)
            other = b.slots
            self.meter.hmult_c2c += 1
        else:
            other = self._coerce_plain(b, a)
            self.meter.hmult_c2p += 1
        return CipherVector(self._noisy(a.slots * other), a.key_id)

    def he_rotate(self, a: CipherVector, steps: int) -> CipherVector:
        """Cyclic left rotation: result slot i holds input slot (i + steps) mod N."""
        self.meter.hrot += 1
        return CipherVector(self._noisy(np.roll(a.slots, -steps)), a.key_id)

    def he_sum(self, cts: Iterable[CipherVector]) -> CipherVector:
        """Fold a non-empty sequence with he_add (len-1 metered additions)."""
        it = iter(cts)
        acc = next(it)
        for ct in it:
            acc = self.he_add(acc, ct)
        return acc
