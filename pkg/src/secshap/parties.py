"""Simulated parties, message routing with byte accounting, and the
client-assignment rules for layer decryption.

Parties are in-process actors; the router delivers payloads directly
but sizes every message so per-pair traffic is exact.  Servers never
hold the HE private key, which makes role violations raise instead of
silently succeeding.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hebackend import CipherVector, CostMeter, HEParams, PrivateKey, PublicKey, ciphertext_bytes
from .matrix import LabelVector, Matrix
from .sharing import FieldParams, field_element_bytes

__all__ = [
    "Party",
    "Router",
    "AssignmentError",
    "validate_assignment",
    "assign_decryptors",
    "payload_bytes",
    "SERVER_P",
    "SERVER_A",
    "client_name",
]

SERVER_P = "server_p"
SERVER_A = "server_a"
KEY_BYTES = 32


def client_name(i: int) -> str:
    return f"client_{i}"


@dataclass
class Party:
    name: str
    role: str  # "client" or "server"
    he_public: PublicKey | None = None
    he_private: PrivateKey | None = None
    bytes_in: int = 0
    bytes_out: int = 0

    def require_private_key(self) -> PrivateKey:
        if self.he_private is None:
            raise PermissionError(f"{self.name} ({self.role}) holds no private key")
        return self.he_private


def payload_bytes(payload, he_params: HEParams, field: FieldParams | None = None) -> int:
    """Wire size of a payload, by type."""
    if payload is None:
        return 0
    if isinstance(payload, CipherVector):
        return ciphertext_bytes(he_params)
    if isinstance(payload, (PublicKey, PrivateKey)):
        return KEY_BYTES
    if isinstance(payload, Matrix):
        return payload.rows * payload.cols * 8
    if isinstance(payload, LabelVector):
        return len(payload) * 8
    if isinstance(payload, np.ndarray):
        if payload.dtype == object:
            elem = field_element_bytes(field) if field is not None else 8
            return payload.size * elem
        return payload.size * payload.itemsize
    if isinstance(payload, (int, float, np.integer, np.floating)):
        return 8
    if isinstance(payload, (list, tuple)):
        return sum(payload_bytes(p, he_params, field) for p in payload)
    if isinstance(payload, dict):
        return sum(payload_bytes(p, he_params, field) for p in payload.values())
    raise TypeError(f"cannot size payload of type {type(payload).__name__}")


class Router:
    """Delivers payloads between registered parties and meters the bytes."""

    def __init__(self, meter: CostMeter, he_params: HEParams, field: FieldParams | None = None):
        self.meter = meter
        self.he_params = he_params
        self.field = field
        self.parties: dict[str, Party] = {}

    def register(self, party: Party) -> Party:
        if party.name in self.parties:
            raise ValueError(f"party {party.name} already registered")
        self.parties[party.name] = party
        return party

    def send(self, sender: str, receiver: str, payload):
        if sender not in self.parties or receiver not in self.parties:
            missing = sender if sender not in self.parties else receiver
            raise KeyError(f"unknown party {missing}")
        nbytes = payload_bytes(payload, self.he_params, self.field)
        self.meter.record_bytes(sender, receiver, nbytes)
        self.parties[sender].bytes_out += nbytes
        self.parties[receiver].bytes_in += nbytes
        return payload

    def broadcast(self, sender: str, receivers, payload) -> None:
        for receiver in receivers:
            self.send(sender, receiver, payload)


class AssignmentError(RuntimeError):
    """No decryptor sequence satisfies the policy constraints."""


def validate_assignment(
    sequence,
    n: int,
    num_layers: int,
    level: str = "basic",
    model_owner: int | None = None,
    batch_owners=(),
) -> list[str]:
    """Check a decryptor sequence i_1..i_{L+2} against the policy.

    Returns the list of violated constraints (empty means valid).
    Position 1 is the batch holder; positions 2..L+1 decrypt the layer
    outputs; position L+1 sees the predicted labels; position L+2 sees
    the label differences.
    """
    violations: list[str] = []
    if level not in ("basic", "full"):
        return [f"unknown security level {level!r}"]
    if level == "basic" and n < 4:
        violations.append(f"basic level requires n >= 4, got n={n}")
    if level == "full" and n < num_layers + 2:
        violations.append(
            f"full level requires n >= L + 2 = {num_layers + 2}, got n={n}"
        )
    sequence = list(sequence)
    if len(sequence) != num_layers + 2:
        violations.append(
            f"sequence length {len(sequence)} != L + 2 = {num_layers + 2}"
        )
        return violations
    batch_owners = frozenset(batch_owners)
    for pos in range(1, len(sequence)):
        if sequence[pos] == sequence[pos - 1]:
            violations.append(
                f"consecutive assignees equal at positions {pos}/{pos + 1}: "
                f"client {sequence[pos]}"
            )
    if model_owner is not None and model_owner in sequence[1:]:
        violations.append(f"model owner {model_owner} appears as an assignee")
    label_client = sequence[num_layers]  # i_{L+1}
    if label_client in batch_owners:
        violations.append(
            f"label client {label_client} owns samples in the batch"
        )
    if level == "full" and len(set(sequence[: num_layers + 1])) != num_layers + 1:
        violations.append("full level requires i_1..i_{L+1} pairwise distinct")
    return violations


def assign_decryptors(
    clients,
    num_layers: int,
    model_owner: int | None,
    batch_owners,
    level: str = "basic",
    offset: int = 0,
) -> list[int]:
    """Deterministic round-robin decryptor sequence satisfying the policy.

    ``offset`` rotates the eligible pool so load spreads across batches
    while staying reproducible.
    """
    clients = sorted(clients)
    n = len(clients)
    batch_owners = frozenset(batch_owners)
    eligible = [c for c in clients if c != model_owner]
    if not eligible:
        raise AssignmentError("no eligible clients besides the model owner")
    holder = min(batch_owners) if batch_owners else eligible[offset % len(eligible)]
    total = num_layers + 2

    def extend(sequence: list[int], used: set, cursor: int):
        pos = len(sequence) + 1  # 1-based position being filled
        if pos > total:
            return sequence
        is_label_client = pos == num_layers + 1
        for step in range(len(eligible)):
            cand = eligible[(cursor + step) % len(eligible)]
            if cand == sequence[-1]:
                continue
            if is_label_client and cand in batch_owners:
                continue
            if level == "full" and pos <= num_layers + 1 and cand in used:
                continue
            found = extend(sequence + [cand], used | {cand}, cursor + step + 1)
            if found is not None:
                return found
        return None

    sequence = extend([holder], {holder}, offset)
    if sequence is None:
        raise AssignmentError(
            f"no decryptor sequence exists for owner={model_owner}, "
            f"batch={sorted(batch_owners)}, n={n}, L={num_layers}, level={level}"
        )
    violations = validate_assignment(
        sequence, n, num_layers, level, model_owner, batch_owners
    )
    if violations:
        raise AssignmentError("; ".join(violations))
    return sequence
