"""Gate encoding: circuit -> fixed-length sequence of n x n code matrices.

Each time step holds one gate. Rotations put their kind code (RX 10, RY 20,
RZ 30) on the diagonal at the qubit's position. CNOT uses code 40 with sign
marking the role: +40 control, -40 target. Two placements are supported:

* ``diagonal`` (default): +40 at (control, control), -40 at (target, target)
* ``offdiag``: +40 at (control, target), -40 at (target, control)

Circuits shorter than the sequence length are padded with all-zero matrices
at the end. Decoding inverts all of this and is the validator for encoded
input.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .circuit import Circuit, Gate, GateKind, Strategy

#: Default sequence length (the pipeline's gate budget).
DEFAULT_SEQ_LEN = 30

#: Default divisor applied by :func:`to_feature_sequence`; the largest code
#: magnitude, so scaled features lie in [-1, 1].
DEFAULT_FEATURE_SCALE = 40.0

_ROTATION_CODE = {GateKind.RX: 10.0, GateKind.RY: 20.0, GateKind.RZ: 30.0}
_CODE_ROTATION = {v: k for k, v in _ROTATION_CODE.items()}
CNOT_CODE = 40.0


class CnotPlacement(Enum):
    DIAGONAL = "diagonal"
    OFFDIAG = "offdiag"


class DecodeError(ValueError):
    """A step matrix that no gate could have produced."""

    def __init__(self, step: int, reason: str):
        super().__init__(f"step {step}: {reason}")
        self.step = step


@dataclass(frozen=True)
class GateEncodingMatrix:
    """One time step: an n x n float matrix of gate codes (all-zero = padding)."""

    n: int
    entries: np.ndarray

    def __post_init__(self):
        entries = np.asarray(self.entries, dtype=np.float64)
        object.__setattr__(self, "entries", entries)
        if entries.shape != (self.n, self.n):
            raise ValueError(f"expected {self.n}x{self.n} matrix, got {entries.shape}")

    @property
    def is_padding(self) -> bool:
        return not self.entries.any()


@dataclass(frozen=True)
class EncodedCircuit:
    n: int
    steps: tuple[GateEncodingMatrix, ...]

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        for step in self.steps:
            if step.n != self.n:
                raise ValueError(f"step size {step.n} != circuit size {self.n}")


def encode_gate(
    gate: Gate, n: int, placement: CnotPlacement = CnotPlacement.DIAGONAL
) -> GateEncodingMatrix:
    """Encode one gate as an n x n code matrix."""
    if max(gate.qubits) >= n:
        raise ValueError(f"gate on qubits {gate.qubits} out of range for n={n}")
    entries = np.zeros((n, n), dtype=np.float64)
    if gate.kind is GateKind.CNOT:
        control, target = gate.qubits
        if placement is CnotPlacement.DIAGONAL:
            entries[control, control] = CNOT_CODE
            entries[target, target] = -CNOT_CODE
        else:
            entries[control, target] = CNOT_CODE
            entries[target, control] = -CNOT_CODE
    else:
        q = gate.qubits[0]
        entries[q, q] = _ROTATION_CODE[gate.kind]
    return GateEncodingMatrix(n, entries)


def encode_circuit(
    circuit: Circuit,
    seq_len: int = DEFAULT_SEQ_LEN,
    placement: CnotPlacement = CnotPlacement.DIAGONAL,
) -> EncodedCircuit:
    """One step per gate, in order, zero-padded to ``seq_len`` steps."""
    if len(circuit.gates) > seq_len:
        raise ValueError(
            f"circuit has {len(circuit.gates)} gates, exceeding capacity {seq_len}"
        )
    n = circuit.n_qubits
    steps = [encode_gate(g, n, placement) for g in circuit.gates]
    padding = GateEncodingMatrix(n, np.zeros((n, n)))
    steps.extend([padding] * (seq_len - len(steps)))
    return EncodedCircuit(n, tuple(steps))


def _decode_step(
    step: GateEncodingMatrix, index: int, placement: CnotPlacement
) -> Gate | None:
    """Gate for one step, or None for padding. Raises DecodeError otherwise."""
    rows, cols = np.nonzero(step.entries)
    if len(rows) == 0:
        return None
    values = step.entries[rows, cols]
    if len(rows) == 1:
        r, c, val = int(rows[0]), int(cols[0]), float(values[0])
        if r != c:
            raise DecodeError(index, f"single off-diagonal entry at ({r},{c})")
        kind = _CODE_ROTATION.get(val)
        if kind is None:
            raise DecodeError(index, f"unknown rotation code {val!r} at ({r},{r})")
        return Gate(kind, (r,))
    if len(rows) == 2:
        if sorted(values.tolist()) != [-CNOT_CODE, CNOT_CODE]:
            raise DecodeError(index, f"two entries are not +/-{CNOT_CODE}: {values.tolist()}")
        pos = int(np.argmax(values))
        neg = 1 - pos
        if placement is CnotPlacement.DIAGONAL:
            if rows[pos] != cols[pos] or rows[neg] != cols[neg]:
                raise DecodeError(index, "CNOT codes are off the diagonal")
            return Gate(GateKind.CNOT, (int(rows[pos]), int(rows[neg])))
        if rows[pos] != cols[neg] or cols[pos] != rows[neg]:
            raise DecodeError(index, "CNOT codes are not mirrored across the diagonal")
        return Gate(GateKind.CNOT, (int(rows[pos]), int(cols[pos])))
    raise DecodeError(index, f"{len(rows)} nonzero entries")


def decode_circuit(
    encoded: EncodedCircuit, placement: CnotPlacement = CnotPlacement.DIAGONAL
) -> Circuit:
    """Invert :func:`encode_circuit`. Padding must form a suffix."""
    gates = []
    padding_seen_at: int | None = None
    for index, step in enumerate(encoded.steps):
        gate = _decode_step(step, index, placement)
        if gate is None:
            if padding_seen_at is None:
                padding_seen_at = index
            continue
        if padding_seen_at is not None:
            raise DecodeError(index, f"gate step after padding step {padding_seen_at}")
        gates.append(gate)
    return Circuit(encoded.n, tuple(gates), Strategy.MANUAL)


def to_feature_sequence(
    encoded: EncodedCircuit, scale: float = DEFAULT_FEATURE_SCALE
) -> np.ndarray:
    """Row-major flatten of each step, divided by ``scale``.

    Returns a (seq_len, n*n) float64 array; with the default scale all
    features lie in [-1, 1]. The same flattening order and scale must be
    used at training and prediction time.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    if not encoded.steps:
        return np.zeros((0, encoded.n * encoded.n), dtype=np.float64)
    stacked = np.stack([step.entries.reshape(-1) for step in encoded.steps])
    return stacked / scale
