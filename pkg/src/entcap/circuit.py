"""Circuit data model and the two random generation strategies.

A circuit here is pure structure: rotation gates carry no angle. Angles are
supplied at simulation time as a flat parameter vector, one entry per
rotation gate in list order.

All randomness flows through explicitly passed ``numpy.random.Generator``
streams (PCG64 via ``numpy.random.default_rng``), so every generator in this
module is deterministic given its seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class GateKind(Enum):
    RX = "rx"
    RY = "ry"
    RZ = "rz"
    CNOT = "cnot"


#: Order used when a kind is drawn uniformly (index 0..3).
KIND_ORDER = (GateKind.RX, GateKind.RY, GateKind.RZ, GateKind.CNOT)

ROTATION_KINDS = frozenset({GateKind.RX, GateKind.RY, GateKind.RZ})


class Strategy(Enum):
    GATE = "gate"
    LAYER = "layer"
    MANUAL = "manual"


@dataclass(frozen=True)
class Gate:
    """One gate: a kind plus the qubits it acts on.

    Rotation gates take one qubit; CNOT takes (control, target) with
    control != target. Index-range validation against the register size
    happens in :class:`Circuit`.
    """

    kind: GateKind
    qubits: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "qubits", tuple(int(q) for q in self.qubits))
        expected = 2 if self.kind is GateKind.CNOT else 1
        if len(self.qubits) != expected:
            raise ValueError(
                f"{self.kind.value} gate takes {expected} qubit(s), got {self.qubits}"
            )
        if any(q < 0 for q in self.qubits):
            raise ValueError(f"negative qubit index in {self.qubits}")
        if self.kind is GateKind.CNOT and self.qubits[0] == self.qubits[1]:
            raise ValueError("CNOT control and target must differ")

    @property
    def is_rotation(self) -> bool:
        return self.kind in ROTATION_KINDS


@dataclass(frozen=True)
class Circuit:
    """An ordered gate list over ``n_qubits`` qubits.

    The gate budget (30 in the default pipeline) is enforced by the
    generators and by the encoder's capacity check, not by this type.
    """

    n_qubits: int
    gates: tuple[Gate, ...]
    strategy: Strategy = Strategy.MANUAL

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        if self.n_qubits < 1:
            raise ValueError(f"n_qubits must be >= 1, got {self.n_qubits}")
        for gate in self.gates:
            if max(gate.qubits) >= self.n_qubits:
                raise ValueError(
                    f"gate {gate.kind.value} on {gate.qubits} exceeds "
                    f"{self.n_qubits}-qubit register"
                )


def param_count(circuit: Circuit) -> int:
    """Number of rotation gates, i.e. the length of the parameter vector."""
    return sum(1 for g in circuit.gates if g.is_rotation)


def _check_generator_args(n_qubits: int, n_gates: int) -> None:
    if n_qubits < 2:
        raise ValueError(f"n_qubits must be >= 2, got {n_qubits}")
    if n_gates < 1:
        raise ValueError(f"n_gates must be >= 1, got {n_gates}")


def generate_gate_strategy(
    n_qubits: int, n_gates: int, rng: np.random.Generator
) -> Circuit:
    """Draw ``n_gates`` gates with uniformly random kinds and positions.

    Draw order per gate: kind (uniform over KIND_ORDER), then placement —
    one uniform qubit for a rotation, or a uniform ordered pair of distinct
    qubits (control drawn first) for CNOT.
    """
    _check_generator_args(n_qubits, n_gates)
    gates = []
    for _ in range(n_gates):
        kind = KIND_ORDER[int(rng.integers(4))]
        if kind is GateKind.CNOT:
            control = int(rng.integers(n_qubits))
            target = int(rng.integers(n_qubits - 1))
            if target >= control:
                target += 1
            gates.append(Gate(kind, (control, target)))
        else:
            gates.append(Gate(kind, (int(rng.integers(n_qubits)),)))
    return Circuit(n_qubits, tuple(gates), Strategy.GATE)


def _layer_placements(kind: GateKind, parity: int, n_qubits: int) -> list[tuple[int, ...]]:
    """Placements of one homogeneous layer, in ascending qubit order.

    Rotation layers cover every qubit of the chosen parity. CNOT layers are
    adjacent disjoint pairs (control = lower index) starting at the parity
    index, with no wrap-around.
    """
    if kind is GateKind.CNOT:
        return [(q, q + 1) for q in range(parity, n_qubits - 1, 2)]
    return [(q,) for q in range(parity, n_qubits, 2)]


def generate_layer_strategy(
    n_qubits: int, n_gates: int, rng: np.random.Generator
) -> Circuit:
    """Stack homogeneous layers until the gate budget is met.

    Draw order per layer: kind (uniform over KIND_ORDER), then parity
    (0 = even, 1 = odd). The final layer is truncated, keeping its
    lowest-index placements, so the total is exactly ``n_gates``. A draw
    whose layer would be empty (CNOT on odd qubits of a 2-qubit register)
    is discarded and redrawn.
    """
    _check_generator_args(n_qubits, n_gates)
    gates: list[Gate] = []
    while len(gates) < n_gates:
        kind = KIND_ORDER[int(rng.integers(4))]
        parity = int(rng.integers(2))
        placements = _layer_placements(kind, parity, n_qubits)
        for qubits in placements:
            if len(gates) == n_gates:
                break
            gates.append(Gate(kind, qubits))
    return Circuit(n_qubits, tuple(gates), Strategy.LAYER)


def generate_mixed(
    n_qubits: int, n_gates: int, count: int, rng: np.random.Generator
) -> list[Circuit]:
    """Generate ``count`` circuits, each from a fair coin flip between the
    two strategies (0 = gate strategy, 1 = layer strategy)."""
    _check_generator_args(n_qubits, n_gates)
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    circuits = []
    for _ in range(count):
        if int(rng.integers(2)) == 0:
            circuits.append(generate_gate_strategy(n_qubits, n_gates, rng))
        else:
            circuits.append(generate_layer_strategy(n_qubits, n_gates, rng))
    return circuits
