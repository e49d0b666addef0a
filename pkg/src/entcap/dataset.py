"""Dataset construction, line-delimited persistence, splits, and metrics.

File format: one JSON object per line. The first line is a header carrying
the format version and the configuration used to produce the file; every
following line is one record:

    {"id": ..., "n_qubits": ..., "strategy": ...,
     "gates": [{"kind": "rx", "qubits": [0]}, ...],
     "ent": ..., "sample_count": ..., "label_seed": ..., "std_error": ...}

The four label fields are present only on labeled records. Floats are
written with Python's shortest round-trip representation, so parsing a file
back yields bit-identical values and rewriting it yields identical bytes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from multiprocessing import Pool

import numpy as np

from .circuit import Circuit, Gate, GateKind, Strategy
from .simulator import estimate_ent

FORMAT_VERSION = "entcap-records/1"


class CorrelationUndefinedError(ValueError):
    """Pearson correlation requested for input with zero variance."""


@dataclass(frozen=True)
class CircuitRecord:
    """An unlabeled dataset row: a circuit with a stable id."""

    id: str
    circuit: Circuit


@dataclass(frozen=True)
class LabeledRecord:
    """A circuit with its sampled capability label and full provenance."""

    id: str
    circuit: Circuit
    ent: float
    sample_count: int
    label_seed: int
    std_error: float


def derive_label_seed(base_seed: int, index: int) -> int:
    """Stable per-record seed: one 64-bit word from SeedSequence((base, index)).

    Each record can be relabeled from its own stored seed alone, and labels
    are independent of worker count or ordering.
    """
    return int(np.random.SeedSequence((base_seed, index)).generate_state(1, np.uint64)[0])


def _label_one(args: tuple[str, Circuit, int, int]) -> LabeledRecord:
    record_id, circuit, sample_count, seed = args
    try:
        est = estimate_ent(circuit, sample_count, seed)
    except Exception as exc:
        raise RuntimeError(f"labeling record {record_id} failed: {exc}") from exc
    return LabeledRecord(record_id, circuit, est.value, est.sample_count, est.seed, est.std_error)


def build_dataset(
    circuits: list[Circuit],
    sample_count: int,
    base_seed: int,
    workers: int = 1,
    progress=None,
    ids: list[str] | None = None,
) -> list[LabeledRecord]:
    """Label every circuit with its sampled entangling capability.

    Record ids default to ``c`` plus the zero-padded input index (pass
    ``ids`` to keep existing ones); per-record seeds come from
    :func:`derive_label_seed` on the input index, so output is
    deterministic given ``base_seed`` and identical for any ``workers``
    count. ``progress``, if given, is called with (done, total) as records
    complete.
    """
    if not circuits:
        raise ValueError("no circuits to label")
    if ids is None:
        ids = [f"c{i:06d}" for i in range(len(circuits))]
    if len(ids) != len(circuits):
        raise ValueError("ids and circuits length mismatch")
    jobs = [
        (ids[i], circuit, sample_count, derive_label_seed(base_seed, i))
        for i, circuit in enumerate(circuits)
    ]
    records: list[LabeledRecord] = []
    if workers > 1:
        with Pool(workers) as pool:
            for record in pool.imap(_label_one, jobs, chunksize=16):
                records.append(record)
                if progress is not None:
                    progress(len(records), len(jobs))
    else:
        for job in jobs:
            records.append(_label_one(job))
            if progress is not None:
                progress(len(records), len(jobs))
    return records


def split(
    records: list, train_fraction: float, seed: int
) -> tuple[list, list]:
    """Seeded shuffle, then split: first round(N * fraction) records train,
    the rest test. Disjoint and exhaustive."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    order = np.random.default_rng(seed).permutation(len(records))
    n_train = int(round(len(records) * train_fraction))
    train = [records[i] for i in order[:n_train]]
    test = [records[i] for i in order[n_train:]]
    return train, test


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Sample Pearson correlation coefficient.

    Raises :class:`CorrelationUndefinedError` when either vector is
    constant (zero variance makes the coefficient undefined); it is never
    silently reported as 0 or NaN.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 2:
        raise ValueError("pearson needs at least 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = float(xc @ xc)
    sy = float(yc @ yc)
    if sx == 0.0 or sy == 0.0:
        raise CorrelationUndefinedError("correlation undefined for constant input")
    return float((xc @ yc) / math.sqrt(sx * sy))


def rmse(x: np.ndarray, y: np.ndarray) -> float:
    """Root mean squared difference."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")
    if x.shape[0] < 1:
        raise ValueError("rmse needs at least 1 point")
    return float(np.sqrt(np.mean((x - y) ** 2)))


#: Bin edges for the subsample histogram: width 0.01 over [-1, 1].
SUBSAMPLE_BIN_EDGES = np.linspace(-1.0, 1.0, 201)

_MAX_REDRAWS = 1000


@dataclass(frozen=True)
class SubsampleResult:
    values: list[float]
    redraws: int
    bin_counts: np.ndarray  # histogram of values over SUBSAMPLE_BIN_EDGES


def subsample_pc_distribution(
    true_values: np.ndarray,
    predicted: np.ndarray,
    group_size: int = 20,
    repetitions: int = 200,
    rng: np.random.Generator | None = None,
) -> SubsampleResult:
    """Distribution of the correlation over random small test groups.

    Each repetition draws ``group_size`` indices without replacement and
    computes the correlation on the subvectors. A degenerate draw (either
    subvector constant) is redrawn; redraws are counted, not hidden, and
    more than _MAX_REDRAWS of them abort.
    """
    true_values = np.asarray(true_values, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    if true_values.shape != predicted.shape:
        raise ValueError("true/predicted length mismatch")
    if group_size > true_values.shape[0]:
        raise ValueError(
            f"group_size {group_size} exceeds data size {true_values.shape[0]}"
        )
    if group_size < 2:
        raise ValueError("group_size must be >= 2")
    if rng is None:
        rng = np.random.default_rng()
    values: list[float] = []
    redraws = 0
    while len(values) < repetitions:
        idx = rng.choice(true_values.shape[0], size=group_size, replace=False)
        try:
            values.append(pearson(true_values[idx], predicted[idx]))
        except CorrelationUndefinedError:
            redraws += 1
            if redraws > _MAX_REDRAWS:
                raise CorrelationUndefinedError(
                    f"gave up after {redraws} degenerate subsamples"
                )
    counts, _ = np.histogram(values, bins=SUBSAMPLE_BIN_EDGES)
    return SubsampleResult(values, redraws, counts)


@dataclass(frozen=True)
class MetricsReport:
    """Evaluation of predictions against labels, raw and clamped to [0, 1]."""

    pc: float
    rmse: float
    count: int
    pc_clamped: float
    rmse_clamped: float
    subsample: SubsampleResult | None = None
    scatter: list[tuple[float, float]] | None = None  # (true, predicted)


def metrics_report(
    true_values: np.ndarray,
    predicted: np.ndarray,
    subsample: SubsampleResult | None = None,
    include_scatter: bool = True,
) -> MetricsReport:
    true_values = np.asarray(true_values, dtype=np.float64).reshape(-1)
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1)
    clamped = np.clip(predicted, 0.0, 1.0)
    scatter = None
    if include_scatter:
        scatter = [(float(t), float(p)) for t, p in zip(true_values, predicted)]
    return MetricsReport(
        pc=pearson(true_values, predicted),
        rmse=rmse(true_values, predicted),
        count=int(true_values.shape[0]),
        pc_clamped=pearson(true_values, clamped),
        rmse_clamped=rmse(true_values, clamped),
        subsample=subsample,
        scatter=scatter,
    )


def format_report(report: MetricsReport) -> str:
    """Structured text rendering of a report (JSON, scatter omitted)."""
    doc: dict = {
        "count": report.count,
        "pc": report.pc,
        "rmse": report.rmse,
        "pc_clamped": report.pc_clamped,
        "rmse_clamped": report.rmse_clamped,
    }
    if report.subsample is not None:
        values = report.subsample.values
        doc["subsample"] = {
            "repetitions": len(values),
            "group_size_redraws": report.subsample.redraws,
            "median_pc": float(np.median(values)),
            "values": values,
        }
    return json.dumps(doc, indent=2) + "\n"


def format_scatter(report: MetricsReport) -> str:
    """Tab-separated (true, predicted) pairs for external plotting."""
    lines = ["true\tpredicted"]
    for t, p in report.scatter or []:
        lines.append(f"{t!r}\t{p!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Line-delimited persistence
# ---------------------------------------------------------------------------


def _circuit_fields(record_id: str, circuit: Circuit) -> dict:
    return {
        "id": record_id,
        "n_qubits": circuit.n_qubits,
        "strategy": circuit.strategy.value,
        "gates": [{"kind": g.kind.value, "qubits": list(g.qubits)} for g in circuit.gates],
    }


def record_to_line(record: CircuitRecord | LabeledRecord) -> str:
    doc = _circuit_fields(record.id, record.circuit)
    if isinstance(record, LabeledRecord):
        doc["ent"] = record.ent
        doc["sample_count"] = record.sample_count
        doc["label_seed"] = record.label_seed
        doc["std_error"] = record.std_error
    return json.dumps(doc, separators=(",", ":"))


def record_from_line(line: str) -> CircuitRecord | LabeledRecord:
    doc = json.loads(line)
    gates = tuple(
        Gate(GateKind(g["kind"]), tuple(g["qubits"])) for g in doc["gates"]
    )
    circuit = Circuit(int(doc["n_qubits"]), gates, Strategy(doc["strategy"]))
    if "ent" in doc:
        return LabeledRecord(
            doc["id"],
            circuit,
            float(doc["ent"]),
            int(doc["sample_count"]),
            int(doc["label_seed"]),
            float(doc["std_error"]),
        )
    return CircuitRecord(doc["id"], circuit)


def write_records(path, records: list, config: dict | None = None) -> None:
    """Write a header line plus one record per line. Rejects duplicate ids."""
    seen = set()
    for record in records:
        if record.id in seen:
            raise ValueError(f"duplicate record id {record.id!r}")
        seen.add(record.id)
    header = {"format": FORMAT_VERSION, "config": dict(config or {})}
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for record in records:
            fh.write(record_to_line(record) + "\n")


def read_records(path) -> tuple[dict, list]:
    """Parse a records file; malformed lines are reported by line number."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise ValueError(f"{path}: empty file (missing header line)")
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: line 1: invalid header: {exc}") from exc
        if header.get("format") != FORMAT_VERSION:
            raise ValueError(
                f"{path}: unsupported format {header.get('format')!r}; "
                f"expected {FORMAT_VERSION!r}"
            )
        for number, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                records.append(record_from_line(line))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise ValueError(f"{path}: line {number}: {exc}") from exc
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate record ids")
    return header, records
