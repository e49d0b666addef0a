"""Subcommand CLI: generate -> label -> train -> eval / predict pipelines.

Every subcommand is deterministic given its flags and seeds, writes its
primary output atomically (partial files never persist), and drops a
``<output>.manifest.json`` beside it recording the resolved configuration,
seeds, input digests, and wall-clock duration.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .circuit import (
    Circuit,
    Strategy,
    generate_gate_strategy,
    generate_layer_strategy,
    generate_mixed,
)
from .dataset import (
    CircuitRecord,
    LabeledRecord,
    build_dataset,
    format_report,
    format_scatter,
    metrics_report,
    read_records,
    split,
    subsample_pc_distribution,
    write_records,
)
from .encoding import (
    DEFAULT_FEATURE_SCALE,
    DEFAULT_SEQ_LEN,
    CnotPlacement,
    encode_circuit,
    to_feature_sequence,
)
from .model import (
    TrainConfig,
    clamp01,
    fit,
    load_checkpoint,
    predict_batch,
    save_checkpoint,
)
from .simulator import convergence_sweep


class CliError(Exception):
    """User-facing failure; printed to stderr with a nonzero exit."""


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


class _Run:
    """Tracks one subcommand run and writes its manifest on success."""

    def __init__(self, subcommand: str, config: dict):
        self.subcommand = subcommand
        self.config = config
        self.inputs: list[str] = []
        self.outputs: list[str] = []
        self.started = time.monotonic()

    def add_input(self, path: str) -> None:
        self.inputs.append(path)

    def write_output(self, path: str, text: str) -> None:
        """Atomic write: the file appears only if fully written."""
        tmp = path + ".tmp"
        try:
            with open(tmp, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        self.outputs.append(path)

    def write_output_with(self, path: str, writer) -> None:
        """Atomic write via a callback that receives the temporary path."""
        tmp = path + ".tmp"
        try:
            writer(tmp)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.remove(tmp)
            raise
        self.outputs.append(path)

    def finish(self, primary_output: str) -> None:
        manifest = {
            "tool": "entcap",
            "version": __version__,
            "subcommand": self.subcommand,
            "config": self.config,
            "inputs": {path: _sha256(path) for path in self.inputs},
            "outputs": self.outputs,
            "duration_s": time.monotonic() - self.started,
        }
        with open(primary_output + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise CliError(f"{flag}: expected comma-separated integers, got {text!r}") from exc
    if not values:
        raise CliError(f"{flag}: empty list")
    return values


def _records_text(records: list, config: dict) -> str:
    import io

    from .dataset import FORMAT_VERSION, record_to_line

    buf = io.StringIO()
    buf.write(json.dumps({"format": FORMAT_VERSION, "config": config}, separators=(",", ":")) + "\n")
    for record in records:
        buf.write(record_to_line(record) + "\n")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> None:
    if args.qubits < 2:
        raise CliError("--qubits: need at least 2 qubits (entangling capability is undefined below 2)")
    if args.count < 1:
        raise CliError("--count: must be >= 1")
    if args.gates < 1:
        raise CliError("--gates: must be >= 1")
    config = {
        "count": args.count,
        "qubits": args.qubits,
        "gates": args.gates,
        "strategy": args.strategy,
        "seed": args.seed,
        "out": args.out,
    }
    run = _Run("generate", config)
    rng = np.random.default_rng(args.seed)
    if args.strategy == "mixed":
        circuits = generate_mixed(args.qubits, args.gates, args.count, rng)
    elif args.strategy == "gate":
        circuits = [generate_gate_strategy(args.qubits, args.gates, rng) for _ in range(args.count)]
    else:
        circuits = [generate_layer_strategy(args.qubits, args.gates, rng) for _ in range(args.count)]
    records = [CircuitRecord(f"c{i:06d}", c) for i, c in enumerate(circuits)]
    run.write_output(args.out, _records_text(records, config))
    run.finish(args.out)
    tally = {name: 0 for name in ("gate", "layer")}
    for circuit in circuits:
        tally[circuit.strategy.value] += 1
    print(f"wrote {len(records)} circuits to {args.out} (gate: {tally['gate']}, layer: {tally['layer']})")


def cmd_label(args: argparse.Namespace) -> None:
    if args.samples < 1:
        raise CliError("--samples: must be >= 1")
    if args.parallel < 1:
        raise CliError("--parallel: must be >= 1")
    config = {
        "in": getattr(args, "in"),
        "samples": args.samples,
        "seed": args.seed,
        "parallel": args.parallel,
        "out": args.out,
    }
    run = _Run("label", config)
    in_path = getattr(args, "in")
    try:
        _, records = read_records(in_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"--in: {exc}") from exc
    if not records:
        raise CliError(f"--in: {in_path} contains no circuits")

    def progress(done: int, total: int) -> None:
        step = max(1, total // 20)
        if done % step == 0 or done == total:
            print(f"labeled {done}/{total}", file=sys.stderr)

    labeled = build_dataset(
        [r.circuit for r in records],
        args.samples,
        args.seed,
        workers=args.parallel,
        progress=progress,
        ids=[r.id for r in records],
    )
    run.add_input(in_path)
    run.write_output(args.out, _records_text(labeled, config))
    run.finish(args.out)
    print(f"wrote {len(labeled)} labeled records to {args.out}")


def _require_labeled(records: list, flag: str) -> list[LabeledRecord]:
    unlabeled = [r.id for r in records if not isinstance(r, LabeledRecord)]
    if unlabeled:
        raise CliError(f"{flag}: records are unlabeled (e.g. {unlabeled[0]}); run `entcap label` first")
    return records


def _features_for(
    circuits: list[Circuit],
    n_qubits: int,
    seq_len: int,
    scale: float,
    placement: CnotPlacement,
    flag: str,
) -> np.ndarray:
    rows = []
    for circuit in circuits:
        if circuit.n_qubits != n_qubits:
            raise CliError(
                f"{flag}: circuit has {circuit.n_qubits} qubits but the model expects {n_qubits}"
            )
        if len(circuit.gates) > seq_len:
            raise CliError(
                f"{flag}: circuit has {len(circuit.gates)} gates, exceeding capacity {seq_len}"
            )
        rows.append(to_feature_sequence(encode_circuit(circuit, seq_len, placement), scale))
    return np.stack(rows)


def cmd_train(args: argparse.Namespace) -> None:
    config = {
        "data": args.data,
        "split": args.split,
        "epochs": args.epochs,
        "batch": args.batch,
        "hidden": args.hidden,
        "fc": args.fc,
        "lr": args.lr,
        "delta": args.delta,
        "seed": args.seed,
        "out": args.out,
        "log": args.log,
    }
    run = _Run("train", config)
    try:
        _, records = read_records(args.data)
    except (OSError, ValueError) as exc:
        raise CliError(f"--data: {exc}") from exc
    records = _require_labeled(records, "--data")
    if len(records) < 2:
        raise CliError("--data: need at least 2 records to split")
    if not 0.0 < args.split < 1.0:
        raise CliError("--split: must be strictly between 0 and 1")

    train_records, test_records = split(records, args.split, args.seed)
    if args.batch > len(train_records):
        raise CliError(
            f"--batch: batch size {args.batch} exceeds training set size {len(train_records)}"
        )
    if not test_records:
        raise CliError("--split: leaves an empty test set")

    n_qubits = records[0].circuit.n_qubits
    seq_len = max(DEFAULT_SEQ_LEN, max(len(r.circuit.gates) for r in records))
    placement = CnotPlacement(args.cnot_placement)
    train_x = _features_for([r.circuit for r in train_records], n_qubits, seq_len,
                            DEFAULT_FEATURE_SCALE, placement, "--data")
    train_y = np.array([r.ent for r in train_records])
    test_x = _features_for([r.circuit for r in test_records], n_qubits, seq_len,
                           DEFAULT_FEATURE_SCALE, placement, "--data")
    test_y = np.array([r.ent for r in test_records])

    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch,
        huber_delta=args.delta,
        lr=args.lr,
        hidden_dim=args.hidden,
        fc_dim=args.fc,
        seed=args.seed,
    )
    log_lines = ["epoch\ttrain_loss\ttest_loss\ttrain_pc\ttest_pc"]

    def log(stats) -> None:
        log_lines.append(
            f"{stats.epoch}\t{stats.train_loss!r}\t{stats.val_loss!r}"
            f"\t{stats.train_pc!r}\t{stats.val_pc!r}"
        )
        print(
            f"epoch {stats.epoch}/{args.epochs}  train_loss={stats.train_loss:.6f}"
            f"  test_loss={stats.val_loss:.6f}  test_pc={stats.val_pc:.4f}",
            file=sys.stderr,
        )

    best_model, _ = fit(train_x, train_y, test_x, test_y, train_config, log=log)

    extra = {
        "n_qubits": n_qubits,
        "seq_len": seq_len,
        "feature_scale": DEFAULT_FEATURE_SCALE,
        "cnot_placement": placement.value,
        "train_records": len(train_records),
        "test_records": len(test_records),
    }
    run.add_input(args.data)
    run.write_output_with(args.out, lambda tmp: save_checkpoint(best_model, tmp, extra))
    run.write_output(args.log, "\n".join(log_lines) + "\n")
    run.finish(args.out)
    print(f"wrote checkpoint to {args.out} and training log to {args.log}")


def _load_model_for_data(model_path: str, flag: str):
    try:
        model, extra = load_checkpoint(model_path)
    except (OSError, ValueError, KeyError) as exc:
        raise CliError(f"{flag}: {exc}") from exc
    required = ("n_qubits", "seq_len", "feature_scale", "cnot_placement")
    missing = [key for key in required if key not in extra]
    if missing:
        raise CliError(f"{flag}: checkpoint lacks metadata {missing}")
    return model, extra


def cmd_eval(args: argparse.Namespace) -> None:
    config = {
        "model": args.model,
        "data": args.data,
        "report": args.report,
        "subsample_groups": args.subsample_groups,
        "group_size": args.group_size,
        "seed": args.seed,
    }
    run = _Run("eval", config)
    model, extra = _load_model_for_data(args.model, "--model")
    try:
        _, records = read_records(args.data)
    except (OSError, ValueError) as exc:
        raise CliError(f"--data: {exc}") from exc
    records = _require_labeled(records, "--data")
    if len(records) < 2:
        raise CliError("--data: need at least 2 records to evaluate")

    features = _features_for(
        [r.circuit for r in records],
        int(extra["n_qubits"]),
        int(extra["seq_len"]),
        float(extra["feature_scale"]),
        CnotPlacement(extra["cnot_placement"]),
        "--data",
    )
    true_values = np.array([r.ent for r in records])
    predictions = predict_batch(model, features)
    subsample = None
    if args.subsample_groups > 0:
        if args.group_size > len(records):
            raise CliError(
                f"--group-size: {args.group_size} exceeds data size {len(records)}"
            )
        subsample = subsample_pc_distribution(
            true_values,
            predictions,
            group_size=args.group_size,
            repetitions=args.subsample_groups,
            rng=np.random.default_rng(args.seed),
        )
    report = metrics_report(true_values, predictions, subsample=subsample)
    scatter_path = args.report + ".scatter.tsv"
    run.add_input(args.model)
    run.add_input(args.data)
    run.write_output(args.report, format_report(report))
    run.write_output(scatter_path, format_scatter(report))
    run.finish(args.report)
    print(
        f"count={report.count} pc={report.pc:.4f} rmse={report.rmse:.4f} "
        f"(clamped: pc={report.pc_clamped:.4f} rmse={report.rmse_clamped:.4f})"
    )


def cmd_predict(args: argparse.Namespace) -> None:
    in_path = getattr(args, "in")
    config = {"model": args.model, "in": in_path, "out": args.out}
    run = _Run("predict", config)
    model, extra = _load_model_for_data(args.model, "--model")
    try:
        _, records = read_records(in_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"--in: {exc}") from exc

    lines = ["id\tprediction\tprediction_clamped"]
    if records:
        features = _features_for(
            [r.circuit for r in records],
            int(extra["n_qubits"]),
            int(extra["seq_len"]),
            float(extra["feature_scale"]),
            CnotPlacement(extra["cnot_placement"]),
            "--in",
        )
        raw = predict_batch(model, features)
        clamped = clamp01(raw)
        for record, y, yc in zip(records, raw, clamped):
            lines.append(f"{record.id}\t{y!r}\t{yc!r}")
    run.add_input(args.model)
    run.add_input(in_path)
    run.write_output(args.out, "\n".join(lines) + "\n")
    run.finish(args.out)
    print(f"wrote {len(lines) - 1} predictions to {args.out}")


def cmd_convergence(args: argparse.Namespace) -> None:
    qubit_counts = _parse_int_list(args.qubits, "--qubits")
    sample_counts = _parse_int_list(args.sample_counts, "--sample-counts")
    if any(q < 2 for q in qubit_counts):
        raise CliError("--qubits: every qubit count must be >= 2")
    if any(s < 1 for s in sample_counts):
        raise CliError("--sample-counts: every count must be >= 1")
    if args.repetitions < 2:
        raise CliError("--repetitions: must be >= 2")
    if args.gates < 1:
        raise CliError("--gates: must be >= 1")
    config = {
        "qubits": qubit_counts,
        "gates": args.gates,
        "sample_counts": sample_counts,
        "repetitions": args.repetitions,
        "seed": args.seed,
        "out": args.out,
    }
    run = _Run("convergence", config)
    rng = np.random.default_rng(args.seed)
    lines = ["qubits\tsample_count\tmean\tstd"]
    for n_qubits in qubit_counts:
        circuit = generate_gate_strategy(n_qubits, args.gates, rng)
        sweep_seed = int(rng.integers(0, 2**63))
        for row in convergence_sweep(circuit, sample_counts, args.repetitions, sweep_seed):
            lines.append(f"{n_qubits}\t{row.sample_count}\t{row.mean!r}\t{row.std!r}")
        print(f"finished {n_qubits}-qubit sweep", file=sys.stderr)
    run.write_output(args.out, "\n".join(lines) + "\n")
    run.finish(args.out)
    print(f"wrote convergence table to {args.out}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="entcap",
        description="Label parameterized quantum circuits with their entangling "
        "capability and train an LSTM to predict it from circuit structure.",
    )
    parser.add_argument("--version", action="version", version=f"entcap {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("generate", help="generate random circuits")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--qubits", type=int, default=6)
    p.add_argument("--gates", type=int, default=30)
    p.add_argument("--strategy", choices=["mixed", "gate", "layer"], default="mixed")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("label", help="label circuits with sampled entangling capability")
    p.add_argument("--in", required=True)
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the regressor on a labeled dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--split", type=float, default=0.9)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=1000)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--fc", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--delta", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--cnot-placement", choices=["diagonal", "offdiag"], default="diagonal")
    p.add_argument("--out", required=True)
    p.add_argument("--log", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against labeled data")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--subsample-groups", type=int, default=200)
    p.add_argument("--group-size", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="predict capability for circuits (labels not needed)")
    p.add_argument("--model", required=True)
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("convergence", help="sample-count convergence sweep")
    p.add_argument("--qubits", default="4,6,8,10")
    p.add_argument("--gates", type=int, default=30)
    p.add_argument("--sample-counts", default="25,50,100,200,400,1000")
    p.add_argument("--repetitions", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convergence)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "subcommand", None) == "train" and args.log is None:
        args.log = args.out + ".log.tsv"
    try:
        args.func(args)
    except CliError as exc:
        print(f"entcap {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"entcap {args.subcommand}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
