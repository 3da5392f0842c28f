"""Experiment runner: sample data, partition it across parties, train, evaluate, report.

Settings come from flags or from a ``--config`` file holding one ``key = value``
per line (same names as the flags); flags override the file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import DEFAULT_GLOBAL_BINS, LossKind, TrainingConfig
from .data import (
    Dataset,
    SampleMode,
    load_csv,
    make_synthetic,
    partition_schedule,
    sample_split,
    split_by_counts,
)
from .errors import (
    ConfigurationError,
    PaxError,
    PartitionError,
    SamplingError,
)
from .gbt import sigmoid
from .metrics import average_rows, classification_metrics, rmse
from .protocol import run_training

log = logging.getLogger("paxboost")

SYNTHETIC = ":synthetic:"
PER_PARTY_DEFAULT = 1000
TEST_SIZE_DEFAULT = 1000
WALLTIME_KEYS = ("train_walltime_seconds", "total_walltime_seconds")


class UsageError(Exception):
    """Bad flags or config; maps to exit code 2."""


def _counts(text: str) -> list[int]:
    try:
        out = [int(c) for c in text.split(",") if c.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not out or any(c < 1 for c in out):
        raise argparse.ArgumentTypeError("counts must be positive integers")
    return out


def _on_off(text: str) -> bool:
    v = text.strip().lower()
    if v in ("on", "true", "yes", "1"):
        return True
    if v in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError(f"expected on/off, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="paxboost",
        description="Federated histogram boosting with party-adaptive bin resolution.",
    )
    src = p.add_argument_group("data")
    src.add_argument("--data", metavar="CSV", help="numeric CSV with a header row")
    src.add_argument("--synthetic", dest="data", action="store_const", const=SYNTHETIC,
                     help="use the built-in non-IID synthetic dataset (default)")
    src.add_argument("--label-col", default="label", help="label column name in --data")
    src.add_argument("--sample-mode", choices=[m.value for m in SampleMode], default="random")
    src.add_argument("--train-size", type=int, help="pooled training rows (default 1000 per party)")
    src.add_argument("--test-size", type=int, default=TEST_SIZE_DEFAULT)
    src.add_argument("--test-mode", choices=["common", "per-party"], default="common",
                     help="evaluate every party on one test set or on its own slice")

    part = p.add_argument_group("partitioning")
    part.add_argument("--parties", type=int, help="number of parties (default 3)")
    part.add_argument("--partition-step", choices=["1", "2", "3", "4", "5", "all"],
                      help="three-party skew schedule step, or all five")
    part.add_argument("--counts", type=_counts, help="explicit party sizes, e.g. 1500,1160,340")

    tr = p.add_argument_group("training")
    tr.add_argument("--rounds", type=int, default=100)
    tr.add_argument("--bins", type=int, default=DEFAULT_GLOBAL_BINS,
                    help="global bin budget; the error tolerance is 1/bins")
    tr.add_argument("--lambda", dest="reg_lambda", type=float, default=1.0)
    tr.add_argument("--gamma", type=float, default=0.0)
    tr.add_argument("--eta", type=float, default=0.3, help="learning rate")
    tr.add_argument("--max-depth", type=int, default=6)
    tr.add_argument("--loss", choices=[k.value for k in LossKind], default="logistic")
    tr.add_argument("--quantize-predict", type=_on_off, default=True, metavar="{on,off}")

    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="paxboost-out", help="output directory")
    p.add_argument("--config", help="file of `key = value` lines; flags take precedence")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def config_file_args(path: str, parser: argparse.ArgumentParser) -> list[str]:
    """Translate a ``key = value`` file into argv tokens."""
    known = {s for a in parser._actions for s in a.option_strings if s.startswith("--")}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    argv: list[str] = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected `key = value`")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if flag not in known or flag == "--config":
            raise UsageError(f"{path}:{lineno}: unknown key {key.strip()!r}")
        if flag in ("--synthetic", "--verbose"):
            if _on_off(value):
                argv.append(flag)
            continue
        argv += [flag, value]
    return argv


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    pre, _ = parser.parse_known_args(argv)
    if pre.config:
        argv = config_file_args(pre.config, parser) + argv
    args = parser.parse_args(argv)
    _resolve(args)
    return args


def _resolve(args: argparse.Namespace) -> None:
    """Fill derived settings and reject inconsistent combinations."""
    if args.data is None:
        args.data = SYNTHETIC
    if args.partition_step and args.counts:
        raise UsageError("--partition-step and --counts are mutually exclusive")
    if args.partition_step:
        if args.parties not in (None, 3):
            raise UsageError("the partition schedule is defined for exactly 3 parties")
        args.parties = 3
    elif args.counts:
        if args.parties not in (None, len(args.counts)):
            raise UsageError("--parties disagrees with the number of --counts")
        args.parties = len(args.counts)
        if args.train_size not in (None, sum(args.counts)):
            raise UsageError("--train-size disagrees with the sum of --counts")
        args.train_size = sum(args.counts)
    elif args.parties is None:
        args.parties = 3
    if args.parties < 1:
        raise UsageError("--parties must be >= 1")
    if args.train_size is None:
        args.train_size = PER_PARTY_DEFAULT * args.parties
    if args.train_size < args.parties:
        raise UsageError("--train-size must give every party at least one row")
    if args.test_size < 1:
        raise UsageError("--test-size must be >= 1")
    if args.test_mode == "per-party" and args.test_size < args.parties:
        raise UsageError("--test-size must give every party at least one test row")
    if args.bins < 1:
        raise UsageError("--bins must be >= 1")
    try:
        args.training = TrainingConfig.from_bins(
            args.bins,
            max_rounds=args.rounds,
            reg_lambda=args.reg_lambda,
            gamma=args.gamma,
            learning_rate=args.eta,
            max_depth=args.max_depth,
            loss=args.loss,
            quantize_predict=args.quantize_predict,
        )
    except ConfigurationError as exc:
        raise UsageError(str(exc)) from None


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------


def load_pool(args) -> tuple[Dataset, Dataset]:
    n = args.train_size + args.test_size
    if args.data == SYNTHETIC:
        ds = make_synthetic(n, seed=args.seed)
    else:
        ds = load_csv(args.data, args.label_col)
    return sample_split(ds, args.train_size, args.test_size, args.sample_mode, args.seed)


def party_layouts(args, n_train: int) -> list[tuple[Optional[int], list[np.ndarray]]]:
    """(step id, per-party row indices) for every run requested."""
    if args.partition_step:
        spec = partition_schedule(n_train, seed=args.seed)
        steps = range(1, 6) if args.partition_step == "all" else [int(args.partition_step)]
        return [(s, spec.steps[s - 1]) for s in steps]
    counts = args.counts or [len(a) for a in np.array_split(np.arange(n_train), args.parties)]
    return [(None, split_by_counts(n_train, counts))]


def score_rows(loss: LossKind, raw: np.ndarray, y: np.ndarray) -> dict:
    if loss is LossKind.BINARY_LOGISTIC:
        return classification_metrics(sigmoid(raw), y)
    return {"rmse": rmse(raw, y)}


def run_one(args, train: Dataset, test: Dataset, step: Optional[int], rows: list[np.ndarray]) -> tuple[dict, object]:
    cfg: TrainingConfig = args.training
    parties = [train.subset(r) for r in rows]
    ids = [f"party{i + 1}" for i in range(len(parties))]
    start = time.perf_counter()
    result = run_training(cfg, parties, ids)
    walltime = time.perf_counter() - start
    if args.test_mode == "per-party":
        test_sets = [test.subset(r) for r in np.array_split(np.arange(test.n_samples), len(parties))]
    else:
        test_sets = [test] * len(parties)
    party_rows = []
    for pid, party, ts in zip(ids, result.parties, test_sets):
        row = {"party": pid, "n_train": party.n_samples, "n_test": ts.n_samples}
        row.update(score_rows(cfg.loss, party.predict_raw(ts.X), ts.y))
        party_rows.append(row)
    metric_keys = [k for k in party_rows[0] if k not in ("party", "n_train", "n_test")]
    run = {
        "partition_step": step,
        "counts": [len(r) for r in rows],
        "epsilons": result.epsilons,
        "eps_m": result.telemetry[-1].eps_m if result.telemetry else None,
        "rounds_trained": len(result.model.trees),
        "final_train_loss": result.telemetry[-1].train_loss if result.telemetry else None,
        "bytes_sent": result.bytes_sent,
        "parties": party_rows,
        "average": average_rows([{k: r[k] for k in metric_keys} for r in party_rows]),
        "train_walltime_seconds": walltime,
    }
    return run, result


def run_experiment(args) -> dict:
    """Run every requested partition and write report, model and telemetry files."""
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    train, test = load_pool(args)
    layouts = party_layouts(args, train.n_samples)
    runs = []
    for step, rows in layouts:
        log.info("training %s with counts %s", f"step {step}" if step else "run",
                 [len(r) for r in rows])
        run, result = run_one(args, train, test, step, rows)
        suffix = f"_step{step}" if len(layouts) > 1 else ""
        (out / f"model{suffix}.json").write_text(result.model.to_json())
        (out / f"telemetry{suffix}.jsonl").write_text(result.telemetry_jsonl())
        runs.append(run)
    if args.partition_step:
        spec = partition_schedule(train.n_samples, seed=args.seed)
        (out / "partition.json").write_text(spec.to_json())
    report = {
        "config": args.training.to_dict(),
        "experiment": {
            "data": "synthetic" if args.data == SYNTHETIC else str(args.data),
            "label_col": args.label_col,
            "sample_mode": args.sample_mode,
            "seed": args.seed,
            "train_size": train.n_samples,
            "test_size": test.n_samples,
            "test_mode": args.test_mode,
            "parties": args.parties,
            "partition_step": args.partition_step,
            "n_features": train.n_features,
        },
        "runs": runs,
        "total_walltime_seconds": time.perf_counter() - t0,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(format_table(report))
    return report


def strip_walltime(obj):
    """Copy of a report with walltime fields removed, for reproducibility checks."""
    if isinstance(obj, dict):
        return {k: strip_walltime(v) for k, v in obj.items() if k not in WALLTIME_KEYS}
    if isinstance(obj, list):
        return [strip_walltime(v) for v in obj]
    return obj


def _fmt(v) -> str:
    return "n/a" if v is None else f"{v:.4f}"


def format_table(report: dict) -> str:
    runs = report["runs"]
    keys = [k for k in runs[0]["average"]] if runs else []
    head = ["step", "party", "n_train"] + [k.upper() for k in keys]
    lines = [head]
    for run in runs:
        step = "-" if run["partition_step"] is None else str(run["partition_step"])
        for row in run["parties"]:
            lines.append([step, row["party"], str(row["n_train"])] + [_fmt(row[k]) for k in keys])
        lines.append([step, "average", str(sum(run["counts"]))] + [_fmt(run["average"][k]) for k in keys])
    widths = [max(len(r[i]) for r in lines) for i in range(len(head))]
    text = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in lines]
    text.insert(1, "  ".join("-" * w for w in widths))
    text.append("")
    for run in runs:
        step = "-" if run["partition_step"] is None else run["partition_step"]
        text.append(f"step {step}: counts {run['counts']}, rounds {run['rounds_trained']}, "
                    f"train walltime {run['train_walltime_seconds']:.2f} s")
    return "\n".join(text) + "\n"


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(f"paxboost: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse reports its own usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        report = run_experiment(args)
    except (SamplingError, PartitionError) as exc:
        print(f"paxboost: error: {exc}", file=sys.stderr)
        return 2
    except (PaxError, OSError) as exc:
        print(f"paxboost: failed: {exc}", file=sys.stderr)
        return 1
    sys.stdout.write(format_table(report))
    return 0


if __name__ == "__main__":
    sys.exit(main())
