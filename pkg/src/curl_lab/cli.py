"""``curl-lab`` command line: bounds, region checks, comparison tables,
verification suites, the synthetic experiment and linear probing.

Exit codes: 0 success, 1 a verification failed, 2 usage or input error.
Every file written with ``--out`` gets a ``<out>.manifest.json`` sibling.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import sys
import time
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .bounds import REPORT_FIELDS, BoundParams, bounds_report, feasible_region_contains
from .core_math import ClassPrior, DomainError, UnsupportedConfiguration
from .dataset import LabeledDataset, write_binary, write_csv
from .losses import FeatureMap
from .parallel import resolve_threads
from .probe import linear_probe
from .serialize import dumps_json, rows_to_text
from .verify import (
    COMPARE_HEADER,
    VerificationReport,
    check_class_relaxations,
    check_lemma_lse,
    check_lemma_offset,
    check_sandwich,
    compare_bounds_table,
)

REGION_HEADER = ("C", "K", "L", "l_cont", "l_sup", "contains", "upper", "lower", "ess_sup", "ess_cont")
VERIFY_HEADER = ("name", "passed", "trials", "failures", "worst_margin")
PROBE_HEADER = ("accuracy", "initial_loss", "train_loss", "epochs", "lr", "seed")
DEFAULT_COMPARE_K = tuple(2**i for i in range(10))


class UsageError(Exception):
    """Bad argument combination detected after parsing."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def load_prior(source: str, C: int) -> ClassPrior:
    """``uniform`` or a file holding C probabilities (JSON list, or one per line / comma separated)."""
    if source == "uniform":
        return ClassPrior.uniform(C)
    path = Path(source)
    if not path.exists():
        raise UsageError(f"prior file not found: {source}")
    text = path.read_text(encoding="utf-8").strip()
    try:
        values = json.loads(text) if text.startswith("[") else [
            float(t) for t in text.replace(",", "\n").split() if t
        ]
    except ValueError as exc:
        raise UsageError(f"cannot parse prior file {source}: {exc}") from exc
    if len(values) != C:
        raise UsageError(f"prior has {len(values)} entries but --classes is {C}")
    return ClassPrior(values)


def _add_common(p: argparse.ArgumentParser, *, tabular: bool = True) -> None:
    if tabular:
        p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.add_argument("--out", help="output file (default: stdout)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $CURL_LAB_THREADS or 1); results do not depend on it")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="curl-lab", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("bounds", help="bound report for one point or a grid of (C, K, L)")
    p.add_argument("--classes", type=_int_list, required=True, help="C (comma list for a grid)")
    p.add_argument("--negatives", type=_int_list, required=True, help="K (comma list)")
    p.add_argument("--norm-bound", type=_float_list, required=True, help="L (comma list)")
    p.add_argument("--prior", default="uniform", help="uniform or a path to C probabilities")
    p.add_argument("--l-cont", type=float, default=None,
                   help="contrastive loss for competitor bounds and I_NCE (default: essential floor)")
    _add_common(p)

    p = sub.add_parser("region", help="feasible-region slacks for given loss values")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--negatives", type=int, required=True)
    p.add_argument("--norm-bound", type=float, required=True)
    p.add_argument("--prior", default="uniform")
    p.add_argument("--l-cont", type=float, required=True)
    p.add_argument("--l-sup", type=float, required=True)
    p.add_argument("--tol", type=float, default=0.0)
    p.add_argument("--check", action="store_true", help="exit 1 when the point is outside the region")
    _add_common(p)

    p = sub.add_parser("compare", help="our interval vs. competitor upper bounds over K")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--negatives", type=_int_list, default=list(DEFAULT_COMPARE_K))
    p.add_argument("--norm-bound", type=float, default=1.0)
    p.add_argument("--mode", choices=("at_ess_cont", "at_given_l_cont"), default="at_ess_cont")
    p.add_argument("--l-cont", type=float, default=None)
    p.add_argument("--ash-relaxed", action="store_true", help="max(1, .) instead of the ceiling in Ash's factor")
    _add_common(p)

    p = sub.add_parser("verify", help="lemma, sandwich and class-relaxation suites")
    p.add_argument("--suite", choices=("lemmas", "sandwich", "relaxations", "all"), default="all")
    p.add_argument("--trials", type=int, default=100_000, help="random trials per lemma cell")
    p.add_argument("--max-size", type=int, default=64, help="largest N (and K) in the lemma sweeps")
    p.add_argument("--instances", type=int, default=1000, help="sandwich instances")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", help="also write the full JSON reports here")
    _add_common(p)

    p = sub.add_parser("synth-data", help="generate the circle dataset")
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--binary", action="store_true", help="write the CURLDATA binary container")
    p.add_argument("--out", required=True)

    p = sub.add_parser("synth-train", help="contrastive MLP training with per-epoch trajectory")
    p.add_argument("--K", "--negatives", dest="K", type=_int_list, required=True, help="K (comma list)")
    p.add_argument("--seed", type=_int_list, default=[0], help="training seeds (comma list)")
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--per-class", type=int, default=1000)
    p.add_argument("--batch-size", type=int, default=1024)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--weight-decay", type=float, default=0.01)
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--eval-seed", type=int, default=0)
    p.add_argument("--record-initial", action="store_true", help="also record epoch 0 before training")
    p.add_argument("--features-out", help="CSV of final train/test features (single run only)")
    _add_common(p)

    p = sub.add_parser("probe", help="linear probe on saved features")
    p.add_argument("--features", required=True, help="CSV with columns split,label,f_0..f_{h-1}")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--norm-bound", type=float, default=None, help="L for the feature table (default: max norm)")
    _add_common(p)
    return parser


def _emit(text: str, out: str | None) -> list[str]:
    if out is None:
        sys.stdout.write(text)
        return []
    Path(out).parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    return [out]


def write_manifest(path: str, args: argparse.Namespace, argv: list[str], outputs: list[str],
                   started: float, seeds=None) -> None:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = {
        "subcommand": args.command,
        "argv": list(argv),
        "parameters": params,
        "seeds": seeds if seeds is not None else params.get("seed"),
        "tool_version": __version__,
        "outputs": outputs,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "duration_s": time.time() - started,
    }
    Path(path).write_text(dumps_json(manifest) + "\n", encoding="utf-8")


def cmd_bounds(args) -> tuple[int, str, dict]:
    rows = []
    for C, K, L in itertools.product(args.classes, args.negatives, args.norm_bound):
        prior = load_prior(args.prior, C)
        rows.append(bounds_report(BoundParams(C, K, L, prior), args.l_cont).as_dict())
    return 0, rows_to_text(rows, REPORT_FIELDS, args.format), {}


def cmd_region(args) -> tuple[int, str, dict]:
    p = BoundParams(args.classes, args.negatives, args.norm_bound, load_prior(args.prior, args.classes))
    chk = feasible_region_contains(p, args.l_cont, args.l_sup, tol=args.tol)
    row = {"C": p.C, "K": p.K, "L": p.L, "l_cont": args.l_cont, "l_sup": args.l_sup,
           "contains": chk.contains, **chk.slacks()}
    code = 1 if args.check and not chk.contains else 0
    return code, rows_to_text([row], REGION_HEADER, args.format), {}


def cmd_compare(args) -> tuple[int, str, dict]:
    rows = compare_bounds_table(args.classes, args.negatives, args.norm_bound, args.mode, args.l_cont,
                                ash_relaxed=args.ash_relaxed)
    return 0, rows_to_text(rows, COMPARE_HEADER, args.format), {}


def cmd_verify(args) -> tuple[int, str, dict]:
    reports: list[VerificationReport] = []
    threads = args.threads
    if args.suite in ("lemmas", "all"):
        reports.append(check_lemma_lse(args.max_size, trials=args.trials, seed=args.seed, threads=threads))
        reports.append(check_lemma_offset(args.max_size, trials=args.trials, seed=args.seed, threads=threads))
    if args.suite in ("sandwich", "all"):
        reports.append(check_sandwich(args.instances, seed=args.seed, threads=threads))
    if args.suite in ("relaxations", "all"):
        reports.append(check_class_relaxations(max(1, args.instances // 5), seed=args.seed, threads=threads))
    rows = [r.as_dict() for r in reports]
    code = 0 if all(r.passed for r in reports) else 1
    extra = {}
    if args.report:
        Path(args.report).write_text(dumps_json(rows) + "\n", encoding="utf-8")
        extra["report"] = args.report
    return code, rows_to_text(rows, VERIFY_HEADER, args.format), extra


def cmd_synth_data(args) -> tuple[int, str | None, dict]:
    from .synth import gen_circle

    data = gen_circle(args.classes, args.per_class, args.seed)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    (write_binary if args.binary else write_csv)(data, args.out)
    return 0, None, {}


def _write_features(path: str, train: LabeledDataset, test: LabeledDataset, model) -> None:
    rows = []
    for name, data in (("train", train), ("test", test)):
        F = model.forward(data.points).astype(np.float64)
        for lab, f in zip(data.labels, F):
            rows.append([name, str(int(lab))] + [format(float(v), ".17g") for v in f])
    h = len(rows[0]) - 2
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["split", "label"] + [f"f_{i}" for i in range(h)])
        w.writerows(rows)


def cmd_synth_train(args) -> tuple[int, str, dict]:
    from .synth.experiment import TRAJECTORY_COLUMNS, TrainConfig, prepare_data, train_run

    if args.features_out and (len(args.K) != 1 or len(args.seed) != 1):
        raise UsageError("--features-out needs a single K and a single seed")
    rows, extra = [], {}
    for K in args.K:
        for seed in args.seed:
            cfg = TrainConfig(K=K, seed=seed, C=args.classes, n_per_class=args.per_class,
                              batch_size=args.batch_size, epochs=args.epochs, lr=args.lr,
                              weight_decay=args.weight_decay, data_seed=args.data_seed,
                              eval_seed=args.eval_seed, record_initial=args.record_initial)
            result = train_run(cfg, threads=args.threads)
            rows.extend(asdict(r) for r in result.records)
            if args.features_out:
                train, test = prepare_data(cfg)
                _write_features(args.features_out, train, test, result.model)
                extra["features"] = args.features_out
    return 0, rows_to_text(rows, TRAJECTORY_COLUMNS, args.format), extra


def read_features(path: str) -> tuple[dict[str, LabeledDataset], dict[str, np.ndarray]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[:2] != ["split", "label"]:
            raise UsageError("features file must start with columns split,label")
        rows = list(reader)
    splits: dict[str, list] = {}
    for r in rows:
        splits.setdefault(r[0], []).append(r)
    if set(splits) != {"train", "test"}:
        raise UsageError("features file needs rows for both train and test splits")
    labels = {k: np.array([int(r[1]) for r in v]) for k, v in splits.items()}
    C = int(max(l.max() for l in labels.values())) + 1
    feats = {k: np.array([[float(x) for x in r[2:]] for r in v]) for k, v in splits.items()}
    data = {k: LabeledDataset(np.zeros((len(labels[k]), 1)), labels[k], C) for k in splits}
    return data, feats


def cmd_probe(args) -> tuple[int, str, dict]:
    data, feats = read_features(args.features)
    L = args.norm_bound
    if L is None:
        L = max(float(np.max(np.linalg.norm(f, axis=1))) for f in feats.values())
    res = linear_probe(data["train"], data["test"], FeatureMap(feats["train"], L), FeatureMap(feats["test"], L),
                       epochs=args.epochs, lr=args.lr, seed=args.seed)
    row = {"accuracy": res.accuracy, "initial_loss": res.initial_loss, "train_loss": res.train_loss,
           "epochs": res.epochs_run, "lr": args.lr, "seed": args.seed}
    return 0, rows_to_text([row], PROBE_HEADER, args.format), {}


COMMANDS = {
    "bounds": cmd_bounds,
    "region": cmd_region,
    "compare": cmd_compare,
    "verify": cmd_verify,
    "synth-data": cmd_synth_data,
    "synth-train": cmd_synth_train,
    "probe": cmd_probe,
}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    started = time.time()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "threads", None) is not None:
            args.threads = resolve_threads(args.threads)
        code, text, extra = COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"curl-lab: error: {exc}", file=sys.stderr)
        return 2
    except (DomainError, UnsupportedConfiguration, ValueError, OSError) as exc:
        print(f"curl-lab: error: {exc}", file=sys.stderr)
        return 2
    outputs = []
    if text is not None:
        outputs = _emit(text, args.out)
    elif args.out:
        outputs = [args.out]
    outputs += list(extra.values())
    if args.out:
        write_manifest(args.out + ".manifest.json", args, argv, outputs, started)
    return code


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
