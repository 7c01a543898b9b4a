"""Command-line front end.

Every subcommand reads settings from, in increasing precedence: built-in
defaults, a flat ``key = value`` file given with ``--config``, the
``TLHASH_OUT_DIR`` environment variable (output directory only) and command
line flags. Keys use underscores; the matching flag uses dashes.

Exit status: 0 success, 1 usage, 2 data error, 3 divergence, 4 infeasible
sampling.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import index
from .datasets import ingest, make_synthetic, read_features, write_features
from .errors import (
    DataError,
    DimensionError,
    DivergenceError,
    HashingError,
    InfeasibleSamplingError,
    InvalidInputError,
)
from .evaluation import default_k, evaluate, write_report
from .experiment import EncoderSpec, Split, read_rows, run_cycle, subsample, write_rows
from .sampler import read_labels, write_labels
from .trainer import TrainConfig, train

log = logging.getLogger("tlhash")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED, EXIT_INFEASIBLE = 0, 1, 2, 3, 4
OUT_DIR_ENV = "TLHASH_OUT_DIR"


class UsageError(Exception):
    pass


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text) -> list[float]:
    return [float(v) for v in str(text).split(",") if v.strip()]


def _ints(text) -> list[int]:
    return [int(v) for v in str(text).split(",") if v.strip()]


# name -> (converter, default, help)
OPTIONS = {
    "out_dir": (str, ".", "output directory"),
    # data
    "features": (str, None, "FVEC1 feature file"),
    "labels": (str, None, "label file, one 'index,label;label' per line"),
    "label_mode": (str, None, "single or multi; inferred when omitted"),
    "train_ids": (str, None, "training row list, one index per line"),
    "query_ids": (str, None, "query row list"),
    "database_ids": (str, None, "database row list"),
    "raw_features": (str, None, "text table of reals, one image per row"),
    "raw_labels": (str, None, "label file matching the raw rows"),
    # synthetic data
    "n_classes": (int, 10, "number of clusters"),
    "dim": (int, 64, "feature dimension"),
    "n_query": (int, 1000, "query images"),
    "n_database": (int, 10_000, "database images"),
    "n_train": (int, 5000, "training images, drawn from the database"),
    "separation": (float, 4.0, "distance between cluster means, in units of sigma"),
    "sigma": (float, 1.0, "within-cluster standard deviation"),
    "data_seed": (int, 0, "seed of the synthetic generator"),
    # encoder
    "architecture": (str, "linear", "linear or mlp1"),
    "code_length": (int, None, "bits per code"),
    "hidden_dim": (int, 0, "hidden width for mlp1"),
    "init_seed": (int, 0, "seed of the weight initialization"),
    # training
    "epochs": (int, 100, "training epochs"),
    "triplets_per_epoch": (int, None, "triplets sampled per epoch"),
    "batch_size": (int, None, "triplets per SGD step"),
    "learning_rate": (float, 0.01, "initial step size"),
    "lr_decay_factor": (float, 0.1, "learning-rate multiplier"),
    "lr_decay_every": (int, 40, "epochs between decays"),
    "alpha": (float, None, "margin; half the code length when omitted"),
    "lam": (float, 100.0, "quantization weight"),
    "seed": (int, 0, "triplet sampling seed"),
    "quantization_sum": (str, "referenced", "referenced or full"),
    "checkpoint_every": (int, 0, "write a checkpoint every K epochs; 0 disables"),
    "timings": (_bool, True, "record wall time in the training report"),
    # encode / search / eval
    "model": (str, None, "ENC1 encoder file"),
    "rows": (str, None, "row list to encode; all rows when omitted"),
    "name": (str, "codes", "basename of the code and id files"),
    "database": (str, None, "BHC1 database codes (ids read from the .ids sidecar)"),
    "queries": (str, None, "BHC1 query codes (ids read from the .ids sidecar)"),
    "k": (int, None, "ranking depth; eval defaults to full ranking or 5000"),
    "workers": (int, 1, "threads for query-parallel search"),
    # sweep
    "dimension": (str, None, "alpha, lambda or train_size"),
    "alpha_grid": (_floats, None, "comma-separated margins"),
    "lambda_grid": (_floats, None, "comma-separated quantization weights"),
    "train_size_grid": (_ints, None, "comma-separated training-set sizes"),
    "jobs": (int, 1, "grid points run in parallel processes"),
}

TRAIN_KEYS = ("epochs", "triplets_per_epoch", "batch_size", "learning_rate", "lr_decay_factor",
              "lr_decay_every", "alpha", "lam", "seed", "quantization_sum", "checkpoint_every")
ENCODER_KEYS = ("architecture", "code_length", "hidden_dim", "init_seed")

COMMANDS = {
    "ingest": ("convert text features and labels to FVEC1 + label file",
               ("raw_features", "raw_labels", "label_mode")),
    "make-synthetic": ("write the Gaussian-cluster benchmark and its split",
                       ("n_classes", "dim", "n_query", "n_database", "n_train", "separation",
                        "sigma", "data_seed")),
    "train": ("fit an encoder", ("features", "labels", "label_mode", "train_ids", "timings")
              + ENCODER_KEYS + TRAIN_KEYS),
    "encode": ("hash feature rows with a trained encoder", ("model", "features", "rows", "name")),
    "search": ("rank database codes for each query", ("database", "queries", "k", "workers")),
    "eval": ("mean average precision of query codes against a database",
             ("database", "queries", "labels", "label_mode", "k", "workers")),
    "sweep": ("one train/encode/eval cycle per grid value",
              ("features", "labels", "label_mode", "train_ids", "query_ids", "database_ids", "k",
               "workers", "dimension", "alpha_grid", "lambda_grid", "train_size_grid", "jobs")
              + ENCODER_KEYS + TRAIN_KEYS),
}

SWEEP_GRIDS = {"alpha": "alpha_grid", "lambda": "lambda_grid", "train_size": "train_size_grid"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tlhash", description="Supervised binary hashing from triplet labels.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for command, (help_text, keys) in COMMANDS.items():
        p = sub.add_parser(command, help=help_text, description=help_text)
        p.add_argument("--config", help="flat key = value settings file")
        for key in ("out_dir",) + keys:
            _, default, text = OPTIONS[key]
            suffix = f" (default {default})" if default is not None else ""
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=text + suffix)
    return parser


def read_config(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown setting {key!r}")
        out[key] = value.strip()
    return out


def resolve(args: argparse.Namespace, env=os.environ) -> dict:
    """Merge defaults, config file, environment and flags, converting types."""
    keys = ("out_dir",) + COMMANDS[args.command][1]
    raw = {key: OPTIONS[key][1] for key in keys}
    if args.config:
        for key, value in read_config(args.config).items():
            if key in raw:
                raw[key] = value
    if env.get(OUT_DIR_ENV):
        raw["out_dir"] = env[OUT_DIR_ENV]
    for key in keys:
        if getattr(args, key) is not None:
            raw[key] = getattr(args, key)
    settings = {}
    for key, value in raw.items():
        convert = OPTIONS[key][0]
        try:
            settings[key] = None if value is None else convert(value)
        except ValueError:
            raise UsageError(f"bad value for {key}: {value!r}") from None
    return settings


def _require(settings: dict, *keys) -> None:
    missing = [k for k in keys if settings.get(k) is None]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join(missing))


def _out_dir(settings: dict) -> Path:
    out = Path(settings["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _train_config(settings: dict) -> TrainConfig:
    _require(settings, "triplets_per_epoch", "batch_size")
    return TrainConfig(**{k: settings[k] for k in TRAIN_KEYS})


def _encoder_spec(settings: dict) -> EncoderSpec:
    _require(settings, "code_length")
    return EncoderSpec(**{k: settings[k] for k in ENCODER_KEYS})


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_ingest(s: dict) -> int:
    _require(s, "raw_features", "raw_labels")
    out = _out_dir(s)
    n, d, mode = ingest(s["raw_features"], s["raw_labels"], out / "features.fvec", out / "labels.txt",
                        s["label_mode"])
    print(f"N={n} D={d} labels={mode}")
    return EXIT_OK


def cmd_make_synthetic(s: dict) -> int:
    out = _out_dir(s)
    data = make_synthetic(s["n_classes"], s["dim"], s["n_query"], s["n_database"], s["n_train"],
                          s["separation"], s["sigma"], s["data_seed"])
    write_features(out / "features.fvec", data.features)
    write_labels(data.store, out / "labels.txt")
    write_rows(out / "query.ids", data.query_idx)
    write_rows(out / "database.ids", data.database_idx)
    write_rows(out / "train.ids", data.train_idx)
    print(f"N={len(data.store)} D={s['dim']} classes={s['n_classes']} query={len(data.query_idx)} "
          f"database={len(data.database_idx)} train={len(data.train_idx)}")
    return EXIT_OK


def _load_data(s: dict):
    _require(s, "features", "labels")
    X = read_features(s["features"])
    store = read_labels(s["labels"], s["label_mode"])
    if len(store) != X.shape[0]:
        raise DataError(f"{X.shape[0]} feature rows but {len(store)} labelled images")
    return X, store


def cmd_train(s: dict) -> int:
    X, store = _load_data(s)
    rows = read_rows(s["train_ids"], X.shape[0]) if s["train_ids"] else np.arange(X.shape[0])
    cfg, spec = _train_config(s), _encoder_spec(s)
    out = _out_dir(s)
    ckpt = None
    if cfg.checkpoint_every:
        ckpt = out / "checkpoints"
        ckpt.mkdir(exist_ok=True)
    params, report = train(X[rows], store.subset(rows), cfg, spec.init(X.shape[1]), ckpt)
    enc.save(params, out / "model.enc")
    report.write_csv(out / "train_report.csv", timings=s["timings"])
    last = report.records[-1]
    print(f"epochs={last.epoch} nll_mean={last.nll_mean:.6f} qerr_mean={last.qerr_mean:.6f}")
    return EXIT_OK


def cmd_encode(s: dict) -> int:
    _require(s, "model", "features")
    params = enc.load(s["model"])
    X = read_features(s["features"])
    rows = read_rows(s["rows"], X.shape[0]) if s["rows"] else np.arange(X.shape[0])
    if X.shape[1] != params.input_dim:
        raise DimensionError(f"encoder expects D={params.input_dim}, features have D={X.shape[1]}")
    out = _out_dir(s)
    db = index.build(enc.encode_rows(params, X[rows]), [int(r) for r in rows], params.code_length)
    index.save(db, out / f"{s['name']}.bhc")
    print(f"encoded {len(db)} rows at L={params.code_length}")
    return EXIT_OK


def cmd_search(s: dict) -> int:
    _require(s, "database", "queries", "k")
    db, queries = index.load(s["database"]), index.load(s["queries"])
    results = index.batch_search(db, queries.words, s["k"], workers=s["workers"])
    out = _out_dir(s)
    with open(out / "search.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "rank", "id", "distance"])
        for qid, ranked in zip(queries.ids, results):
            for rank, (item, dist) in enumerate(ranked, start=1):
                w.writerow([qid, rank, item, dist])
    print(f"searched {len(queries)} queries, k={s['k']}")
    return EXIT_OK


def cmd_eval(s: dict) -> int:
    _require(s, "database", "queries", "labels")
    db, queries = index.load(s["database"]), index.load(s["queries"])
    store = read_labels(s["labels"], s["label_mode"])
    k = s["k"] if s["k"] is not None else default_k(store)
    result = evaluate(db, queries.words, list(queries.ids), store, k=k, workers=s["workers"])
    write_report(result, _out_dir(s) / "eval.csv")
    print(f"MAP={result.map!r}")
    return EXIT_OK


def _sweep_point(args):
    dimension, value, X, store, split, cfg, spec, k, workers = args
    if dimension == "alpha":
        cfg = replace(cfg, alpha=value)
    elif dimension == "lambda":
        cfg = replace(cfg, lam=value)
    else:
        split = replace(split, train_idx=subsample(split.train_idx, int(value), cfg.seed))
    return run_cycle(X, store, split, cfg, spec, k, workers).evaluation.map


def cmd_sweep(s: dict) -> int:
    _require(s, "dimension", "train_ids", "query_ids", "database_ids")
    dimension = s["dimension"]
    if dimension not in SWEEP_GRIDS:
        raise UsageError(f"dimension must be one of {', '.join(SWEEP_GRIDS)}")
    grid = s[SWEEP_GRIDS[dimension]]
    if not grid:
        raise UsageError(f"{SWEEP_GRIDS[dimension]} must list at least one value")
    grid = sorted(set(grid))
    X, store = _load_data(s)
    n = X.shape[0]
    split = Split(read_rows(s["query_ids"], n), read_rows(s["database_ids"], n), read_rows(s["train_ids"], n))
    cfg, spec = _train_config(s), _encoder_spec(s)
    k = s["k"] if s["k"] is not None else default_k(store)
    jobs = [(dimension, v, X, store, split, cfg, spec, k, s["workers"]) for v in grid]

    rows, failure = [], None
    if s["jobs"] > 1:
        with ProcessPoolExecutor(s["jobs"]) as pool:
            futures = [pool.submit(_sweep_point, job) for job in jobs]
            for value, fut in zip(grid, futures):
                try:
                    rows.append((value, fut.result(), "ok"))
                except HashingError as exc:
                    failure = failure or exc
                    rows.append((value, float("nan"), f"failed: {exc}"))
    else:
        for value, job in zip(grid, jobs):
            if failure is not None:
                rows.append((value, float("nan"), "not run"))
                continue
            try:
                rows.append((value, _sweep_point(job), "ok"))
                log.info("%s=%r MAP=%.4f", dimension, value, rows[-1][1])
            except HashingError as exc:
                failure = exc
                rows.append((value, float("nan"), f"failed: {exc}"))

    path = _out_dir(s) / f"sweep_{dimension}.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["setting", "map", "status"])
        for value, m, status in rows:
            w.writerow([value, repr(m), status])
    for value, m, status in rows:
        print(f"{dimension}={value} MAP={m:.4f} {status}")
    if failure is not None:
        raise failure
    return EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "make-synthetic": cmd_make_synthetic,
    "train": cmd_train,
    "encode": cmd_encode,
    "search": cmd_search,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
}


def read_sweep(path) -> list[tuple]:
    """Parse a sweep CSV into ``(setting, map, status)`` rows."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["setting", "map", "status"]:
        raise DataError(f"{path}: not a sweep report")
    return [(float(v), float(m), status) for v, m, status in rows[1:]]


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return HANDLERS[args.command](resolve(args))
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except InvalidInputError as exc:
        print(f"invalid setting: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except InfeasibleSamplingError as exc:
        print(f"infeasible sampling: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (HashingError, ValueError, IndexError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
