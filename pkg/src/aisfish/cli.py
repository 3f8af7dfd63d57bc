"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data/configuration error, 3 numeric fault.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import config as cfgmod
from .errors import ConfigError, DataError, NumericFault
from .features import DEFAULT_WINDOW_SIZE, WindowSpec, featurize_all
from .ingest import format_timestamp, ingest_files, read_store, write_provenance, write_store

logger = logging.getLogger("aisfish")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _d(command: str, key: str) -> str:
    return f"(default: {cfgmod.DEFAULTS[command][key]})"


def _window_args(p, command):
    p.add_argument("--window-kind", choices=["message", "time", "distance"],
                   help=f"trailing window definition {_d(command, 'window_kind')}")
    p.add_argument("--window-size", type=float,
                   help="messages | minutes | metres (default: 10 | 10 | 5000 by kind)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aisfish", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="TOML file, or an earlier artifact whose embedded run config to reuse; "
                        "flags override its values")
    parser.add_argument("--seed", type=int, help="global seed (default: 0)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    parser.subcommands = sub.choices

    p = sub.add_parser("ingest", help="clean raw AIS CSV files into a trajectory store")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--out", help=f"trajectory store CSV {_d('ingest', 'out')}")
    p.add_argument("--column", action="append", metavar="FIELD=HEADER",
                   help="override a column name, e.g. mmsi=MMSI (repeatable)")

    p = sub.add_parser("features", help="acceleration MA / RCOG MS per message")
    p.add_argument("--store", required=True)
    _window_args(p, "features")
    p.add_argument("--out", help=_d("features", "out"))

    p = sub.add_parser("dbi-scan", help="Davies-Bouldin index over a range of k")
    p.add_argument("--store", required=True)
    _window_args(p, "dbi-scan")
    p.add_argument("--k-min", type=int, help=_d("dbi-scan", "k_min"))
    p.add_argument("--k-max", type=int, help=_d("dbi-scan", "k_max"))
    p.add_argument("--out", help=_d("dbi-scan", "out"))

    p = sub.add_parser("label", help="cluster features and write sailing/fishing labels")
    p.add_argument("--store", required=True)
    _window_args(p, "label")
    p.add_argument("--k", type=int, help="clusters (default: 8 for message/time, 12 for distance)")
    p.add_argument("--min-run", type=int, help=_d("label", "min_run"))
    p.add_argument("--out", help=_d("label", "out"))
    p.add_argument("--model-out", help=_d("label", "model_out"))

    p = sub.add_parser("train", help="train a recurrent classifier on labeled messages")
    p.add_argument("--features", required=True, help="labeled CSV from `label`")
    p.add_argument("--cell", choices=["elman", "gru", "lstm"], help=_d("train", "cell"))
    p.add_argument("--window", type=int, help=_d("train", "window"))
    p.add_argument("--hidden", type=int, help=_d("train", "hidden"))
    p.add_argument("--stride", type=int, help=_d("train", "stride"))
    p.add_argument("--batch", type=int, help=_d("train", "batch"))
    p.add_argument("--lr", type=float, help=_d("train", "lr"))
    p.add_argument("--dropout", type=float, help=_d("train", "dropout"))
    p.add_argument("--epochs", type=int, help=_d("train", "epochs"))
    p.add_argument("--n-test", type=int, help=_d("train", "n_test"))
    p.add_argument("--n-val", type=int, help=_d("train", "n_val"))
    p.add_argument("--out", help=f"checkpoint directory {_d('train', 'out')}")

    p = sub.add_parser("evaluate", help="metrics of a checkpoint on its held-out vessels")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--split", choices=["test", "val", "train", "all"], help=_d("evaluate", "split"))
    p.add_argument("--out", help="write the report as JSON here as well as stdout")

    p = sub.add_parser("grid", help="benchmark grid over features x cells x window x hidden")
    p.add_argument("--labeled", nargs="+", required=True, metavar="NAME=CSV",
                   help="labeled datasets, e.g. O=msg.csv T=time.csv D=dist.csv")
    p.add_argument("--cells", nargs="+", choices=["elman", "gru", "lstm"], help=_d("grid", "cells"))
    p.add_argument("--windows", nargs="+", type=int, help=_d("grid", "windows"))
    p.add_argument("--hidden-sizes", nargs="+", type=int, help=_d("grid", "hidden_sizes"))
    p.add_argument("--stride", type=int, help=_d("grid", "stride"))
    p.add_argument("--batch", type=int, help=_d("grid", "batch"))
    p.add_argument("--epochs", type=int, help=_d("grid", "epochs"))
    p.add_argument("--dropout", type=float, help=_d("grid", "dropout"))
    p.add_argument("--n-test", type=int, help=_d("grid", "n_test"))
    p.add_argument("--n-val", type=int, help=_d("grid", "n_val"))
    p.add_argument("--parallel", type=int, help=_d("grid", "parallel"))
    p.add_argument("--out", help=_d("grid", "out"))
    p.add_argument("--json", help=_d("grid", "json"))

    p = sub.add_parser("ensemble", help="evaluate a 3-member voting ensemble")
    p.add_argument("--members", nargs=3, required=True, metavar="CKPT")
    p.add_argument("--mode", choices=["soft", "hard"], help=_d("ensemble", "mode"))
    p.add_argument("--average", choices=["logit", "proba"],
                   help=f"hard voting: average logits or probabilities {_d('ensemble', 'average')}")
    p.add_argument("--features", required=True, help="labeled CSV providing the reference labels")
    p.add_argument("--split", choices=["test", "val", "train", "all"], help=_d("ensemble", "split"))
    p.add_argument("--out")

    p = sub.add_parser("stream", help="online detection over NDJSON records")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--checkpoint")
    src.add_argument("--ensemble", nargs=3, metavar="CKPT")
    p.add_argument("--mode", choices=["soft", "hard"], help=_d("stream", "mode"))
    p.add_argument("--listen", metavar="HOST:PORT", help="read records from a TCP listener instead of stdin")
    p.add_argument("--replay", metavar="STORE_CSV", help="replay a trajectory store in time order")
    p.add_argument("--speedup", help=f"replay speed factor or 'max' {_d('stream', 'speedup')}")
    p.add_argument("--batch", type=int, help=f"records per micro-batch {_d('stream', 'batch')}")

    p = sub.add_parser("bench", help="measure streaming throughput")
    p.add_argument("--checkpoint", help="default: random weights at --window/--hidden")
    p.add_argument("--messages", type=int, help=_d("bench", "messages"))
    p.add_argument("--vessels", type=int, help=_d("bench", "vessels"))
    p.add_argument("--batch", type=int, help=_d("bench", "batch"))
    p.add_argument("--window", type=int, help=_d("bench", "window"))
    p.add_argument("--hidden", type=int, help=_d("bench", "hidden"))
    return parser


def _spec(rc) -> WindowSpec:
    kind = rc["window_kind"]
    size = rc.get("window_size") or DEFAULT_WINDOW_SIZE[kind]
    if kind == "message":
        size = int(size)
    return WindowSpec(kind, size)


def _load_store(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    return read_store(path)


def cmd_ingest(rc, out):
    schema = {}
    for item in rc.get("column") or []:
        key, _, col = item.partition("=")
        if not col:
            raise UsageError(f"--column expects FIELD=HEADER, got {item!r}")
        schema[key] = col
    for path in rc["inputs"]:
        if not Path(path).exists():
            raise FileNotFoundError(f"no such file: {path}")
    trajectories, report = ingest_files(rc["inputs"], schema)
    write_store(trajectories, rc["out"], rc.to_dict())
    out.write(json.dumps(report.to_dict()) + "\n")


def cmd_features(rc, out):
    spec = _spec(rc)
    feats, skipped = featurize_all(_load_store(rc["store"]).values(), spec)
    with open(rc["out"], "w", newline="") as fh:
        write_provenance(fh, rc.to_dict())
        w = csv.writer(fh)
        w.writerow(["mmsi", "timestamp", "accel", "rcog", "accel_ma", "rcog_ms"])
        for f in feats:
            for r in f:
                w.writerow([r.mmsi, format_timestamp(r.timestamp), r.accel, r.rcog, r.accel_ma, r.rcog_ms])
    out.write(json.dumps({"rows": sum(len(f) for f in feats), "skipped_short": skipped}) + "\n")


def cmd_dbi_scan(rc, out):
    from .labeling import dbi_scan

    spec = _spec(rc)
    feats, _ = featurize_all(_load_store(rc["store"]).values(), spec)
    X = np.concatenate([f.matrix() for f in feats if len(f)] or [np.zeros((0, 2))])
    rows = dbi_scan(X, range(rc["k_min"], rc["k_max"] + 1), rc["seed"])
    with open(rc["out"], "w", newline="") as fh:
        write_provenance(fh, rc.to_dict())
        w = csv.writer(fh)
        w.writerow(["k", "dbi", "error"])
        for r in rows:
            w.writerow([r.k, "" if r.dbi is None else r.dbi, r.error or ""])
    out.write(json.dumps([r.__dict__ for r in rows]) + "\n")


def cmd_label(rc, out):
    from .labeling import DEFAULT_K, label_dataset, write_cluster_model, write_labeled

    spec = _spec(rc)
    k = rc.get("k") or DEFAULT_K[spec.kind]
    rc.values["k"] = k
    rc.values["window_size"] = spec.size
    tracks, model = label_dataset(_load_store(rc["store"]).values(), spec, k, rc["seed"], rc["min_run"])
    write_labeled(tracks, rc["out"], rc.to_dict())
    write_cluster_model(model, rc["model_out"], rc.to_dict())
    labels = np.concatenate([t.labels for t in tracks]) if tracks else np.zeros(0)
    out.write(json.dumps({"k": k, "dbi": model.dbi, "rows": int(len(labels)),
                          "fishing": int(labels.sum()), "window": [spec.kind, spec.size]}) + "\n")


def _read_labeled(path):
    from .labeling import read_labeled

    if not Path(path).exists():
        raise FileNotFoundError(f"no such file: {path}")
    tracks = read_labeled(path)
    if not tracks:
        raise DataError(f"{path}: no labeled rows")
    return tracks


def cmd_train(rc, out):
    from .checkpoint import save_checkpoint
    from .model import ModelConfig
    from .train import SplitSpec, TrainConfig, fit, make_windows, split

    tracks = _read_labeled(rc["features"])
    spec = SplitSpec(rc["n_test"], rc["n_val"], rc["seed"])
    parts = split(tracks, spec)
    tcfg = TrainConfig(lr=rc["lr"], batch_size=rc["batch"], max_epochs=rc["epochs"],
                       stride=rc["stride"], seed=rc["seed"])
    mcfg = ModelConfig(rc["cell"], rc["window"], rc["hidden"], dropout_rate=rc["dropout"], seed=rc["seed"])
    win = {k: make_windows(v, mcfg.w, tcfg.stride) for k, v in parts.items()}

    def emit(row):
        out.write(json.dumps(row) + "\n")
        out.flush()

    meta = {"run_config": rc.to_dict(), "split": {"n_test": spec.n_test, "n_val": spec.n_val,
            "seed": spec.seed}, "split_mmsi": {k: sorted({t.mmsi for t in v}) for k, v in parts.items()}}
    result = None
    try:
        result = fit(tcfg, mcfg, win["train"], win["val"], on_epoch=emit, metadata=meta)
    except NumericFault as exc:
        last = getattr(exc, "checkpoint", None)
        if last is not None:
            save_checkpoint(last, rc["out"])
            logger.error("numeric fault; last good checkpoint written to %s", rc["out"])
        raise
    save_checkpoint(result.checkpoint, rc["out"])
    logger.info("best epoch %d written to %s", result.best_epoch, rc["out"])


def _split_tracks(tracks, ckpt_meta, which):
    if which == "all":
        return tracks
    ids = ckpt_meta.get("split_mmsi", {}).get(which)
    if ids is None:
        from .train import SplitSpec, split

        s = ckpt_meta.get("split", {})
        return split(tracks, SplitSpec(s.get("n_test", 50), s.get("n_val", 15), s.get("seed", 0)))[which]
    ids = set(ids)
    return [t for t in tracks if t.mmsi in ids]


def cmd_evaluate(rc, out):
    from .checkpoint import load_checkpoint
    from .evaluation import evaluate
    from .train import make_windows

    ckpt = load_checkpoint(rc["checkpoint"])
    tracks = _split_tracks(_read_labeled(rc["features"]), ckpt.metadata, rc["split"])
    stride = ckpt.metadata.get("train_config", {}).get("stride", 1)
    report, cm = evaluate(ckpt, make_windows(tracks, ckpt.config.w, stride))
    payload = {"run_config": rc.to_dict(), "report": report.to_dict(), "rates": cm.rates()}
    text = json.dumps(payload, indent=2, default=str)
    out.write(text + "\n")
    if rc.get("out"):
        Path(rc["out"]).write_text(text)


def cmd_grid(rc, out):
    from .evaluation import run_grid, write_rows
    from .train import SplitSpec, TrainConfig

    datasets = {}
    for item in rc["labeled"]:
        name, _, path = item.partition("=")
        if not path:
            raise UsageError(f"--labeled expects NAME=CSV, got {item!r}")
        datasets[name] = _read_labeled(path)
    tcfg = TrainConfig(batch_size=rc["batch"], max_epochs=rc["epochs"], stride=rc["stride"], seed=rc["seed"])
    rows = run_grid(datasets, rc["cells"], rc["windows"], rc["hidden_sizes"],
                    SplitSpec(rc["n_test"], rc["n_val"], rc["seed"]), tcfg, rc["parallel"], rc["dropout"])
    write_rows(rows, rc["out"], rc.get("json"), rc.to_dict())
    failed = sum(1 for r in rows if r.get("error"))
    out.write(json.dumps({"rows": len(rows), "failed": failed, "out": rc["out"]}) + "\n")


def _ensemble(paths, mode, average="logit"):
    from .checkpoint import load_checkpoint
    from .ensemble import Ensemble

    return Ensemble([load_checkpoint(p) for p in paths], mode=mode, average=average)


def cmd_ensemble(rc, out):
    from .ensemble import evaluate_ensemble
    from .train import make_windows

    ens = _ensemble(rc["members"], rc["mode"], rc["average"])
    tracks = _split_tracks(_read_labeled(rc["features"]), ens.members[0].metadata, rc["split"])
    cm, rates, report = evaluate_ensemble(ens, make_windows(tracks, ens.w, 1))
    payload = {"run_config": rc.to_dict(), "confusion": cm.__dict__, "rates": rates, "report": report.to_dict()}
    text = json.dumps(payload, indent=2, default=str)
    out.write(text + "\n")
    if rc.get("out"):
        Path(rc["out"]).write_text(text)


def cmd_stream(rc, out):
    from .checkpoint import load_checkpoint
    from .stream import Detector, replay, run_lines, serve_tcp

    if rc.get("checkpoint"):
        predictor = load_checkpoint(rc["checkpoint"])
    else:
        predictor = _ensemble(rc["ensemble"], rc["mode"])
    det = Detector(predictor)
    batch = rc["batch"]
    if rc.get("replay"):
        speed = rc["speedup"]
        speed = speed if speed == "max" else float(speed)
        msgs = replay(_load_store(rc["replay"]), speed)
        pending = []
        for m in msgs:
            pending.append(m)
            if len(pending) >= batch:
                for d in det.process(pending):
                    out.write(d.to_json() + "\n")
                pending.clear()
        for d in det.process(pending):
            out.write(d.to_json() + "\n")
    elif rc.get("listen"):
        host, _, port = rc["listen"].rpartition(":")
        server = serve_tcp(det, host or "127.0.0.1", int(port), out)
        logger.info("listening on %s", rc["listen"])
        try:
            server.serve_forever()
        except KeyboardInterrupt:
            pass
        finally:
            server.server_close()
    else:
        run_lines(det, sys.stdin, out, batch)
    summary = {"vessels": len(det.states), "emitted": sum(s.emitted for s in det.states.values()),
               "rejected_stale": det.rejected_stale, "rejected": det.rejected}
    print(json.dumps(summary), file=sys.stderr)


def cmd_bench(rc, out):
    from .checkpoint import Checkpoint, NormStats, load_checkpoint
    from .model import ModelConfig, init
    from .stream import bench

    if rc.get("checkpoint"):
        predictor = load_checkpoint(rc["checkpoint"])
    else:
        mcfg = ModelConfig("elman", rc["window"], rc["hidden"], seed=rc["seed"])
        norm = NormStats((48.5, -124.0, 180.0, 8.0), (0.5, 0.5, 100.0, 4.0), (48.0, -125.0, 0.0, 0.6),
                         (49.0, -123.0, 360.0, 20.0))
        predictor = Checkpoint(mcfg, init(mcfg), norm)
    result = bench(predictor, rc["vessels"], rc["messages"], rc["batch"], rc["seed"])
    out.write(json.dumps({**result, "run_config": rc.to_dict()}) + "\n")


COMMANDS = {
    "ingest": cmd_ingest, "features": cmd_features, "dbi-scan": cmd_dbi_scan, "label": cmd_label,
    "train": cmd_train, "evaluate": cmd_evaluate, "grid": cmd_grid, "ensemble": cmd_ensemble,
    "stream": cmd_stream, "bench": cmd_bench,
}


def run(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:  # report against the subcommand so its help text is shown
            parser.subcommands[args.command].error(f"unrecognized arguments: {' '.join(extra)}")
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config", "verbose")}
    try:
        rc = cfgmod.resolve(args.command, flags, cfgmod.load_file(args.config))
        COMMANDS[args.command](rc, out)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BrokenPipeError:  # downstream consumer closed, e.g. `| head`
        sys.stderr.close()
        return EXIT_OK
    except NumericFault as exc:
        print(f"numeric fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DataError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
