"""Reference-scale reproduction on the public marinecadastre extract.

Runs ingest -> labels for the three window kinds -> Elman (feature O, w=10,
s=64) -> hard-voting ensemble, all with default settings, and checks the two
banded targets: macro F1 within 5 points of 87.45% and ensemble TN rate of at
least 0.94.

    python3 scripts/reproduce_reference.py AIS_2020_04_*.csv AIS_2020_05_*.csv ... \
        --prefilter --workdir runs/reference

``--prefilter`` keeps only fishing vessels (VesselType 30) inside a box around
the Strait of Juan de Fuca, for the nationwide daily files; skip it if the
inputs are already a regional fishing extract. ``--grid`` also runs the full
27 + 6 row benchmark grid.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from aisfish.ensemble import Ensemble, evaluate_ensemble
from aisfish.evaluation import evaluate, run_grid, write_rows
from aisfish.features import WindowSpec
from aisfish.ingest import ingest_files, write_store
from aisfish.labeling import label_dataset, write_labeled
from aisfish.model import ModelConfig
from aisfish.train import SplitSpec, TrainConfig, fit, make_windows, split
from aisfish.checkpoint import save_checkpoint

log = logging.getLogger("reproduce")

REFERENCE_MACRO_F1 = 0.8745
F1_BAND = 0.05
MIN_TN_RATE = 0.94
# lat_min, lat_max, lon_min, lon_max; a generous box around the strait
JUAN_DE_FUCA = (47.8, 48.9, -125.2, -122.3)
FISHING_TYPE = "30"


def prefilter(paths, out_path, bbox=JUAN_DE_FUCA):
    lat0, lat1, lon0, lon1 = bbox
    kept = 0
    with open(out_path, "w", newline="") as out:
        writer = None
        for path in paths:
            with open(path, newline="") as fh:
                reader = csv.DictReader(fh)
                if writer is None:
                    writer = csv.DictWriter(out, fieldnames=reader.fieldnames)
                    writer.writeheader()
                for row in reader:
                    try:
                        lat, lon = float(row["LAT"]), float(row["LON"])
                    except (KeyError, ValueError):
                        continue
                    if row.get("VesselType", "").split(".")[0] == FISHING_TYPE and lat0 <= lat <= lat1 and lon0 <= lon <= lon1:
                        writer.writerow(row)
                        kept += 1
    log.info("prefilter kept %d rows", kept)
    return out_path


def reproduce(inputs, workdir, use_prefilter=False, seed=0, grid=False, parallel=1) -> dict:
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if use_prefilter:
        inputs = [prefilter(inputs, workdir / "fishing_jdf.csv")]
    trajectories, report = ingest_files(inputs)
    write_store(trajectories, workdir / "store.csv", {"command": "reproduce", "seed": seed})
    log.info("ingest: %s", report.to_dict())

    split_spec = SplitSpec(seed=seed)
    tcfg = TrainConfig(seed=seed)
    labeled, members, results = {}, [], {"ingest": report.to_dict()}
    for name, kind in (("O", "message"), ("T", "time"), ("D", "distance")):
        tracks, model = label_dataset(trajectories.values(), WindowSpec.default(kind), seed=seed)
        write_labeled(tracks, workdir / f"labeled_{name}.csv")
        labeled[name] = tracks
        parts = split(tracks, split_spec)
        win = {k: make_windows(v, 10) for k, v in parts.items()}
        res = fit(tcfg, ModelConfig("elman", 10, 64, seed=seed), win["train"], win["val"],
                  on_epoch=lambda r, n=name: log.info("%s %s", n, r))
        save_checkpoint(res.checkpoint, workdir / f"elman_{name}")
        rep, _ = evaluate(res.checkpoint, win["test"], name)
        results[f"elman_{name}"] = {"macro_f1": rep.macro.f1, "best_epoch": res.best_epoch, "k": model.k}
        members.append(res.checkpoint)
        if name == "O":
            test_windows = win["test"]

    cm, rates, _ = evaluate_ensemble(Ensemble(members, mode="hard"), test_windows)
    results["ensemble_hard"] = {"rates": rates, "confusion": cm.__dict__}
    f1 = results["elman_O"]["macro_f1"]
    results["checks"] = {
        "macro_f1_band": abs(f1 - REFERENCE_MACRO_F1) <= F1_BAND,
        "ensemble_tn_rate": rates["tn"] >= MIN_TN_RATE,
    }
    if grid:
        rows = run_grid(labeled, ["elman"], [5, 10, 15], [32, 64, 128], split_spec, tcfg, parallel)
        rows += run_grid(labeled, ["gru", "lstm"], [10], [64], split_spec, tcfg, parallel)
        write_rows(rows, workdir / "grid.csv", workdir / "grid.json", {"command": "reproduce", "seed": seed})
    (workdir / "reproduction.json").write_text(json.dumps(results, indent=2))
    return results


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("inputs", nargs="+", help="marinecadastre CSV files")
    ap.add_argument("--workdir", default="runs/reference")
    ap.add_argument("--prefilter", action="store_true", help="keep fishing vessels in the strait only")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--grid", action="store_true", help="also run the full benchmark grid")
    ap.add_argument("--parallel", type=int, default=1)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")
    res = reproduce(args.inputs, args.workdir, args.prefilter, args.seed, args.grid, args.parallel)
    print(json.dumps(res, indent=2))
    return 0 if all(res["checks"].values()) else 1


if __name__ == "__main__":
    sys.exit(main())
