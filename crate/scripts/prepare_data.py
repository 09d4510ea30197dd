#!/usr/bin/env python3
"""Turn the public NASA and CALCE downloads into canonical capacity CSVs.

NASA:  one B00xx.mat per cell; the discharge cycles carry a `Capacity` field.
CALCE: a directory per CS2 cell holding the Arbin .xlsx exports; discharge
       capacity is the per-cycle maximum of `Discharge_Capacity(Ah)`, with
       files taken in name order and cycle indices chained across files.

Writes `<out>/<cell>.csv` (`cycle,capacity_ah`) and `<out>/manifest.json`.

    python3 scripts/prepare_data.py nasa  raw/nasa  data/nasa
    python3 scripts/prepare_data.py calce raw/calce data/calce

Needs scipy (NASA) or pandas + openpyxl (CALCE).
"""

import argparse
import json
import pathlib
import sys

NASA_CELLS = ["B0005", "B0006", "B0007", "B0018"]
CALCE_CELLS = ["CS2_35", "CS2_36", "CS2_37", "CS2_38"]


def nasa_capacities(path):
    from scipy.io import loadmat

    cell = path.stem
    root = loadmat(path, simplify_cells=True)[cell]
    caps = []
    for cycle in root["cycle"]:
        if cycle["type"] == "discharge":
            caps.append(float(cycle["data"]["Capacity"]))
    return caps


def calce_capacities(directory):
    import pandas as pd

    caps = []
    for path in sorted(directory.glob("*.xlsx")):
        sheets = pd.read_excel(path, sheet_name=None)
        frames = [df for name, df in sheets.items() if name.startswith("Channel")]
        if not frames:
            sys.exit(f"{path}: no Channel sheet")
        df = pd.concat(frames)
        per_cycle = df.groupby("Cycle_Index")["Discharge_Capacity(Ah)"].max()
        caps.extend(float(c) for c in per_cycle.sort_index() if c > 0)
    return caps


def write_csv(path, caps):
    with open(path, "w", newline="\n") as f:
        f.write("cycle,capacity_ah\n")
        for i, c in enumerate(caps, start=1):
            f.write(f"{i},{c!r}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dataset", choices=["nasa", "calce"])
    ap.add_argument("raw", type=pathlib.Path)
    ap.add_argument("out", type=pathlib.Path)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    if args.dataset == "nasa":
        cells, nominal = NASA_CELLS, 2.0
        load = lambda c: nasa_capacities(args.raw / f"{c}.mat")
    else:
        cells, nominal = CALCE_CELLS, 1.1
        load = lambda c: calce_capacities(args.raw / c)

    entries = []
    for cell in cells:
        caps = load(cell)
        if not caps:
            sys.exit(f"{cell}: no capacity records")
        write_csv(args.out / f"{cell}.csv", caps)
        entries.append({"id": cell, "path": f"{cell}.csv"})
        print(f"{cell}: {len(caps)} cycles")

    manifest = {"name": args.dataset, "nominal_ah": nominal, "cells": entries}
    (args.out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


if __name__ == "__main__":
    main()
