"""Shared helpers for the experiment scripts."""
import argparse
import json
import os
from pathlib import Path

from penhaz.cli import write_csv


def base_parser(description, replicas):
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--replicas", type=int, default=replicas)
    p.add_argument("--seed", type=int, default=20240601)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out", default="results")
    return p


def dump(out_dir, name, report, columns):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / f"{name}.json", "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, default=str)
        fh.write("\n")
    write_csv(out / f"{name}.csv", columns, ([row[c] for c in columns] for row in report.rows))
