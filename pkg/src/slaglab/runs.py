"""Run directories: spec copy, manifest, solution grids, report CSVs.

Layout of one run directory:

    spec.cfg        -- the problem spec that produced the run
    manifest.json   -- status, norms, timings, errors
    u.csv / u.slag  -- solution grid (text and binary)
    f.csv / f.slag  -- twist grid
    estimates.csv   -- one row per estimate_report invocation (optional)
    counterexamples.txt -- verification records (optional)

Everything needed to re-derive a figure lives in the directory; a run is
owned by the process that created it.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

from .grids import GridFunction, load_binary, load_csv, save_binary, save_csv


class RunDir:
    def __init__(self, path):
        self.path = Path(path)
        self.manifest = {
            "status": "created",
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "norms": {},
            "timings": {},
            "errors": [],
        }

    def create(self):
        self.path.mkdir(parents=True, exist_ok=True)
        return self

    def write_spec(self, text: str):
        (self.path / "spec.cfg").write_text(text)

    def write_manifest(self):
        with open(self.path / "manifest.json", "w") as fh:
            json.dump(self.manifest, fh, indent=2, sort_keys=True)

    def record_error(self, message: str):
        self.manifest["errors"].append(message)

    def write_solution(self, u: GridFunction, f: GridFunction):
        save_csv(u, self.path / "u.csv")
        save_binary(u, self.path / "u.slag")
        save_csv(f, self.path / "f.csv")
        save_binary(f, self.path / "f.slag")

    def write_counterexamples(self, records):
        with open(self.path / "counterexamples.txt", "w") as fh:
            for record in records:
                fh.write(record + "\n")

    def write_rows(self, filename: str, rows):
        rows = list(rows)
        if not rows:
            return
        with open(self.path / filename, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)


def load_run(path):
    """(u, f, manifest) from a run directory, preferring the binary grids."""
    path = Path(path)
    with open(path / "manifest.json") as fh:
        manifest = json.load(fh)
    if (path / "u.slag").exists():
        u = load_binary(path / "u.slag")
        f = load_binary(path / "f.slag")
    else:
        u = load_csv(path / "u.csv")
        f = load_csv(path / "f.csv")
    return u, f, manifest
