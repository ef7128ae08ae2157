"""Consolidated mean +- std tables over scenario results."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .scenarios import MINUS, PLUS, read_metrics_csv

REPORT_COLUMNS = ("scenario", "phase", "trials", "hausdorff_mean", "hausdorff_std", "aligned_mean",
                  "aligned_std", "goal_reached", "interventions")
PHASE_LABELS = {MINUS: "pre-adaptation", PLUS: "adapted"}


@dataclass(frozen=True)
class ReportRow:
    scenario: str
    phase: str
    trials: int
    hausdorff_mean: float
    hausdorff_std: float
    aligned_mean: float
    aligned_std: float
    goal_reached: int
    interventions: int

    def cells(self) -> list[str]:
        return [self.scenario, self.phase, str(self.trials), f"{self.hausdorff_mean:.3f}",
                f"{self.hausdorff_std:.3f}", f"{self.aligned_mean:.2f}", f"{self.aligned_std:.2f}",
                str(self.goal_reached), str(self.interventions)]


def collect(results_dir) -> list[ReportRow]:
    """One row per (scenario, phase) found under ``results_dir``."""
    paths = sorted(Path(results_dir).glob("*/metrics.csv"))
    groups: dict[tuple[str, str], list[dict]] = {}
    for p in paths:
        for rec in read_metrics_csv(p):
            groups.setdefault((rec["scenario"], rec["phase"]), []).append(rec)
    if not groups:
        raise ValidationError(f"no results under {results_dir}")
    order = {MINUS: 0, PLUS: 1}
    rows = []
    for (scen, phase) in sorted(groups, key=lambda k: (k[0], order.get(k[1], 2), k[1])):
        recs = groups[(scen, phase)]
        h = np.array([float(r["hausdorff"]) for r in recs])
        a = np.array([float(r["aligned_percentage"]) for r in recs])
        rows.append(ReportRow(scen, phase, len(recs), float(h.mean()), float(h.std()),
                              float(a.mean()), float(a.std()),
                              sum(int(r["goal_reached"]) for r in recs),
                              sum(int(r["interventions"]) for r in recs)))
    return rows


def format_table(rows: list[ReportRow]) -> str:
    header = ["scenario", "model", "n", "hausdorff [m]", "aligned [%]", "goal", "interv."]
    body = [[r.scenario, PHASE_LABELS.get(r.phase, r.phase), str(r.trials),
             f"{r.hausdorff_mean:.3f} ± {r.hausdorff_std:.3f}",
             f"{r.aligned_mean:.2f} ± {r.aligned_std:.2f}",
             f"{r.goal_reached}/{r.trials}", str(r.interventions)] for r in rows]
    widths = [max(len(x) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(x.ljust(w) for x, w in zip(line, widths)).rstrip() for line in [header, *body]]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_report_csv(path, rows: list[ReportRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in rows:
            w.writerow(r.cells())


def read_report_csv(path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        recs = list(csv.DictReader(fh))
    return [ReportRow(r["scenario"], r["phase"], int(r["trials"]), float(r["hausdorff_mean"]),
                      float(r["hausdorff_std"]), float(r["aligned_mean"]), float(r["aligned_std"]),
                      int(r["goal_reached"]), int(r["interventions"])) for r in recs]


def report(results_dir, out_dir=None) -> tuple[str, list[ReportRow]]:
    """Table text plus rows; with ``out_dir`` also writes report.txt and report.csv."""
    rows = collect(results_dir)
    text = format_table(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        write_report_csv(out / "report.csv", rows)
    return text, rows
