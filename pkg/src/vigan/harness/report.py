"""Summary table over finished runs: rows (env, #traj), one column per method.

Cells hold the final mean evaluation return, averaged over runs that share a
cell. In each row the best video method other than GAIL (vigan, pixel, tcn)
is marked with ``*``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .config import METHODS
from .runner import VIDEO_METHODS, csv_text


class ReportError(ValueError):
    pass


@dataclass
class ReportTable:
    methods: list[str]
    cells: dict  # (env, n_traj) -> {method: mean return}

    def rows(self):
        return sorted(self.cells)

    def best_video(self, key) -> str | None:
        row = self.cells[key]
        cands = [m for m in VIDEO_METHODS if m in row]
        return max(cands, key=lambda m: row[m]) if cands else None


def read_summary(run_dir) -> dict:
    path = Path(run_dir) / "summary.csv"
    if not path.is_file():
        raise ReportError(f"run {run_dir}: missing summary row ({path} not found)")
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    if not rows or any(not rows[0].get(k) for k in ("env", "method", "n_traj", "mean_return")):
        raise ReportError(f"run {run_dir}: missing summary row in {path}")
    return rows[0]


def table_from_runs(run_dirs) -> ReportTable:
    if not run_dirs:
        raise ReportError("report needs at least one run")
    sums: dict = {}
    for d in run_dirs:
        r = read_summary(d)
        key = (r["env"], int(r["n_traj"]))
        sums.setdefault(key, {}).setdefault(r["method"], []).append(float(r["mean_return"]))
    cells = {k: {m: sum(v) / len(v) for m, v in row.items()} for k, row in sums.items()}
    present = {m for row in cells.values() for m in row}
    return ReportTable([m for m in METHODS if m in present], cells)


def table_csv(table: ReportTable) -> str:
    header = ["env", "n_traj", *table.methods]
    rows = [{"env": env, "n_traj": n, **table.cells[(env, n)]} for env, n in table.rows()]
    return csv_text(header, rows)


def table_from_csv(text: str) -> ReportTable:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header or header[:2] != ["env", "n_traj"]:
        raise ReportError("report CSV must start with columns env, n_traj")
    methods = header[2:]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ReportError(f"report CSV has unknown method column(s): {', '.join(unknown)}")
    cells = {}
    for line in reader:
        if len(line) != len(header):
            raise ReportError(f"report CSV row {line} has {len(line)} cells, expected {len(header)}")
        cells[(line[0], int(line[1]))] = {m: float(v) for m, v in zip(methods, line[2:]) if v != ""}
    return ReportTable(methods, cells)


def table_text(table: ReportTable) -> str:
    widths = {m: max(10, len(m)) for m in table.methods}
    lines = [f"{'env':<18}{'#traj':>6}" + "".join(f" {m:>{widths[m]}} " for m in table.methods)]
    for key in table.rows():
        best = table.best_video(key)
        row = table.cells[key]
        cells = []
        for m in table.methods:
            text = f"{row[m]:.1f}" if m in row else "-"
            cells.append(f" {text:>{widths[m]}}" + ("*" if m == best else " "))
        lines.append(f"{key[0]:<18}{key[1]:>6}" + "".join(cells))
    lines.append("* best video method other than gail in the row")
    return "\n".join(lines) + "\n"


def write_report(table: ReportTable, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    txt, csv_path = out / "report.txt", out / "report.csv"
    txt.write_text(table_text(table))
    csv_path.write_text(table_csv(table))
    return txt, csv_path

