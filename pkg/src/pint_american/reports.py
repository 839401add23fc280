"""Solve reports and their CSV / markdown / JSON renderings."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

CSV_COLUMNS = ("model", "method", "N_s", "N_v", "N_t", "alpha", "value", "error",
               "p_iter", "gmres_total", "gmres_avg", "wall_seconds")


@dataclass
class SolveReport:
    model: str
    method: str
    n_s: int
    n_t: int
    alpha: float
    value: float
    p_iter: int
    n_v: Optional[int] = None
    reference: Optional[float] = None
    gmres_total: int = 0
    gmres_counts: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    converged: bool = True
    setup_seconds: float = 0.0
    solve_seconds: float = 0.0
    wall_seconds: float = 0.0

    @property
    def error(self) -> Optional[float]:
        if self.reference is None:
            return None
        return abs(self.value - self.reference)

    @property
    def gmres_avg(self) -> float:
        return self.gmres_total / self.p_iter if self.p_iter else 0.0

    def row(self, timings: bool = True) -> dict:
        """One CSV row; optional fields become empty strings."""
        return {
            "model": self.model,
            "method": self.method,
            "N_s": self.n_s,
            "N_v": "" if self.n_v is None else self.n_v,
            "N_t": self.n_t,
            "alpha": repr(self.alpha),
            "value": repr(self.value),
            "error": "" if self.error is None else repr(self.error),
            "p_iter": self.p_iter,
            "gmres_total": self.gmres_total,
            "gmres_avg": repr(self.gmres_avg),
            "wall_seconds": f"{self.wall_seconds:.3f}" if timings else "",
        }

    def to_dict(self) -> dict:
        out = asdict(self)
        out["error"] = self.error
        out["gmres_avg"] = self.gmres_avg
        return out


def render_csv(reports: Sequence[SolveReport], timings: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rep in reports:
        writer.writerow(rep.row(timings))
    return buf.getvalue()


def render_markdown(reports: Sequence[SolveReport]) -> str:
    """Rows of ``N_t | value | error | P-Iter | G-Iter | CPU`` per model/method."""
    lines = []
    header = "| model | method | grid | N_t | value | error | P-Iter | G-Iter | CPU |"
    lines.append(header)
    lines.append("|---" * (header.count("|") - 1) + "|")
    for rep in reports:
        grid = str(rep.n_s) if rep.n_v is None else f"{rep.n_s}x{rep.n_v}"
        err = "" if rep.error is None else f"{rep.error:.2e}"
        gm = f"{rep.gmres_total}" if rep.method != "sequential" else ""
        lines.append(f"| {rep.model} | {rep.method} | {grid} | {rep.n_t} | {rep.value:.6f} | "
                     f"{err} | {rep.p_iter} | {gm} | {rep.wall_seconds:.2f} |")
    return "\n".join(lines) + "\n"


def render_json(reports: Sequence[SolveReport]) -> str:
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        return x
    payload = [{k: clean(v) for k, v in rep.to_dict().items()} for rep in reports]
    return json.dumps(payload, indent=2)


def emit_report(reports: Sequence[SolveReport], fmt: str = "csv",
                path: Optional[str | Path] = None, timings: bool = True) -> str:
    """Render ``reports`` and write them to ``path`` when given."""
    if not reports:
        raise ValueError("no reports to emit")
    if fmt == "csv":
        text = render_csv(reports, timings)
    elif fmt == "markdown":
        text = render_markdown(reports)
    elif fmt == "json":
        text = render_json(reports)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text)
    return text


def read_csv_rows(text: str) -> list[dict]:
    """Parse CSV written by ``render_csv`` back into typed dicts."""
    rows = []
    for raw in csv.DictReader(io.StringIO(text)):
        rows.append({
            "model": raw["model"],
            "method": raw["method"],
            "N_s": int(raw["N_s"]),
            "N_v": int(raw["N_v"]) if raw["N_v"] else None,
            "N_t": int(raw["N_t"]),
            "alpha": float(raw["alpha"]),
            "value": float(raw["value"]),
            "error": float(raw["error"]) if raw["error"] else None,
            "p_iter": int(raw["p_iter"]),
            "gmres_total": int(raw["gmres_total"]),
            "gmres_avg": float(raw["gmres_avg"]),
            "wall_seconds": float(raw["wall_seconds"]) if raw["wall_seconds"] else None,
        })
    return rows
