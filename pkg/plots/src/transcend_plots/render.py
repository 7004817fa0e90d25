"""CSV-to-figure rendering.

The input contract is the transcend-lab report CSV: a `#`-comment version
line, then the header ``experiment,setting,n_experts,coverage,alpha,
temperature,d_size,metric,value,seed``. Each figure id selects its rows by
the ``experiment`` column and draws one line per grid series. Rendering is
deterministic: fixed style, fixed size, pinned PNG metadata.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

REQUIRED_COLUMNS = [
    "experiment", "setting", "n_experts", "coverage", "alpha",
    "temperature", "d_size", "metric", "value", "seed",
]

FIGURE_IDS = ("fig3_coverage", "fig4_temperature", "fig5_alpha", "fig6_twohop")

_STYLE = {
    "figure.figsize": (6.4, 4.2),
    "figure.dpi": 120,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.marker": "o",
    "lines.markersize": 4,
    "font.size": 10,
    "svg.hashsalt": "transcend-plots",
}

_PNG_METADATA = {"Software": "transcend-lab-plots"}


class RenderError(Exception):
    """Bad input CSV or figure specification."""


@dataclass(frozen=True)
class FigureSpec:
    figure_id: str
    csv_path: Path
    output_path: Path
    title: str | None = None
    legend: bool = True

    def __post_init__(self) -> None:
        if self.figure_id not in FIGURE_IDS:
            raise RenderError(
                f"unknown figure id {self.figure_id!r}; expected one of {FIGURE_IDS}"
            )


@dataclass
class Report:
    rows: list[dict] = field(default_factory=list)

    def select(self, experiment: str, metrics: set[str] | None = None) -> list[dict]:
        out = [r for r in self.rows if r["experiment"] == experiment]
        if metrics is not None:
            out = [r for r in out if r["metric"] in metrics]
        return out


def load_report(path: Path) -> Report:
    """Parse the report CSV, skipping comment lines and typing the columns."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise RenderError(f"report not found: {path}") from exc
    lines = [line for line in text.splitlines() if line and not line.startswith("#")]
    if not lines:
        raise RenderError(f"report {path} has no header row")
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    header = reader.fieldnames or []
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise RenderError(f"report {path} is missing columns: {', '.join(missing)}")
    rows = []
    for raw in reader:
        if any(raw.get(c) in (None, "") for c in REQUIRED_COLUMNS):
            raise RenderError(f"report {path} has a short row: {raw}")
        rows.append({
            "experiment": raw["experiment"],
            "setting": raw["setting"],
            "n_experts": int(raw["n_experts"]),
            "coverage": float(raw["coverage"]),
            "alpha": float(raw["alpha"]),
            "temperature": float(raw["temperature"]),
            "d_size": int(raw["d_size"]),
            "metric": raw["metric"],
            "value": float(raw["value"]),
            "seed": int(raw["seed"]),
        })
    if not rows:
        raise RenderError(f"report {path} contains no data rows")
    return Report(rows=rows)


def _series(rows: list[dict], x_key: str, group_keys: tuple[str, ...],
            label_fmt) -> list[tuple[str, list[float], list[float]]]:
    groups: dict[tuple, dict[float, list[float]]] = {}
    for row in rows:
        key = tuple(row[k] for k in group_keys)
        groups.setdefault(key, {}).setdefault(row[x_key], []).append(row["value"])
    series = []
    for key in sorted(groups):
        points = groups[key]
        xs = sorted(points)
        ys = [sum(points[x]) / len(points[x]) for x in xs]  # mean over seeds
        series.append((label_fmt(key), xs, ys))
    return series


def _figure_data(spec: FigureSpec, report: Report):
    accuracy = {"accuracy"}
    if spec.figure_id == "fig3_coverage":
        rows = report.select("fig3_coverage", accuracy)
        series = _series(rows, "coverage", ("n_experts",),
                         lambda k: f"{k[0]} experts")
        return series, "expert coverage", "query accuracy", []
    if spec.figure_id == "fig4_temperature":
        rows = report.select("fig4_temperature", accuracy)
        series = _series(rows, "temperature", ("n_experts", "coverage"),
                         lambda k: f"{k[0]} experts, c={k[1]}")
        return series, "sampling temperature", "query accuracy", []
    if spec.figure_id == "fig5_alpha":
        rows = report.select("fig5_alpha", accuracy)
        series = _series(rows, "alpha", ("n_experts", "coverage"),
                         lambda k: f"{k[0]} experts, c={k[1]}")
        return series, "alpha", "query accuracy", []
    rows = report.select("fig6_twohop", {"acc_across", "acc_within_val"})
    series = _series(rows, "d_size", ("metric",), lambda k: k[0])
    baselines = [
        (f"{r['metric'].removeprefix('baseline_')} baseline", r["value"])
        for r in report.select(
            "fig6_twohop", {"baseline_direct_connection", "baseline_majority_relation"}
        )
    ]
    return series, "two-hop training examples", "two-hop accuracy", baselines


def render(spec: FigureSpec) -> Path:
    """Render one figure analog; raises RenderError before touching the output
    file on any bad input."""
    report = load_report(spec.csv_path)
    series, x_label, y_label, baselines = _figure_data(spec, report)
    if not series:
        raise RenderError(
            f"report {spec.csv_path} has no rows for {spec.figure_id}"
        )
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        for label, xs, ys in series:
            ax.plot(xs, ys, label=label)
        for label, value in sorted(set(baselines)):
            ax.axhline(value, linestyle="--", linewidth=1.0, color="gray")
            ax.annotate(label, xy=(0.02, value), xycoords=("axes fraction", "data"),
                        fontsize=8, color="gray", va="bottom")
        ax.set_xlabel(x_label)
        ax.set_ylabel(y_label)
        ax.set_ylim(-0.02, 1.05)
        ax.set_title(spec.title or spec.figure_id)
        if spec.legend:
            ax.legend(loc="best", fontsize=8)
        fig.tight_layout()
        spec.output_path.parent.mkdir(parents=True, exist_ok=True)
        fig.savefig(spec.output_path, format="png", metadata=_PNG_METADATA)
        plt.close(fig)
    return spec.output_path


def render_all(csv_path: Path, out_dir: Path) -> list[Path]:
    return [
        render(FigureSpec(figure_id=fid, csv_path=csv_path,
                          output_path=out_dir / f"{fid}.png"))
        for fid in FIGURE_IDS
    ]
