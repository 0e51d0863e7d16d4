"""Segmentation metrics and report rendering.

Dice, IoU, precision and recall are computed from pixel-set counts under a
foreground rule ("any" bleed-vs-background, or a single class index). When
both masks are empty all four metrics are 1.0; an empty prediction against a
non-empty truth scores precision 0.0 (and symmetrically for recall). Both
conventions are deliberate and overridable at the call site.

Aggregation reports mean, median and population standard deviation; for an
even count the median is the lower of the two middle values. Report cells
render as ``mean (median) ± std`` and median changes as a signed delta with
a direction arrow.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

METRIC_NAMES = ("dice", "iou", "precision", "recall")


@dataclass(frozen=True)
class MetricResult:
    dice: float
    iou: float
    precision: float
    recall: float
    unit: str = "slice"  # slice | patient
    unit_id: str = ""

    def value(self, name: str) -> float:
        return getattr(self, name)


@dataclass(frozen=True)
class Aggregate:
    mean: float
    median: float
    std: float
    n: int


@dataclass
class ReportRow:
    dataset: str
    phase: str  # before | after
    level: str  # slice | patient
    aggregates: dict[str, Aggregate]
    values: dict[str, list[float]] = field(default_factory=dict)


def _foreground(mask: np.ndarray, rule) -> np.ndarray:
    if rule == "any":
        return np.asarray(mask) > 0
    return np.asarray(mask) == int(rule)


def confusion_counts(pred_mask, gt_mask, foreground_rule="any") -> tuple[int, int, int]:
    """(|P ∩ G|, |P|, |G|) under the foreground rule."""
    pred_mask = np.asarray(pred_mask)
    gt_mask = np.asarray(gt_mask)
    if pred_mask.shape != gt_mask.shape:
        raise ValueError(f"shape mismatch: pred {pred_mask.shape} vs gt {gt_mask.shape}")
    p = _foreground(pred_mask, foreground_rule)
    g = _foreground(gt_mask, foreground_rule)
    return int((p & g).sum()), int(p.sum()), int(g.sum())


def metrics_from_counts(
    tp: int,
    p_size: int,
    g_size: int,
    unit: str = "slice",
    unit_id: str = "",
    both_empty_value: float = 1.0,
    one_empty_value: float = 0.0,
) -> MetricResult:
    if p_size == 0 and g_size == 0:
        v = both_empty_value
        return MetricResult(v, v, v, v, unit, unit_id)
    dice = 2.0 * tp / (p_size + g_size)
    union = p_size + g_size - tp
    iou = tp / union if union else 1.0
    precision = tp / p_size if p_size else one_empty_value
    recall = tp / g_size if g_size else one_empty_value
    return MetricResult(dice, iou, precision, recall, unit, unit_id)


def binary_metrics(
    pred_mask,
    gt_mask,
    foreground_rule="any",
    unit_id: str = "",
    both_empty_value: float = 1.0,
    one_empty_value: float = 0.0,
) -> MetricResult:
    """Dice/IoU/precision/recall for one mask pair.

    ``both_empty_value`` scores a pair of empty masks (default: perfect);
    ``one_empty_value`` is the precision when nothing was predicted against
    a non-empty truth, and symmetrically the recall (default: penalized).
    """
    tp, p, g = confusion_counts(pred_mask, gt_mask, foreground_rule)
    return metrics_from_counts(tp, p, g, "slice", unit_id, both_empty_value, one_empty_value)


def pooled_metrics(
    pairs: list[tuple[np.ndarray, np.ndarray]],
    foreground_rule="any",
    unit: str = "patient",
    unit_id: str = "",
) -> MetricResult:
    """Metrics over the pixel pool of several slices (volume-wise scoring)."""
    if not pairs:
        raise ValueError("need at least one mask pair")
    tp = p = g = 0
    for pred, gt in pairs:
        t, pp, gg = confusion_counts(pred, gt, foreground_rule)
        tp, p, g = tp + t, p + pp, g + gg
    return metrics_from_counts(tp, p, g, unit, unit_id)


def lower_median(values) -> float:
    """Median taking the lower of the two middles for even counts."""
    ordered = sorted(values)
    if not ordered:
        raise ValueError("median of empty list")
    return float(ordered[(len(ordered) - 1) // 2])


def aggregate(results: list[MetricResult], level: str = "slice") -> dict[str, Aggregate]:
    """Mean / lower-median / population std per metric."""
    if not results:
        raise ValueError(f"cannot aggregate an empty result list at level {level!r}")
    out = {}
    for name in METRIC_NAMES:
        vals = [r.value(name) for r in results]
        out[name] = Aggregate(
            mean=float(np.mean(vals)),
            median=lower_median(vals),
            std=float(np.std(vals)),
            n=len(vals),
        )
    return out


def make_report_row(
    dataset: str, phase: str, level: str, results: list[MetricResult]
) -> ReportRow:
    return ReportRow(
        dataset=dataset,
        phase=phase,
        level=level,
        aggregates=aggregate(results, level),
        values={name: [r.value(name) for r in results] for name in METRIC_NAMES},
    )


def format_cell(agg: Aggregate) -> str:
    return f"{agg.mean:.3f} ({agg.median:.3f}) ± {agg.std:.3f}"


def median_change(before: float, after: float) -> tuple[float, str]:
    delta = after - before
    if abs(delta) < 5e-13:
        return 0.0, "flat"
    return delta, ("up" if delta > 0 else "down")


def format_median_change(before: float, after: float) -> str:
    delta, direction = median_change(before, after)
    arrow = {"up": "↑", "down": "↓", "flat": "→"}[direction]
    return f"{delta:+.3f} {arrow}"


def emit_report(
    before: list[ReportRow],
    after: list[ReportRow],
    out_dir,
) -> dict[str, Path]:
    """Write the aligned text table, machine-readable rows and boxplot data.

    Rows are paired by (dataset, level); a phase present on one side only is
    a mismatch error.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def key(row: ReportRow):
        return (row.dataset, row.level)

    before_map = {key(r): r for r in before}
    after_map = {key(r): r for r in after}
    if set(before_map) != set(after_map):
        raise ValueError(
            f"before/after datasets differ: {sorted(set(before_map) ^ set(after_map))}"
        )

    widths = [26, 24, 24, 24, 24]
    header = ["Dataset [level] / Phase", *[m.capitalize() for m in METRIC_NAMES]]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("-" * (sum(widths) + 8))
    json_rows = []
    boxplot: dict[str, dict[str, dict[str, list[float]]]] = {}
    for k in sorted(before_map):
        dataset, level = k
        label = f"{dataset} [{level}]"
        for row in (before_map[k], after_map[k]):
            cells = [f"{label} {row.phase}"] + [
                format_cell(row.aggregates[m]) for m in METRIC_NAMES
            ]
            lines.append("  ".join(c.ljust(w) for c, w in zip(cells, widths)))
            json_rows.append(
                {
                    "dataset": dataset,
                    "level": level,
                    "phase": row.phase,
                    "metrics": {
                        m: {
                            "mean": row.aggregates[m].mean,
                            "median": row.aggregates[m].median,
                            "std": row.aggregates[m].std,
                            "n": row.aggregates[m].n,
                        }
                        for m in METRIC_NAMES
                    },
                }
            )
            boxplot.setdefault(label, {})[row.phase] = {
                m: row.values.get(m, []) for m in METRIC_NAMES
            }
        changes = [
            format_median_change(
                before_map[k].aggregates[m].median, after_map[k].aggregates[m].median
            )
            for m in METRIC_NAMES
        ]
        lines.append(
            "  ".join(c.ljust(w) for c, w in zip([f"{label} median change", *changes], widths))
        )
        lines.append("")
        json_rows.append(
            {
                "dataset": dataset,
                "level": level,
                "phase": "median_change",
                "metrics": {
                    m: {
                        "delta": median_change(
                            before_map[k].aggregates[m].median,
                            after_map[k].aggregates[m].median,
                        )[0],
                        "direction": median_change(
                            before_map[k].aggregates[m].median,
                            after_map[k].aggregates[m].median,
                        )[1],
                    }
                    for m in METRIC_NAMES
                },
            }
        )

    table_path = out_dir / "report.txt"
    table_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    json_path = out_dir / "report.json"
    json_path.write_text(json.dumps(json_rows, indent=2), encoding="utf-8")
    boxplot_path = out_dir / "boxplot_data.json"
    boxplot_path.write_text(json.dumps(boxplot, indent=2), encoding="utf-8")
    return {"table": table_path, "json": json_path, "boxplot": boxplot_path}
