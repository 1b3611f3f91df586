"""Evaluation reports: per-instance CSV, JSON aggregate, and SVG scatter."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .core import AttributionMap, Instance, dumps
from .errors import DimensionError, UndefinedMetricError
from .metrics import attr_percent, er_percent, precision_recall, shapley_envelope, topk_select
from .reassign import significance_probability

COLUMNS = ("id", "label", "manip_id", "attr_fc", "attr_fn", "er_percent", "freq_fn", "precision", "recall", "note")


@dataclass
class EvaluationReport:
    rows: list[dict]
    aggregate: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in self.rows:
            w.writerow([_cell(row.get(c)) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return dumps(self.aggregate) + "\n"


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def evaluate_instance(inst: Instance, attr: AttributionMap, k: int | None = None) -> dict:
    """Metrics for one instance; undefined values come back as None with a note."""
    d = inst.n_units
    if len(attr) != d:
        raise DimensionError(f"{inst.id}: attribution has {len(attr)} scores, instance has {d} units")
    f_c, f_n = inst.gt.f_c, inst.gt.f_n
    row = {"id": inst.id, "label": inst.y_hat, "manip_id": inst.manip_id or "",
           "er_percent": er_percent(f_c, d), "freq_fn": er_percent(f_n, d),
           "attr_fc": None, "attr_fn": None, "precision": None, "recall": None, "note": ""}
    try:
        row["attr_fc"] = attr_percent(attr, f_c)
        row["attr_fn"] = attr_percent(attr, f_n) if len(f_n) else None
    except UndefinedMetricError:
        row["note"] = "zero-attribution"
        return row
    kk = k if k is not None else len(f_c)
    if len(f_c) and 1 <= kk <= d:
        row["precision"], row["recall"] = precision_recall(topk_select(attr, kk), f_c)
    return row


def _stats(values: Sequence[float | None]) -> dict | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    a = np.asarray(vals, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std(ddof=1)) if a.size > 1 else 0.0, "n": int(a.size)}


def _summary(rows: Sequence[dict]) -> dict:
    return {
        "n": len(rows),
        "attr_fc": _stats([r["attr_fc"] for r in rows]),
        "attr_fn": _stats([r["attr_fn"] for r in rows]),
        "er_percent": _stats([r["er_percent"] for r in rows]),
        "freq_fn": _stats([r["freq_fn"] for r in rows]),
        "precision": _stats([r["precision"] for r in rows]),
        "recall": _stats([r["recall"] for r in rows]),
    }


def build_report(instances: Sequence[Instance], attributions: Mapping[str, AttributionMap], *,
                 k: int | None = None, accuracy: float | None = None, p_star: float | None = None,
                 max_missing: float = 0.10, extra: dict | None = None) -> EvaluationReport:
    """Score ``attributions`` against the ground truth carried by ``instances``.

    Instances without an attribution are listed and excluded; if more than
    ``max_missing`` of them are missing the whole evaluation fails.
    """
    from .errors import ConfigError

    ids = [inst.id for inst in instances]
    missing = [i for i in ids if i not in attributions]
    idset = set(ids)
    unknown = sorted(a for a in attributions if a not in idset)
    if instances and len(missing) / len(instances) > max_missing:
        raise ConfigError(f"{len(missing)} of {len(instances)} instances lack attributions "
                          f"(limit {max_missing:.0%})")
    rows = [evaluate_instance(inst, attributions[inst.id], k) for inst in instances if inst.id in attributions]
    labels = sorted({r["label"] for r in rows})
    agg = {
        "n_instances": len(instances),
        "n_evaluated": len(rows),
        "missing_ids": missing,
        "unknown_ids": unknown,
        "overall": _summary(rows),
        "per_class": {str(c): _summary([r for r in rows if r["label"] == c]) for c in labels},
        "accuracy": accuracy,
        "p_star": p_star,
    }
    if accuracy is not None and p_star is not None and rows:
        agg["significance_probability"] = significance_probability(len(rows), p_star, accuracy)
        agg["envelope"] = envelope_verdicts(agg, accuracy, p_star)
    if extra:
        agg.update(extra)
    return EvaluationReport(rows, agg)


def envelope_verdicts(agg: dict, p: float, r: float) -> dict:
    """Whether each class's mean Attr%(F_C) respects the Shapley lower bound."""
    if not p > 0.5:
        return {"p": p, "r": r, "lower_v_m": None, "upper_v_o": None, "verdicts": {}, "margins": {}}
    lower, upper = shapley_envelope(p, r)
    verdicts, margins = {}, {}
    for c, s in agg["per_class"].items():
        if s["attr_fc"] is not None:
            margins[c] = s["attr_fc"]["mean"] - lower
            verdicts[c] = bool(margins[c] >= 0.0)
    return {"p": p, "r": r, "lower_v_m": lower, "upper_v_o": upper, "verdicts": verdicts, "margins": margins}


# --------------------------------------------------------------------------
# SVG

_COLORS = ("#1f77b4", "#ff7f0e", "#9467bd", "#8c564b")


def scatter_svg(rows: Sequence[dict], title: str = "Attr% vs %ER", size: int = 360) -> str:
    """Attr%(F_C) against %ER with the random-map diagonal and the Attr%=1 line."""
    pad = 40
    span = size - 2 * pad

    def px(x):
        return pad + x * span

    def py(y):
        return size - pad - y * span

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        "<!-- data",
        "id,label,er_percent,attr_fc",
    ]
    pts = [r for r in rows if r.get("attr_fc") is not None]
    for r in pts:
        out.append(f"{str(r['id']).replace('--', '-')},{r['label']},{r['er_percent']!r},{r['attr_fc']!r}")
    out.append("-->")
    out.append(f'<text x="{size / 2}" y="20" text-anchor="middle" font-size="13">{title}</text>')
    out.append(f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="#444"/>')
    out.append(f'<line x1="{px(0)}" y1="{py(0)}" x2="{px(1)}" y2="{py(1)}" stroke="#d62728" stroke-dasharray="4 3"/>')
    out.append(f'<line x1="{px(0)}" y1="{py(1)}" x2="{px(1)}" y2="{py(1)}" stroke="#2ca02c"/>')
    for t in (0.0, 0.5, 1.0):
        out.append(f'<text x="{px(t)}" y="{size - pad + 14}" text-anchor="middle" font-size="10">{t:g}</text>')
        out.append(f'<text x="{pad - 6}" y="{py(t) + 3}" text-anchor="end" font-size="10">{t:g}</text>')
    out.append(f'<text x="{size / 2}" y="{size - 8}" text-anchor="middle" font-size="11">%ER</text>')
    out.append(f'<text x="12" y="{size / 2}" font-size="11" transform="rotate(-90 12 {size / 2})">Attr%</text>')
    for r in pts:
        color = _COLORS[int(r["label"]) % len(_COLORS)]
        out.append(f'<circle cx="{px(r["er_percent"]):.2f}" cy="{py(r["attr_fc"]):.2f}" r="2.5" '
                   f'fill="{color}" fill-opacity="0.6"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def parse_svg_data(svg: str) -> list[tuple[str, int, float, float]]:
    """Read back the data table embedded in an SVG written by :func:`scatter_svg`."""
    body = svg.split("<!-- data", 1)[1].split("-->", 1)[0].strip().splitlines()[1:]
    out = []
    for line in body:
        i, lab, x, y = line.split(",")
        out.append((i, int(lab), float(x), float(y)))
    return out


def finite_or_none(x):
    return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
