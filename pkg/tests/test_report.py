import csv
import io
import json

import numpy as np
import pytest

from attrgt.core import AttributionMap, EffectiveRegion, GroundTruthSpec, Instance
from attrgt.errors import ConfigError, DimensionError
from attrgt.report import COLUMNS, build_report, evaluate_instance, parse_svg_data, scatter_svg


def inst(i, label, fc, d=16, fn=()):
    return Instance(f"i{i}", np.zeros(d), (d,), label, label,
                    gt=GroundTruthSpec(EffectiveRegion.of(fc), EffectiveRegion.of(fn)), split="test")


def test_indicator_attribution_scores_one():
    insts = [inst(i, i % 2, [1, 2, 3]) for i in range(6)]
    maps = {x.id: AttributionMap(x.id, x.gt.f_c.mask(16).astype(float)) for x in insts}
    rep = build_report(insts, maps)
    assert all(r["attr_fc"] == 1.0 and r["precision"] == 1.0 and r["recall"] == 1.0 for r in rep.rows)


def test_uniform_attribution_equals_er_percent():
    insts = [inst(i, 0, range(i + 1)) for i in range(8)]
    maps = {x.id: AttributionMap(x.id, np.ones(16)) for x in insts}
    for row in build_report(insts, maps).rows:
        assert row["attr_fc"] == pytest.approx(row["er_percent"], abs=1e-15)


def test_non_correlating_columns():
    x = inst(0, 1, [0, 1], fn=[2, 3])
    row = evaluate_instance(x, AttributionMap("i0", np.array([3.0, 1.0, 1.0] + [0.0] * 13)))
    assert row["attr_fc"] == 0.8 and row["attr_fn"] == 0.2 and row["freq_fn"] == 2 / 16


def test_zero_map_is_flagged_not_fatal():
    row = evaluate_instance(inst(0, 0, [1]), AttributionMap("i0", np.zeros(16)))
    assert row["attr_fc"] is None and row["note"] == "zero-attribution"


def test_dimension_mismatch():
    with pytest.raises(DimensionError):
        evaluate_instance(inst(0, 0, [1]), AttributionMap("i0", np.ones(3)))


def test_missing_ids_listed_then_fatal():
    insts = [inst(i, 0, [1]) for i in range(20)]
    maps = {x.id: AttributionMap(x.id, np.ones(16)) for x in insts[2:]}
    maps["stranger"] = AttributionMap("stranger", np.ones(16))
    rep = build_report(insts, maps)
    assert rep.aggregate["missing_ids"] == ["i0", "i1"] and rep.aggregate["unknown_ids"] == ["stranger"]
    assert rep.aggregate["n_evaluated"] == 18
    del maps["i2"], maps["i3"]
    with pytest.raises(ConfigError):
        build_report(insts, maps)


def test_per_class_summaries_and_significance():
    insts = [inst(i, i % 2, [0]) for i in range(10)]
    maps = {x.id: AttributionMap(x.id, np.eye(16)[0] * (1 + x.y_hat) + 1.0) for x in insts}
    agg = build_report(insts, maps, accuracy=0.8, p_star=0.5).aggregate
    assert set(agg["per_class"]) == {"0", "1"}
    assert agg["per_class"]["0"]["n"] == 5
    assert agg["per_class"]["1"]["attr_fc"]["mean"] == pytest.approx(3 / 18)
    assert agg["significance_probability"] == pytest.approx(0.0546875, abs=1e-12)
    # (2p - r - 0.5) / (2p - 1) with p = 0.8, r = p* = 0.5
    assert agg["envelope"]["lower_v_m"] == pytest.approx(1.0)


def test_csv_and_json_are_stable(tmp_path):
    insts = [inst(i, i % 2, [0, 5]) for i in range(4)]
    maps = {x.id: AttributionMap(x.id, np.arange(16.0) + x.y_hat) for x in insts}
    a, b = build_report(insts, maps), build_report(list(insts), dict(reversed(list(maps.items()))))
    assert a.to_csv() == b.to_csv() and a.to_json() == b.to_json()
    rows = list(csv.DictReader(io.StringIO(a.to_csv())))
    assert tuple(rows[0]) == COLUMNS and float(rows[0]["attr_fc"]) == a.rows[0]["attr_fc"]
    json.loads(a.to_json())


def test_svg_embeds_the_plotted_points():
    rows = [{"id": f"i{i}", "label": i % 2, "er_percent": 0.1 * i, "attr_fc": 0.05 * i} for i in range(5)]
    rows.append({"id": "z", "label": 0, "er_percent": 0.2, "attr_fc": None})
    svg = scatter_svg(rows)
    assert svg.startswith("<svg") and svg.count("<circle") == 5
    assert parse_svg_data(svg) == [(r["id"], r["label"], r["er_percent"], r["attr_fc"]) for r in rows[:5]]
    assert 'stroke="#d62728"' in svg  # the random-map diagonal
