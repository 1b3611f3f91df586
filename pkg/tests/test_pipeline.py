import numpy as np
import pytest
from hypothesis import given, strategies as st

from attrgt.errors import ConfigError
from attrgt.imagemanip import MANIP_KINDS, effective_region
from attrgt.pipeline import (AttributeConfig, Dataset, ModifyImageConfig, ModifyTextConfig, SweepConfig,
                             assign_splits, compute_attributions, default_manip_spec, er_quadrant_partition,
                             modify_image, modify_text, split_counts, spread_group_values, sweep_csv, SWEEP_COLUMNS)


@given(st.integers(1, 500), st.integers(0, 2**32 - 1))
def test_fraction_splits_cover_everything(n, seed):
    names = assign_splits(n, {"train": 0.7, "val": 0.1, "test": 0.2}, seed)
    assert len(names) == n and "unused" not in names
    assert names.count("test") == int(0.2 * n) and names.count("val") == int(0.1 * n)


def test_count_splits_and_validation():
    assert split_counts(10, {"train": 5, "test": 2}) == {"train": 5, "val": 0, "test": 2}
    assert assign_splits(10, {"train": 5, "test": 2}, 0).count("unused") == 3
    for bad in ({"train": 11}, {"train": 0.5, "test": 0.2}, {"holdout": 3}, {"train": -1}):
        with pytest.raises(ConfigError):
            split_counts(10, bad)
    assert assign_splits(50, {"train": 1.0}, 1) == assign_splits(50, {"train": 1.0}, 1)


@pytest.mark.parametrize("kind", MANIP_KINDS)
@pytest.mark.parametrize("size", [(16, 16), (8, 12), (32, 20)])
def test_default_specs_fit(kind, size):
    spec = default_manip_spec(kind, *size)
    spec.check_image(*size)
    assert 0 < len(effective_region(spec, *size)) < size[0] * size[1]


def test_default_watermark_is_central_three_by_three():
    spec = default_manip_spec("watermark", 16, 16)
    assert spec.ul == (6, 6) and spec.lr == (9, 9)


def test_quadrant_partition(tmp_path):
    modify_image(ModifyImageConfig(out=str(tmp_path), n=20, height=8, width=8, splits={"test": 20}))
    inst = Dataset.load(tmp_path).instances[0]
    groups = er_quadrant_partition(inst)
    assert groups[0] == list(inst.gt.f_c) and len(groups) == 5
    assert sorted(u for g in groups for u in g) == list(range(64))
    spread = spread_group_values(np.array([1.0, 2.0, 0, 0, 0]), groups, 64)
    assert spread.sum() == pytest.approx(3.0)


@pytest.mark.parametrize("method", ["grad", "smoothgrad", "shapley", "occlusion"])
def test_attributions_independent_of_workers(tmp_path, method):
    from attrgt.pipeline import TrainRefConfig, fit

    modify_image(ModifyImageConfig(out=str(tmp_path), n=120, height=8, width=8,
                                   splits={"train": 80, "val": 20, "test": 20}))
    ds = Dataset.load(tmp_path)
    model, _ = fit(ds, TrainRefConfig(epochs=5))
    one = compute_attributions(ds, model, AttributeConfig(method=method, smoothgrad_n=3, workers=1))
    four = compute_attributions(ds, model, AttributeConfig(method=method, smoothgrad_n=3, workers=4))
    assert one == four


def test_text_dataset_pipeline(tmp_path):
    meta = modify_text(ModifyTextConfig(out=str(tmp_path), n_reviews=80, mode="NC"))
    ds = Dataset.load(tmp_path)
    assert meta["n_instances"] == len(ds.instances) == 80 - len(meta["skipped"])
    assert ds.kind == "text" and ds.vocab_size() == meta["vocab_size"]
    assert sum(meta["decoy_counts"].values()) == meta["n_instances"]


def test_text_methods_validated(tmp_path):
    modify_text(ModifyTextConfig(out=str(tmp_path), n_reviews=30))
    ds = Dataset.load(tmp_path)
    with pytest.raises(ConfigError):
        compute_attributions(ds, None, AttributeConfig(method="grad"))
    assert len(compute_attributions(ds, None, AttributeConfig(method="uniform", split="all"))) == len(ds.instances)


def test_sweep_config_defaults_and_csv():
    assert SweepConfig(kind="visibility-sweep").grid == [0, 1, 2, 3, 4]
    assert SweepConfig(grid=[]).grid == []
    with pytest.raises(ConfigError):
        SweepConfig(kind="grid-search")
    assert sweep_csv([]) == ",".join(SWEEP_COLUMNS) + "\n"
