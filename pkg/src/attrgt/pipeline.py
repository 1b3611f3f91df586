"""The modify -> train -> attribute -> evaluate loop, plus parameter sweeps.

Each command takes a plain configuration dataclass and writes its outputs
into a directory. Every emitted JSON/CSV is produced from sorted, canonical
data with no timestamps, so reruns with the same configuration are
byte-identical regardless of the worker count.
"""
from __future__ import annotations

import csv
import dataclasses
import functools
import io
import logging
import subprocess
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from . import __version__
from .core import (AttributionMap, EffectiveRegion, Instance, dumps, load_instances, read_attributions,
                   save_instances, write_attributions)
from .errors import AttrGTError, ConfigError, FormatError, UndefinedMetricError
from .imagemanip import MANIP_KINDS, VISIBILITY_LADDERS, ImageManipSpec, modify_image_dataset
from .metrics import attr_percent, er_percent, shapley_envelope
from .reassign import ReassignConfig
from .refmodels import (PositionalBowModel, RefModel, TrainConfig, TrainData, TrainResult, accuracy,
                        exact_shapley_groups, grad_attribution, load_model, mean_baseline,
                        occlusion_attribution, save_model, smoothgrad, train, train_bow)
from .streams import stream
from .textmanip import (Vocabulary, build_article_dataset, build_mixed_dataset, read_corpus,
                        synthetic_corpus, to_instances)

log = logging.getLogger("attrgt")

SPLITS = ("train", "val", "test")
DATASET_META = "dataset.json"
MANIFEST = "manifest.jsonl"


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """``git describe`` of the source tree, or the package version outside a checkout."""
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
                             capture_output=True, text=True, timeout=10, check=True)
        return f"{__version__}+{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        return __version__


# --------------------------------------------------------------------------
# configuration plumbing


def config_from_mapping(cls, values: Mapping[str, Any]):
    """Build a config dataclass, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} key(s): {', '.join(unknown)}")
    try:
        return cls(**dict(values))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_dict(cfg) -> dict:
    return dataclasses.asdict(cfg)


def _write_text(path: Path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_json(path: Path, obj) -> None:
    _write_text(path, dumps(obj) + "\n")


def _read_json(path: Path):
    import json

    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc.strerror}", path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc.msg})", path) from exc


def _map(fn: Callable[[int], Any], n: int, workers: int) -> list:
    """Order-preserving map over range(n), threaded when workers > 1."""
    if workers > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, range(n)))
    return [fn(i) for i in range(n)]


def split_counts(n: int, splits: Mapping[str, float | int]) -> dict[str, int]:
    """Resolve counts (ints) or fractions (floats summing to 1) per split."""
    unknown = sorted(set(splits) - set(SPLITS))
    if unknown:
        raise ConfigError(f"unknown split name(s): {', '.join(unknown)}")
    vals = {s: splits.get(s, 0) for s in SPLITS}
    if any(v < 0 for v in vals.values()):
        raise ConfigError("split sizes must be non-negative")
    if all(isinstance(v, int) and not isinstance(v, bool) for v in vals.values()):
        if sum(vals.values()) > n:
            raise ConfigError(f"split counts sum to {sum(vals.values())} but only {n} instances exist")
        return vals
    if abs(sum(float(v) for v in vals.values()) - 1.0) > 1e-9:
        raise ConfigError("split fractions must sum to 1")
    counts = {s: int(float(v) * n) for s, v in vals.items()}
    counts["train"] += n - sum(counts.values())
    return counts


def assign_splits(n: int, splits: Mapping[str, float | int], seed: int) -> list[str]:
    """Split name per index from a seeded permutation; indices beyond the counts are 'unused'."""
    counts = split_counts(n, splits)
    order = stream(seed, "split").permutation(n)
    out = ["unused"] * n
    pos = 0
    for s in SPLITS:
        for i in order[pos:pos + counts[s]]:
            out[int(i)] = s
        pos += counts[s]
    return out


# --------------------------------------------------------------------------
# image datasets


def default_manip_spec(kind: str, h: int, w: int) -> ImageManipSpec:
    """A spec of ``kind`` placed sensibly inside an h x w image (least visible ladder level)."""
    if kind not in MANIP_KINDS:
        raise ConfigError(f"unknown manipulation kind {kind!r}")
    vis = VISIBILITY_LADDERS[kind][1][0]
    if kind == "blur":
        return ImageManipSpec.blur(min(h, w) / 4, vis)
    if kind == "brightness":
        return ImageManipSpec.brightness(min(h, w) / 4, vis)
    if kind == "hue":
        return ImageManipSpec.hue(h // 4, max(h // 2, h // 4 + 1), vis)
    if kind == "noise":
        return ImageManipSpec.noise(h // 4, max(h // 2, h // 4 + 1), vis)
    return ImageManipSpec.watermark((max(0, h // 2 - 2), max(0, w // 2 - 2)), (h // 2 + 1, w // 2 + 1), vis)


@dataclass
class ModifyImageConfig:
    out: str = "dataset"
    source: str = "noise"  # "noise", a dataset directory/manifest, or a directory of class-named PNG folders
    n: int = 2500
    height: int = 16
    width: int = 16
    channels: int = 3
    source_seed: int = 0
    r: float = 0.5
    matrix: list | None = None
    reassign_seed: int = 1
    manip_seed: int = 2
    manipulations: dict = field(default_factory=lambda: {"1": "watermark"})
    splits: dict = field(default_factory=lambda: {"train": 1800, "val": 200, "test": 500})
    split_seed: int = 3
    workers: int = 1

    def __post_init__(self):
        if self.n < 1 or min(self.height, self.width, self.channels) < 1:
            raise ConfigError("n, height, width and channels must be positive")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def reassign(self) -> ReassignConfig:
        from .core import ReassignmentMatrix

        matrix = ReassignmentMatrix(self.matrix) if self.matrix is not None else ReassignmentMatrix.binary(self.r)
        return ReassignConfig(matrix, self.reassign_seed)

    def specs(self, h: int, w: int) -> dict[int, ImageManipSpec | None]:
        out: dict[int, ImageManipSpec | None] = {}
        for c, s in self.manipulations.items():
            if s is None:
                out[int(c)] = None
            elif isinstance(s, str):
                out[int(c)] = default_manip_spec(s, h, w)
            elif isinstance(s, Mapping):
                base = default_manip_spec(s["kind"], h, w).to_dict() if "kind" in s else {}
                out[int(c)] = ImageManipSpec.from_dict({**base, **s})
            else:
                raise ConfigError(f"manipulation for class {c} must be a kind name or a spec object")
        return out


def noise_images(n: int, h: int, w: int, ch: int, seed: int, n_classes: int = 2) -> list[Instance]:
    """Uniform-noise images with uniformly drawn original labels (no label signal at all)."""
    def one(i):
        g = stream(seed, "source-image", i)
        img = g.random((h, w, ch), dtype=np.float32)
        y = int(g.integers(0, n_classes))
        return Instance(f"img-{i:06d}", img, (h, w, ch), y, y, n_classes, "image")

    return [one(i) for i in range(n)]


def png_images(root: Path) -> list[Instance]:
    """Images from ``root/<class>/*.png`` (class folders named by integer label)."""
    try:
        from PIL import Image
    except ImportError as exc:  # pragma: no cover - Pillow is a declared dependency
        raise ConfigError("reading PNG sources needs Pillow") from exc
    dirs = sorted((d for d in root.iterdir() if d.is_dir() and d.name.isdigit()), key=lambda d: int(d.name))
    if not dirs:
        raise FormatError(f"{root}: no integer-named class folders", root)
    n_classes = int(dirs[-1].name) + 1
    out = []
    for d in dirs:
        for f in sorted(d.glob("*.png")):
            try:
                with Image.open(f) as im:
                    arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
            except OSError as exc:
                raise FormatError(f"cannot read image {f}: {exc}", f) from exc
            out.append(Instance(f"{d.name}-{f.stem}", arr, arr.shape, int(d.name), int(d.name),
                                n_classes, "image"))
    return out


def load_source_images(cfg: ModifyImageConfig) -> list[Instance]:
    if cfg.source == "noise":
        return noise_images(cfg.n, cfg.height, cfg.width, cfg.channels, cfg.source_seed)
    path = Path(cfg.source)
    if path.is_file() or (path / MANIFEST).is_file():
        return load_instances(path)
    if path.is_dir():
        return png_images(path)
    raise FormatError(f"source {cfg.source!r} is neither 'noise' nor an existing path", cfg.source)


def modify_image(cfg: ModifyImageConfig) -> dict:
    """Build a modified image dataset; returns the dataset metadata that was written."""
    source = load_source_images(cfg)
    if not source:
        raise ConfigError("image source is empty")
    h, w = source[0].shape[:2]
    mod = modify_image_dataset(source, cfg.reassign(), cfg.specs(h, w), cfg.manip_seed, cfg.workers)
    names = assign_splits(len(mod.instances), cfg.splits, cfg.split_seed)
    instances = [inst.replace(split=s) for inst, s in zip(mod.instances, names)]
    out = Path(cfg.out)
    save_instances(out, instances, MANIFEST)
    meta = {
        "kind": "image",
        "n_instances": len(instances),
        "p_star": mod.p_star,
        "joint_er": mod.joint_er.to_list() if mod.joint_er is not None else None,
        "er_percent": er_percent(mod.joint_er, h * w) if mod.joint_er is not None else None,
        "skipped": mod.skipped,
        "split_counts": {s: names.count(s) for s in (*SPLITS, "unused")},
        "class_counts": {str(c): sum(1 for i in instances if i.y_hat == c) for c in range(mod.instances[0].n_classes)},
        "manipulation": mod.meta,
        "config": config_dict(cfg) | {"out": None, "workers": None},
        "version": version_string(),
    }
    _write_json(out / DATASET_META, meta)
    log.info("wrote %d images to %s", len(instances), out)
    return meta


# --------------------------------------------------------------------------
# text datasets


@dataclass
class ModifyTextConfig:
    out: str = "dataset"
    corpus: str | None = None  # one review per line; synthetic when absent
    n_reviews: int = 2000
    corpus_seed: int = 0
    article_rate: float = 0.079
    mode: str = "article"  # "article", "CN" or "NC"
    seed: int = 0
    splits: dict = field(default_factory=lambda: {"train": 0.7, "val": 0.1, "test": 0.2})
    split_seed: int = 3

    def __post_init__(self):
        if self.mode not in ("article", "CN", "NC"):
            raise ConfigError(f"mode must be article, CN or NC, got {self.mode!r}")


def modify_text(cfg: ModifyTextConfig) -> dict:
    if cfg.corpus is not None:
        corpus = read_corpus(cfg.corpus)
    else:
        corpus = synthetic_corpus(cfg.n_reviews, cfg.corpus_seed, cfg.article_rate)
    ds = (build_article_dataset(corpus, cfg.seed) if cfg.mode == "article"
          else build_mixed_dataset(corpus, cfg.mode, cfg.seed))
    if not ds.instances:
        raise ConfigError("every review was skipped; nothing to write")
    vocab = Vocabulary.build(ti.tokens for ti in ds.instances)
    names = assign_splits(len(ds.instances), cfg.splits, cfg.split_seed)
    instances = to_instances(ds, vocab, names)
    out = Path(cfg.out)
    save_instances(out, instances, MANIFEST)
    vocab.save(out / "vocab.txt")
    lengths = [inst.n_units for inst in instances]
    meta = {
        "kind": "text",
        "mode": cfg.mode,
        "n_instances": len(instances),
        "n_source": len(corpus),
        "p_star": 1.0,
        "joint_er": None,
        "vocab_size": len(vocab),
        "skipped": ds.skipped,
        "split_counts": {s: names.count(s) for s in (*SPLITS, "unused")},
        "class_counts": {str(c): sum(1 for i in instances if i.y_hat == c) for c in (0, 1)},
        "mean_length": float(np.mean(lengths)),
        "decoy_counts": {a: sum(1 for t in ds.instances if t.decoy == a) for a in ("a", "an", "the")}
        if cfg.mode != "article" else None,
        "config": config_dict(cfg) | {"out": None},
        "version": version_string(),
    }
    _write_json(out / DATASET_META, meta)
    log.info("wrote %d reviews to %s (%d skipped)", len(instances), out, len(ds.skipped))
    return meta


# --------------------------------------------------------------------------
# datasets on disk


@dataclass
class Dataset:
    root: Path
    instances: list[Instance]
    meta: dict

    @classmethod
    def load(cls, path) -> "Dataset":
        path = Path(path)
        root = path if path.is_dir() else path.parent
        meta_path = root / DATASET_META
        meta = _read_json(meta_path) if meta_path.exists() else {}
        return cls(root, load_instances(path), meta)

    @property
    def kind(self) -> str:
        return self.instances[0].kind if self.instances else "vector"

    @property
    def p_star(self) -> float | None:
        return self.meta.get("p_star")

    def split(self, name: str | None) -> list[Instance]:
        if name in (None, "all"):
            return list(self.instances)
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return [i for i in self.instances if i.split == name]

    def vocab_size(self) -> int:
        if "vocab_size" in self.meta:
            return int(self.meta["vocab_size"])
        return int(max(max(i.tokens()) for i in self.instances)) + 1


def _xy(insts: Sequence[Instance]) -> tuple[np.ndarray, np.ndarray]:
    if not insts:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    return (np.stack([i.features.astype(np.float64) for i in insts]),
            np.array([i.y_hat for i in insts], dtype=np.int64))


# --------------------------------------------------------------------------
# training


@dataclass
class TrainRefConfig:
    dataset: str = "dataset"
    out: str = "model.bin"
    lr: float = 0.02
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    l2: float = 1e-3
    patience: int = 100
    l1: float = 2e-2
    model: str = "linear"
    hidden: int = 16
    n_buckets: int = 2

    def train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, batch_size=self.batch_size, epochs=self.epochs, seed=self.seed,
                           l2=self.l2, patience=self.patience, l1=self.l1, model=self.model, hidden=self.hidden)


def predict_instances(model, insts: Sequence[Instance]) -> np.ndarray:
    if isinstance(model, PositionalBowModel):
        return np.array([model.predict(i.tokens()) for i in insts], dtype=np.int64)
    x, _ = _xy(insts)
    return model.predict(x) if len(insts) else np.zeros(0, dtype=np.int64)


def instance_accuracy(model, insts: Sequence[Instance]) -> float | None:
    if not insts:
        return None
    return float(np.mean(predict_instances(model, insts) == np.array([i.y_hat for i in insts])))


def fit(ds: Dataset, cfg: TrainRefConfig, on_epoch=None) -> tuple[RefModel | PositionalBowModel, TrainResult]:
    tc = cfg.train_config()
    train_set, val_set = ds.split("train"), ds.split("val")
    if not train_set:
        raise ConfigError("dataset has no training split")
    if ds.kind == "text":
        return train_bow([i.tokens() for i in train_set], [i.y_hat for i in train_set],
                         [i.tokens() for i in val_set], [i.y_hat for i in val_set],
                         ds.vocab_size(), tc, cfg.n_buckets, on_epoch)
    (x, y), (xv, yv) = _xy(train_set), _xy(val_set)
    if not len(val_set):
        xv = np.zeros((0, x.shape[1]))
    result = train(TrainData(x, y, xv, yv, train_set[0].n_classes), tc, on_epoch)
    return result.model, result


def train_ref(cfg: TrainRefConfig) -> dict:
    ds = Dataset.load(cfg.dataset)
    model, result = fit(ds, cfg)
    summary = {
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "train_accuracy": instance_accuracy(model, ds.split("train")),
        "val_accuracy": instance_accuracy(model, ds.split("val")),
        "test_accuracy": instance_accuracy(model, ds.split("test")),
        "history": result.history,
    }
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, cfg.out, {"train": config_dict(cfg) | {"out": None}, "summary": summary,
                                "version": version_string()})
    log.info("trained %s model: test accuracy %s", cfg.model, summary["test_accuracy"])
    return summary


# --------------------------------------------------------------------------
# attribution

IMAGE_METHODS = ("grad", "smoothgrad", "occlusion", "shapley", "indicator", "uniform")
TEXT_METHODS = ("weights", "indicator", "uniform")


def er_quadrant_partition(inst: Instance) -> list[list[int]]:
    """[joint ER] followed by the remaining pixels split into four spatial quadrants."""
    h, w = inst.shape[:2]
    patch = set(inst.gt.f_c)
    groups: list[list[int]] = [sorted(patch)]
    quads: list[list[int]] = [[], [], [], []]
    for u in range(h * w):
        if u not in patch:
            r, c = divmod(u, w)
            quads[2 * (r >= h // 2) + (c >= w // 2)].append(u)
    return [g for g in groups + quads if g]


def spread_group_values(values: np.ndarray, groups: Sequence[Sequence[int]], n_units: int) -> np.ndarray:
    """Per-unit map giving each unit an equal share of its group's value."""
    out = np.zeros(n_units)
    for v, g in zip(values, groups):
        out[list(g)] = v / len(g)
    return out


@dataclass
class AttributeConfig:
    dataset: str = "dataset"
    model: str | None = "model.bin"
    out: str = "attributions.attr"
    method: str = "grad"
    split: str = "test"
    seed: int = 0
    smoothgrad_n: int = 50
    sigma_frac: float = 0.15
    window: int = 1
    baseline: Any = "mean"  # "mean" (training-split per-feature mean) or a number
    groups: str = "er-quadrants"
    workers: int = 1


def _baseline(ds: Dataset, spec) -> np.ndarray | float:
    if spec == "mean":
        x, _ = _xy(ds.split("train") or ds.instances)
        return mean_baseline(x)
    try:
        return float(spec)
    except (TypeError, ValueError):
        raise ConfigError(f"baseline must be 'mean' or a number, got {spec!r}") from None


def attribution_fn(ds: Dataset, model, cfg: AttributeConfig) -> Callable[[int, Instance], AttributionMap]:
    kind = ds.kind
    method = cfg.method
    if method == "indicator":
        return lambda i, inst: AttributionMap(inst.id, inst.gt.f_c.mask(inst.n_units).astype(np.float64))
    if method == "uniform":
        return lambda i, inst: AttributionMap(inst.id, np.ones(inst.n_units))
    if model is None:
        raise ConfigError(f"method {method!r} needs a model")
    if kind == "text":
        if method != "weights":
            raise ConfigError(f"text datasets support {', '.join(TEXT_METHODS)}; got {method!r}")
        if not isinstance(model, PositionalBowModel):
            raise ConfigError("text attribution needs a positional bag-of-words model")
        return lambda i, inst: model.token_attribution(inst.tokens(), inst.id)
    if method not in IMAGE_METHODS:
        raise ConfigError(f"unknown attribution method {method!r}")
    if isinstance(model, PositionalBowModel):
        raise ConfigError("image attribution needs an image reference model")

    def x_of(inst):
        return inst.features.astype(np.float64)

    if method == "grad":
        return lambda i, inst: grad_attribution(model, x_of(inst), inst.shape, inst.id)
    if method == "smoothgrad":
        def sg(i, inst):
            seed = int(stream(cfg.seed, "smoothgrad", i).integers(0, 2**63))
            return smoothgrad(model, x_of(inst), cfg.smoothgrad_n, cfg.sigma_frac, seed, inst.shape, inst.id)
        return sg
    base = _baseline(ds, cfg.baseline)
    if method == "occlusion":
        return lambda i, inst: occlusion_attribution(model, x_of(inst), base, cfg.window, inst.shape, inst.id)
    if cfg.groups != "er-quadrants":
        raise ConfigError(f"unknown shapley grouping {cfg.groups!r}")

    def shap(i, inst):
        groups = er_quadrant_partition(inst)
        vals = exact_shapley_groups(model, x_of(inst), groups, base, inst.shape)
        return AttributionMap(inst.id, spread_group_values(vals, groups, inst.n_units))
    return shap


def compute_attributions(ds: Dataset, model, cfg: AttributeConfig) -> list[AttributionMap]:
    insts = ds.split(cfg.split)
    fn = attribution_fn(ds, model, cfg)
    return _map(lambda i: fn(i, insts[i]), len(insts), cfg.workers)


def attribute(cfg: AttributeConfig) -> dict:
    ds = Dataset.load(cfg.dataset)
    model = load_model(cfg.model)[0] if cfg.model and cfg.method not in ("indicator", "uniform") else None
    maps = compute_attributions(ds, model, cfg)
    Path(cfg.out).parent.mkdir(parents=True, exist_ok=True)
    write_attributions(cfg.out, maps)
    log.info("wrote %d %s attributions to %s", len(maps), cfg.method, cfg.out)
    return {"n": len(maps), "method": cfg.method, "out": cfg.out}


# --------------------------------------------------------------------------
# evaluation


@dataclass
class EvaluateConfig:
    dataset: str = "dataset"
    attributions: str = "attributions.attr"
    out: str = "report"
    split: str = "test"
    model: str | None = None
    accuracy: float | None = None
    k: int | None = None
    max_missing: float = 0.10


def evaluate_maps(ds: Dataset, maps: Sequence[AttributionMap], split: str, accuracy_value: float | None,
                  k: int | None = None, max_missing: float = 0.10, extra: dict | None = None):
    from .report import build_report

    by_id: dict[str, AttributionMap] = {}
    for m in maps:
        by_id[m.instance_id] = m
    insts = ds.split(split)
    return build_report(insts, by_id, k=k, accuracy=accuracy_value, p_star=ds.p_star,
                        max_missing=max_missing, extra=extra)


def write_report(report, out: Path) -> None:
    from .report import scatter_svg

    out.mkdir(parents=True, exist_ok=True)
    _write_text(out / "report.csv", report.to_csv())
    _write_text(out / "report.json", report.to_json())
    _write_text(out / "plot.svg", scatter_svg(report.rows))


def evaluate(cfg: EvaluateConfig) -> dict:
    ds = Dataset.load(cfg.dataset)
    maps = read_attributions(cfg.attributions)
    acc = cfg.accuracy
    if acc is None and cfg.model:
        acc = instance_accuracy(load_model(cfg.model)[0], ds.split(cfg.split))
    report = evaluate_maps(ds, maps, cfg.split, acc, cfg.k, cfg.max_missing,
                           {"config": config_dict(cfg) | {"out": None}, "version": version_string()})
    write_report(report, Path(cfg.out))
    return report.aggregate


# --------------------------------------------------------------------------
# sweeps

SWEEP_COLUMNS = ("sweep", "run", "r", "p_star", "level", "param", "value", "epoch", "accuracy",
                 "attr_fc", "er_percent", "lower_v_m", "upper_v_o", "within_envelope", "error")


DEFAULT_GRIDS = {
    "r-sweep": (0.5, 0.6, 0.7, 0.8, 0.9, 1.0),
    "visibility-sweep": (0, 1, 2, 3, 4),  # ladder levels
    "accuracy-trace": (0,),  # training seeds
}


@dataclass
class SweepConfig:
    kind: str = "r-sweep"  # "r-sweep", "visibility-sweep" or "accuracy-trace"
    out: str = "sweep.csv"
    grid: list | None = None  # None: the kind's default grid; [] writes a header-only CSV
    mode: str = "analytic"  # r-sweep: "analytic" (p fixed) or "train"
    p: float = 1.0
    manipulation: Any = "blur"  # visibility-sweep base spec (kind name or spec object)
    train: bool = False  # visibility-sweep: also train and attribute per level
    dataset: dict = field(default_factory=dict)  # ModifyImageConfig overrides
    training: dict = field(default_factory=dict)  # TrainRefConfig overrides
    method: str = "grad"
    workers: int = 1

    def __post_init__(self):
        if self.kind not in ("r-sweep", "visibility-sweep", "accuracy-trace"):
            raise ConfigError(f"unknown sweep kind {self.kind!r}")
        if self.mode not in ("analytic", "train"):
            raise ConfigError("r-sweep mode must be 'analytic' or 'train'")
        if self.grid is None:
            self.grid = list(DEFAULT_GRIDS[self.kind])


def _sweep_row(**kw) -> dict:
    row = {c: None for c in SWEEP_COLUMNS}
    row.update(kw)
    return row


def sweep_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for row in rows:
        w.writerow(["" if row.get(c) is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in SWEEP_COLUMNS])
    return buf.getvalue()


def _mean_attr_fc(maps: Sequence[AttributionMap], insts: Sequence[Instance]) -> float | None:
    vals = []
    for m, inst in zip(maps, insts):
        try:
            vals.append(attr_percent(m, inst.gt.f_c))
        except UndefinedMetricError:
            pass
    return float(np.mean(vals)) if vals else None


def _in_memory_image_dataset(dcfg: ModifyImageConfig) -> Dataset:
    source = load_source_images(dcfg)
    h, w = source[0].shape[:2]
    mod = modify_image_dataset(source, dcfg.reassign(), dcfg.specs(h, w), dcfg.manip_seed, dcfg.workers)
    names = assign_splits(len(mod.instances), dcfg.splits, dcfg.split_seed)
    insts = [inst.replace(split=s) for inst, s in zip(mod.instances, names)]
    return Dataset(Path("."), insts, {"p_star": mod.p_star, "kind": "image"})


def _train_and_score(ds: Dataset, tcfg: TrainRefConfig, method: str, workers: int) -> tuple[float, float | None]:
    model, _ = fit(ds, tcfg)
    test = ds.split("test")
    acfg = AttributeConfig(method=method, split="test", workers=workers)
    maps = compute_attributions(ds, model, acfg)
    return instance_accuracy(model, test), _mean_attr_fc(maps, test)


def _envelope_cols(p: float, r_eff: float) -> dict:
    lower, upper = shapley_envelope(p, r_eff)
    return {"lower_v_m": lower, "upper_v_o": upper}


def run_sweep(cfg: SweepConfig) -> list[dict]:
    rows: list[dict] = []
    base_d = config_from_mapping(ModifyImageConfig, {**cfg.dataset, "workers": cfg.workers})
    base_t = config_from_mapping(TrainRefConfig, cfg.training)
    for run, value in enumerate(cfg.grid):
        try:
            rows.extend(_sweep_cell(cfg, run, value, base_d, base_t))
        except AttrGTError as exc:
            log.warning("sweep cell %d (%r) failed: %s", run, value, exc)
            rows.append(_sweep_row(sweep=cfg.kind, run=run, error=f"{type(exc).__name__}: {exc}"))
    return rows


def _sweep_cell(cfg: SweepConfig, run: int, value, base_d: ModifyImageConfig,
                base_t: TrainRefConfig) -> list[dict]:
    if cfg.kind == "r-sweep":
        r = float(value)
        dcfg = dataclasses.replace(base_d, r=r, matrix=None)
        p_star = dcfg.reassign().matrix.rows.max()
        row = _sweep_row(sweep=cfg.kind, run=run, r=r, p_star=float(p_star))
        if cfg.mode == "analytic":
            row.update(accuracy=cfg.p, **_envelope_cols(cfg.p, float(p_star)))
            return [row]
        ds = _in_memory_image_dataset(dcfg)
        acc, attr_fc = _train_and_score(ds, base_t, cfg.method, cfg.workers)
        test = ds.split("test")
        row.update(accuracy=acc, attr_fc=attr_fc, er_percent=er_percent(test[0].gt.f_c, test[0].n_units))
        if acc is not None and acc > 0.5:
            row.update(_envelope_cols(acc, float(p_star)))
            if attr_fc is not None:
                row["within_envelope"] = bool(attr_fc >= row["lower_v_m"])
        return [row]
    if cfg.kind == "visibility-sweep":
        spec_src = cfg.manipulation
        level = int(value)
        h, w = base_d.height, base_d.width
        spec = ModifyImageConfig(manipulations={"1": spec_src}).specs(h, w)[1]
        param, ladder = VISIBILITY_LADDERS[spec.kind]
        if not 0 <= level < len(ladder):
            raise ConfigError(f"visibility level {level} outside 0..{len(ladder) - 1}")
        spec = spec.with_visibility(ladder[level])
        from .imagemanip import effective_region

        row = _sweep_row(sweep=cfg.kind, run=run, level=level, param=param, value=float(ladder[level]),
                         er_percent=er_percent(effective_region(spec, h, w), h * w))
        if cfg.train:
            dcfg = dataclasses.replace(base_d, manipulations={"1": spec.to_dict()})
            ds = _in_memory_image_dataset(dcfg)
            acc, attr_fc = _train_and_score(ds, base_t, cfg.method, cfg.workers)
            row.update(accuracy=acc, attr_fc=attr_fc, p_star=ds.p_star, r=base_d.r)
        return [row]
    # accuracy-trace: one training run (grid entries are training seeds), Attr% at every epoch
    tcfg = dataclasses.replace(base_t, seed=int(value))
    ds = _in_memory_image_dataset(base_d)
    test = ds.split("test")
    acfg = AttributeConfig(method=cfg.method, split="test", workers=cfg.workers)
    out = []

    def on_epoch(epoch, model, stats):
        maps = compute_attributions(ds, model, acfg) if test else []
        out.append(_sweep_row(sweep=cfg.kind, run=run, epoch=epoch, p_star=ds.p_star, r=base_d.r,
                              accuracy=instance_accuracy(model, test), attr_fc=_mean_attr_fc(maps, test)))

    fit(ds, tcfg, on_epoch)
    return out


def sweep(cfg: SweepConfig) -> list[dict]:
    rows = run_sweep(cfg)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_text(out, sweep_csv(rows))
    return rows
