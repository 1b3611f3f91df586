"""Domain data model: instances, regions, attributions, and their file formats.

Feature blob layout (little-endian)::

    magic  b"ATGT"   4 bytes
    version uint32   4 bytes
    count   uint64   8 bytes
    count x float32

The manifest is JSON-lines, one record per instance, pointing at its blob.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DimensionError, FormatError

BLOB_MAGIC = b"ATGT"
BLOB_VERSION = 1
_BLOB_HEADER = struct.Struct("<4sIQ")

KINDS = ("image", "text", "vector")


def _frozen(a, dtype) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class EffectiveRegion:
    """Strictly increasing feature indices touched by a manipulation."""

    indices: tuple[int, ...] = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx):
            raise ConfigError("effective region indices must be non-negative")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ConfigError("effective region indices must be strictly increasing")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def of(cls, items: Iterable[int]) -> "EffectiveRegion":
        """Build from any iterable, sorting and de-duplicating."""
        return cls(tuple(sorted({int(i) for i in items})))

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "EffectiveRegion":
        return cls(tuple(int(i) for i in np.flatnonzero(np.asarray(mask).ravel())))

    def __len__(self):
        return len(self.indices)

    def __iter__(self):
        return iter(self.indices)

    def __contains__(self, i):
        return i in set(self.indices)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.indices, dtype=np.int64)

    def mask(self, size: int) -> np.ndarray:
        if self.indices and self.indices[-1] >= size:
            raise DimensionError(f"region index {self.indices[-1]} out of range for size {size}")
        m = np.zeros(size, dtype=bool)
        m[list(self.indices)] = True
        return m

    def to_list(self) -> list[int]:
        return list(self.indices)


def joint_effective_region(regions: Iterable[EffectiveRegion]) -> EffectiveRegion:
    """Union of the regions of every manipulation in the set.

    Pass the regions of all manipulations, including those mapped to other
    classes: a model may legitimately key on a manipulation's absence.
    """
    out: set[int] = set()
    for r in regions:
        out.update(r.indices)
    return EffectiveRegion(tuple(sorted(out)))


@dataclass(frozen=True)
class GroundTruthSpec:
    f_c: EffectiveRegion = field(default_factory=EffectiveRegion)
    f_n: EffectiveRegion = field(default_factory=EffectiveRegion)

    def __post_init__(self):
        if set(self.f_c.indices) & set(self.f_n.indices):
            raise ConfigError("correlating and non-correlating sets must be disjoint")

    def to_dict(self) -> dict:
        return {"f_c": self.f_c.to_list(), "f_n": self.f_n.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruthSpec":
        return cls(EffectiveRegion(tuple(d.get("f_c", ()))), EffectiveRegion(tuple(d.get("f_n", ()))))


@dataclass(frozen=True, eq=False)
class ReassignmentMatrix:
    """Row-stochastic K x K matrix; entry (y, y') is P(new label y' | label y)."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] < 1:
            raise ConfigError(f"reassignment matrix must be square, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)) or rows.min() < 0.0 or rows.max() > 1.0:
            raise ConfigError("reassignment matrix entries must lie in [0, 1]")
        if np.max(np.abs(rows.sum(axis=1) - 1.0)) > 1e-9:
            raise ConfigError("reassignment matrix rows must sum to 1")
        object.__setattr__(self, "rows", _frozen(rows, np.float64))

    @classmethod
    def binary(cls, r: float) -> "ReassignmentMatrix":
        """Keep the label with probability r, flip it otherwise."""
        r = float(r)
        if not 0.0 <= r <= 1.0:
            raise ConfigError(f"keep probability r must lie in [0, 1], got {r}")
        return cls(np.array([[r, 1.0 - r], [1.0 - r, r]]))

    @property
    def k(self) -> int:
        return self.rows.shape[0]

    def __eq__(self, other):
        return isinstance(other, ReassignmentMatrix) and np.array_equal(self.rows, other.rows)

    def __hash__(self):
        return hash(self.rows.tobytes())

    def to_dict(self) -> dict:
        return {"k": self.k, "rows": self.rows.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ReassignmentMatrix":
        m = cls(np.array(d["rows"], dtype=np.float64))
        if "k" in d and int(d["k"]) != m.k:
            raise ConfigError("matrix k does not match its rows")
        return m


@dataclass(frozen=True, eq=False)
class AttributionMap:
    instance_id: str
    scores: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        if not np.all(np.isfinite(s)):
            raise ConfigError(f"attribution for {self.instance_id!r} has non-finite scores")
        object.__setattr__(self, "scores", _frozen(s, np.float64))

    def __len__(self):
        return self.scores.size

    def __eq__(self, other):
        return (
            isinstance(other, AttributionMap)
            and self.instance_id == other.instance_id
            and np.array_equal(self.scores, other.scores)
        )


@dataclass(frozen=True, eq=False)
class Instance:
    """One example.

    ``features`` is stored flat as float32. For images ``shape`` is
    (H, W, C) and regions address pixels (H*W units); for text ``shape`` is
    (L,), features are vocabulary ids, and regions address token positions.
    """

    id: str
    features: np.ndarray
    shape: tuple[int, ...]
    y_orig: int
    y_hat: int
    n_classes: int = 2
    kind: str = "vector"
    manip_id: str | None = None
    er: EffectiveRegion = field(default_factory=EffectiveRegion)
    gt: GroundTruthSpec = field(default_factory=GroundTruthSpec)
    split: str = "train"

    def __post_init__(self):
        shape = tuple(int(s) for s in self.shape)
        object.__setattr__(self, "shape", shape)
        feats = _frozen(np.asarray(self.features).ravel(), np.float32)
        object.__setattr__(self, "features", feats)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown instance kind {self.kind!r}")
        if self.kind == "image" and len(shape) != 3:
            raise DimensionError("image instances need an (H, W, C) shape")
        if int(np.prod(shape)) != feats.size:
            raise DimensionError(f"{self.id}: {feats.size} features do not match shape {shape}")
        for name in ("y_orig", "y_hat"):
            v = int(getattr(self, name))
            if not 0 <= v < self.n_classes:
                raise ConfigError(f"{self.id}: {name}={v} outside 0..{self.n_classes - 1}")
            object.__setattr__(self, name, v)
        units = self.n_units
        for region in (self.er, self.gt.f_c, self.gt.f_n):
            if region.indices and region.indices[-1] >= units:
                raise DimensionError(f"{self.id}: region index out of range for {units} units")

    @property
    def n_units(self) -> int:
        """Number of attributable units (pixels, tokens, or features)."""
        if self.kind == "image":
            return self.shape[0] * self.shape[1]
        return self.features.size

    def array(self) -> np.ndarray:
        return self.features.reshape(self.shape)

    def tokens(self) -> list[int]:
        return [int(t) for t in self.features]

    def __eq__(self, other):
        return (
            isinstance(other, Instance)
            and self.record() == other.record()
            and np.array_equal(self.features, other.features)
        )

    def record(self, blob: str | None = None) -> dict:
        rec = {
            "id": self.id,
            "kind": self.kind,
            "shape": list(self.shape),
            "n_classes": self.n_classes,
            "y_orig": self.y_orig,
            "y_hat": self.y_hat,
            "manip_id": self.manip_id,
            "er": self.er.to_list(),
            "f_c": self.gt.f_c.to_list(),
            "f_n": self.gt.f_n.to_list(),
            "split": self.split,
        }
        if blob is not None:
            rec["blob"] = blob
        return rec

    @classmethod
    def from_record(cls, rec: dict, features: np.ndarray) -> "Instance":
        return cls(
            id=str(rec["id"]),
            features=features,
            shape=tuple(rec["shape"]),
            y_orig=rec["y_orig"],
            y_hat=rec["y_hat"],
            n_classes=rec.get("n_classes", 2),
            kind=rec.get("kind", "vector"),
            manip_id=rec.get("manip_id"),
            er=EffectiveRegion(tuple(rec.get("er", ()))),
            gt=GroundTruthSpec(
                EffectiveRegion(tuple(rec.get("f_c", ()))), EffectiveRegion(tuple(rec.get("f_n", ())))
            ),
            split=rec.get("split", "train"),
        )

    def replace(self, **changes) -> "Instance":
        fields = {
            "id": self.id, "features": self.features, "shape": self.shape,
            "y_orig": self.y_orig, "y_hat": self.y_hat, "n_classes": self.n_classes,
            "kind": self.kind, "manip_id": self.manip_id, "er": self.er, "gt": self.gt,
            "split": self.split,
        }
        fields.update(changes)
        return Instance(**fields)


# --------------------------------------------------------------------------
# file formats


def dumps(obj) -> str:
    """Canonical JSON used for every emitted file (byte-stable across runs)."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def write_blob(path, values) -> None:
    arr = np.ascontiguousarray(np.asarray(values, dtype="<f4").ravel())
    with open(path, "wb") as fh:
        fh.write(_BLOB_HEADER.pack(BLOB_MAGIC, BLOB_VERSION, arr.size))
        fh.write(arr.tobytes())


def read_blob(path) -> np.ndarray:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read feature blob {path}: {exc.strerror}", path) from exc
    if len(data) < _BLOB_HEADER.size:
        raise FormatError(f"{path}: truncated blob header", path)
    magic, version, count = _BLOB_HEADER.unpack_from(data)
    if magic != BLOB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}", path)
    if version != BLOB_VERSION:
        raise FormatError(f"{path}: unsupported blob version {version}", path)
    body = data[_BLOB_HEADER.size:]
    if len(body) != 4 * count:
        raise FormatError(f"{path}: expected {count} floats, found {len(body) // 4}", path)
    return np.frombuffer(body, dtype="<f4").astype(np.float32)


def write_manifest(path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")


def read_manifest(path) -> Iterator[dict]:
    path = Path(path)
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read manifest {path}: {exc.strerror}", path) from exc
    with fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: invalid JSON ({exc.msg})", path) from exc


def save_instances(out_dir, instances: Sequence[Instance], manifest_name="manifest.jsonl") -> Path:
    """Write one blob per instance plus the manifest; returns the manifest path."""
    out_dir = Path(out_dir)
    (out_dir / "blobs").mkdir(parents=True, exist_ok=True)
    records = []
    for n, inst in enumerate(instances):
        rel = f"blobs/{n:06d}.bin"
        write_blob(out_dir / rel, inst.features)
        records.append(inst.record(blob=rel))
    manifest = out_dir / manifest_name
    write_manifest(manifest, records)
    return manifest


def load_instances(manifest) -> list[Instance]:
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / "manifest.jsonl"
    base = manifest.parent
    out = []
    for rec in read_manifest(manifest):
        if "blob" not in rec:
            raise FormatError(f"{manifest}: record {rec.get('id')!r} has no blob path", manifest)
        out.append(Instance.from_record(rec, read_blob(base / rec["blob"])))
    return out


# --------------------------------------------------------------------------
# attribution exchange format:
#   b"ATTR" | uint32 version | uint64 count, then per record
#   uint32 id length | id (utf-8) | uint32 D | D x float32

ATTR_MAGIC = b"ATTR"
ATTR_VERSION = 1


def write_attributions(path, maps: Iterable[AttributionMap]) -> None:
    maps = list(maps)
    with open(path, "wb") as fh:
        fh.write(_BLOB_HEADER.pack(ATTR_MAGIC, ATTR_VERSION, len(maps)))
        for m in maps:
            ident = m.instance_id.encode("utf-8")
            fh.write(struct.pack("<I", len(ident)) + ident + struct.pack("<I", len(m)))
            fh.write(np.ascontiguousarray(m.scores, dtype="<f4").tobytes())


def read_attributions(path) -> list[AttributionMap]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read attribution file {path}: {exc.strerror}", path) from exc
    if len(data) < _BLOB_HEADER.size:
        raise FormatError(f"{path}: truncated attribution header", path)
    magic, version, count = _BLOB_HEADER.unpack_from(data)
    if magic != ATTR_MAGIC or version != ATTR_VERSION:
        raise FormatError(f"{path}: not a version-{ATTR_VERSION} attribution file", path)
    off = _BLOB_HEADER.size
    out = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", data, off)
            ident = data[off + 4:off + 4 + n].decode("utf-8")
            off += 4 + n
            (d,) = struct.unpack_from("<I", data, off)
            off += 4
            if off + 4 * d > len(data):
                raise struct.error("record body truncated")
            out.append(AttributionMap(ident, np.frombuffer(data, dtype="<f4", count=d, offset=off)))
            off += 4 * d
    except (struct.error, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt attribution record ({exc})", path) from exc
    if off != len(data):
        raise FormatError(f"{path}: trailing bytes after {count} records", path)
    return out
