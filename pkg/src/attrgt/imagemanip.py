"""Local image manipulations with parametric effective regions.

Images are float arrays of shape (H, W, 3) in [0, 1]. Every manipulation
writes only inside its effective region (ER), and the ER is a function of
the spec and the image size alone, covering every random instantiation.
Stripes and rectangles are half-open: rows ``[upper, lower)``, rectangle
``[ul, lr)``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import _font
from .color import hsv_to_rgb, rgb_to_hsv
from .core import EffectiveRegion, GroundTruthSpec, Instance, joint_effective_region
from .errors import ConfigError, DimensionError
from .reassign import ReassignConfig, max_achievable_accuracy, reassign_label
from .streams import stream

MANIP_KINDS = ("blur", "brightness", "hue", "noise", "watermark")
WATERMARK_PREFIX = "IMG"
MANIP_TAG = "manipulate"

VISIBILITY_LADDERS = {
    "blur": ("sigma", (2.0, 4.0, 6.0, 8.0, 10.0)),
    "brightness": ("magnitude", (0.1, 0.15, 0.2, 0.25, 0.3)),
    "hue": ("magnitude", (0.05, 0.1, 0.15, 0.2, 0.25)),
    "noise": ("prob", (0.02, 0.04, 0.06, 0.08, 0.1)),
    "watermark": ("font_size", (7, 9, 11, 13, 15)),
}

_REQUIRED = {
    "blur": ("radius", "sigma"),
    "brightness": ("radius", "magnitude"),
    "hue": ("upper", "lower", "magnitude"),
    "noise": ("upper", "lower", "prob"),
    "watermark": ("ul", "lr", "font_size"),
}


@dataclass(frozen=True)
class ImageManipSpec:
    kind: str
    radius: float | None = None
    sigma: float | None = None
    magnitude: float | None = None
    upper: int | None = None
    lower: int | None = None
    prob: float | None = None
    ul: tuple[int, int] | None = None
    lr: tuple[int, int] | None = None
    font_size: int | None = None

    def __post_init__(self):
        if self.kind not in MANIP_KINDS:
            raise ConfigError(f"unknown manipulation kind {self.kind!r}")
        missing = [p for p in _REQUIRED[self.kind] if getattr(self, p) is None]
        if missing:
            raise ConfigError(f"{self.kind} manipulation missing {', '.join(missing)}")
        for p in ("ul", "lr"):
            v = getattr(self, p)
            if v is not None:
                object.__setattr__(self, p, (int(v[0]), int(v[1])))
        if self.radius is not None and not self.radius > 0:
            raise ConfigError("radius must be positive")
        if self.sigma is not None and not self.sigma > 0:
            raise ConfigError("sigma must be positive")
        if self.magnitude is not None and not 0.0 <= self.magnitude <= 1.0:
            raise ConfigError("magnitude must lie in [0, 1]")
        if self.prob is not None and not 0.0 <= self.prob <= 1.0:
            raise ConfigError("replace probability must lie in [0, 1]")
        if self.kind in ("hue", "noise") and not 0 <= self.upper < self.lower:
            raise ConfigError("stripe needs 0 <= upper < lower")
        if self.kind == "watermark":
            if not (self.ul[0] < self.lr[0] and self.ul[1] < self.lr[1]) or min(self.ul) < 0:
                raise ConfigError("watermark rectangle needs ul < lr componentwise")
            if int(self.font_size) < 1:
                raise ConfigError("font size must be >= 1")

    # constructors mirroring the parameter lists
    @classmethod
    def blur(cls, radius, sigma):
        return cls("blur", radius=float(radius), sigma=float(sigma))

    @classmethod
    def brightness(cls, radius, magnitude):
        return cls("brightness", radius=float(radius), magnitude=float(magnitude))

    @classmethod
    def hue(cls, upper, lower, magnitude):
        return cls("hue", upper=int(upper), lower=int(lower), magnitude=float(magnitude))

    @classmethod
    def noise(cls, upper, lower, prob):
        return cls("noise", upper=int(upper), lower=int(lower), prob=float(prob))

    @classmethod
    def watermark(cls, ul, lr, font_size):
        return cls("watermark", ul=tuple(ul), lr=tuple(lr), font_size=int(font_size))

    def check_image(self, h: int, w: int) -> None:
        if self.kind in ("hue", "noise") and self.lower > h:
            raise DimensionError(f"stripe rows [{self.upper}, {self.lower}) exceed image height {h}")
        if self.kind == "watermark" and (self.lr[0] > h or self.lr[1] > w):
            raise DimensionError(f"watermark rectangle {self.ul}-{self.lr} exceeds {h}x{w} image")

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items() if v is not None}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ImageManipSpec":
        try:
            return cls(**dict(d))
        except TypeError as exc:
            raise ConfigError(f"invalid manipulation spec {dict(d)!r}: {exc}") from None

    def with_visibility(self, value) -> "ImageManipSpec":
        param, _ = VISIBILITY_LADDERS[self.kind]
        cast = int if param == "font_size" else float
        return replace(self, **{param: cast(value)})


def visibility_ladder(kind: str) -> list[dict]:
    """Five parameter settings from least to most visible; region parameters untouched."""
    if kind not in VISIBILITY_LADDERS:
        raise ConfigError(f"unknown manipulation kind {kind!r}")
    param, values = VISIBILITY_LADDERS[kind]
    return [{param: v} for v in values]


def ladder_specs(base: ImageManipSpec) -> list[ImageManipSpec]:
    param, values = VISIBILITY_LADDERS[base.kind]
    return [base.with_visibility(v) for v in values]


# --------------------------------------------------------------------------
# regions


def _center_distance(h: int, w: int) -> np.ndarray:
    rr, cc = np.mgrid[0:h, 0:w].astype(np.float64)
    return np.hypot(rr - (h - 1) / 2.0, cc - (w - 1) / 2.0)


def region_mask(spec: ImageManipSpec | None, h: int, w: int) -> np.ndarray:
    """Boolean (H, W) mask of the pixels the manipulation may write."""
    if spec is None:
        return np.zeros((h, w), dtype=bool)
    spec.check_image(h, w)
    if spec.kind == "blur":
        return _center_distance(h, w) > spec.radius
    if spec.kind == "brightness":
        return _center_distance(h, w) < spec.radius
    mask = np.zeros((h, w), dtype=bool)
    if spec.kind in ("hue", "noise"):
        mask[spec.upper:spec.lower, :] = True
    else:
        mask[spec.ul[0]:spec.lr[0], spec.ul[1]:spec.lr[1]] = True
    return mask


def effective_region(spec: ImageManipSpec | None, h: int, w: int) -> EffectiveRegion:
    return EffectiveRegion.from_mask(region_mask(spec, h, w))


# --------------------------------------------------------------------------
# manipulations


def gaussian_kernel(sigma: float) -> np.ndarray:
    half = max(1, int(math.ceil(3.0 * sigma)))
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur, kernel cut at 3 sigma, clamp-to-edge borders."""
    k = gaussian_kernel(sigma)
    half = k.size // 2
    out = np.asarray(img, dtype=np.float64)
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (half, half)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for j, kj in enumerate(k):
            acc += kj * np.take(padded, np.arange(j, j + n), axis=axis)
        out = acc
    return out


def _blur(img, spec, rng, mask):
    return gaussian_blur(img, spec.sigma)


def _brightness(img, spec, rng, mask):
    h, w = mask.shape
    shift = spec.magnitude * np.maximum(0.0, 1.0 - _center_distance(h, w) / spec.radius)
    hsv = rgb_to_hsv(img)
    hsv[..., 2] = np.clip(hsv[..., 2] - shift, 0.0, 1.0)
    return hsv_to_rgb(hsv)


def _hue(img, spec, rng, mask):
    h, _ = mask.shape
    rows = np.arange(h, dtype=np.float64)
    width = spec.lower - spec.upper
    # sampled at row centres so both boundary rows of the stripe shift too
    delta = spec.magnitude * np.sin(math.pi * (rows - spec.upper + 0.5) / width)
    hsv = rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + delta[:, None]) % 1.0
    return hsv_to_rgb(hsv)


def _noise(img, spec, rng, mask):
    out = np.array(img, dtype=np.float64)
    rows = slice(spec.upper, spec.lower)
    band = out[rows]
    hit = rng.random(band.shape[:2]) < spec.prob
    colors = rng.random(band.shape)
    band[hit] = colors[hit]
    return out


def watermark_box(spec: ImageManipSpec) -> tuple[int, int]:
    """Rendered text size (rows, cols), shrunk to the rectangle when it does not fit."""
    n_chars = len(WATERMARK_PREFIX) + 4
    natural_w = n_chars * (_font.GLYPH_W + _font.GAP) - _font.GAP
    h = int(spec.font_size)
    w = max(1, int(round(natural_w * spec.font_size / _font.GLYPH_H)))
    return min(h, spec.lr[0] - spec.ul[0]), min(w, spec.lr[1] - spec.ul[1])


def render_watermark(text: str, box: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Nearest-cell resample of the text to ``box``: (ink mask, ink value)."""
    ink = _font.render(text)
    owner = _font.char_index(text)
    bh, bw = box
    ri = np.minimum(((np.arange(bh) + 0.5) * ink.shape[0] / bh).astype(np.int64), ink.shape[0] - 1)
    ci = np.minimum(((np.arange(bw) + 0.5) * ink.shape[1] / bw).astype(np.int64), ink.shape[1] - 1)
    mask = ink[np.ix_(ri, ci)]
    # prefix in white, digits in black
    value = np.where(owner[ci] < len(WATERMARK_PREFIX), 1.0, 0.0)
    return mask, np.broadcast_to(value, mask.shape)


def _watermark(img, spec, rng, mask):
    out = np.array(img, dtype=np.float64)
    digits = "".join(str(d) for d in rng.integers(0, 10, size=4))
    bh, bw = watermark_box(spec)
    r0 = spec.ul[0] + int(rng.integers(0, spec.lr[0] - spec.ul[0] - bh + 1))
    c0 = spec.ul[1] + int(rng.integers(0, spec.lr[1] - spec.ul[1] - bw + 1))
    ink, value = render_watermark(WATERMARK_PREFIX + digits, (bh, bw))
    patch = out[r0:r0 + bh, c0:c0 + bw]
    patch[ink] = value[ink][:, None]
    return out


_APPLY = {"blur": _blur, "brightness": _brightness, "hue": _hue, "noise": _noise, "watermark": _watermark}


def apply_manipulation(img, spec: ImageManipSpec | None, seed=0) -> tuple[np.ndarray, EffectiveRegion]:
    """Apply ``spec`` to an (H, W, 3) image; returns (image, ER).

    ``seed`` may be an int or a ``numpy.random.Generator``. Pixels outside
    the ER come back bit-identical to the input.
    """
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise DimensionError(f"expected an (H, W, 3) image, got shape {img.shape}")
    h, w, _ = img.shape
    mask = region_mask(spec, h, w)
    er = EffectiveRegion.from_mask(mask)
    if spec is None or not mask.any():
        return img.copy(), er
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    changed = np.clip(_APPLY[spec.kind](img, spec, rng, mask), 0.0, 1.0)
    out = img.copy()
    out[mask] = changed[mask].astype(img.dtype)
    return out, er


# --------------------------------------------------------------------------
# whole datasets


@dataclass
class ModifiedDataset:
    instances: list[Instance]
    p_star: float
    joint_er: EffectiveRegion | None
    skipped: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def modify_image_dataset(
    dataset: Sequence[Instance],
    reassign_cfg: ReassignConfig,
    class_to_manip: Mapping[int, ImageManipSpec | None],
    seed: int = 0,
    workers: int = 1,
) -> ModifiedDataset:
    """Reassign labels, then manipulate each image according to its new label.

    Every instance records the ER of the manipulation actually applied and,
    as its correlating set, the joint ER over all mapped manipulations.
    """
    k = reassign_cfg.matrix.k
    specs = {int(c): class_to_manip.get(c) for c in range(k)}
    joint_cache: dict[tuple[int, int], EffectiveRegion] = {}

    def joint_for(h, w):
        if (h, w) not in joint_cache:
            joint_cache[(h, w)] = joint_effective_region(effective_region(s, h, w) for s in specs.values())
        return joint_cache[(h, w)]

    for inst in dataset:
        if inst.kind != "image":
            raise DimensionError(f"{inst.id}: image manipulation needs image instances")
        for s in specs.values():
            if s is not None:
                s.check_image(inst.shape[0], inst.shape[1])
        joint_for(inst.shape[0], inst.shape[1])

    def one(i: int) -> Instance:
        inst = dataset[i]
        y_hat = reassign_label(inst.y_orig, i, reassign_cfg)
        spec = specs[y_hat]
        img, er = apply_manipulation(inst.array(), spec, stream(seed, MANIP_TAG, i))
        return inst.replace(
            features=img,
            y_hat=y_hat,
            n_classes=k,
            manip_id=spec.kind if spec is not None else None,
            er=er,
            gt=GroundTruthSpec(f_c=joint_for(inst.shape[0], inst.shape[1])),
        )

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(one, range(len(dataset))))
    else:
        out = [one(i) for i in range(len(dataset))]

    joints = set(joint_cache.values())
    return ModifiedDataset(
        instances=out,
        p_star=max_achievable_accuracy(reassign_cfg.matrix),
        joint_er=joints.pop() if len(joints) == 1 else None,
        meta={
            "matrix": reassign_cfg.matrix.to_dict(),
            "reassign_seed": int(reassign_cfg.seed),
            "manip_seed": int(seed),
            "class_to_manip": {str(c): (s.to_dict() if s else None) for c, s in specs.items()},
        },
    )
