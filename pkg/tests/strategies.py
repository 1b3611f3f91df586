"""Hypothesis strategies and random generators shared by the tests."""
import numpy as np
from hypothesis import strategies as st

from attrgt.imagemanip import VISIBILITY_LADDERS, ImageManipSpec


def random_spec(kind: str, h: int, w: int, g: np.random.Generator) -> ImageManipSpec:
    """A valid spec of ``kind`` for an h x w image, visibility drawn from the ladder."""
    param, values = VISIBILITY_LADDERS[kind]
    vis = values[int(g.integers(len(values)))]
    if kind in ("blur", "brightness"):
        radius = float(g.uniform(0.5, max(h, w)))
        return ImageManipSpec(kind, radius=radius, **{param: vis})
    if kind in ("hue", "noise"):
        upper = int(g.integers(0, h - 1))
        lower = int(g.integers(upper + 1, h + 1))
        return ImageManipSpec(kind, upper=upper, lower=lower, **{param: vis})
    r0, c0 = int(g.integers(0, h - 1)), int(g.integers(0, w - 1))
    r1, c1 = int(g.integers(r0 + 1, h + 1)), int(g.integers(c0 + 1, w + 1))
    return ImageManipSpec.watermark((r0, c0), (r1, c1), vis)


def random_image(g: np.random.Generator, h=None, w=None) -> np.ndarray:
    h = h or int(g.integers(4, 25))
    w = w or int(g.integers(4, 25))
    img = g.random((h, w, 3), dtype=np.float32)
    # a few saturated / gray pixels exercise the HSV edge cases
    img[0, 0] = 0.0
    img[-1, -1] = 1.0
    img[0, -1] = 0.5
    return img


seeds = st.integers(0, 2**32 - 1)
