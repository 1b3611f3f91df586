"""5x7 bitmap glyphs for the watermark text ("IMG" plus four digits)."""
import numpy as np

_GLYPHS = {
    "I": ["#####", "..#..", "..#..", "..#..", "..#..", "..#..", "#####"],
    "M": ["#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"],
    "G": [".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."],
    "0": [".###.", "#...#", "#..##", "#.#.#", "##..#", "#...#", ".###."],
    "1": ["..#..", ".##..", "..#..", "..#..", "..#..", "..#..", ".###."],
    "2": [".###.", "#...#", "....#", "...#.", "..#..", ".#...", "#####"],
    "3": ["####.", "....#", "....#", ".###.", "....#", "....#", "####."],
    "4": ["...#.", "..##.", ".#.#.", "#..#.", "#####", "...#.", "...#."],
    "5": ["#####", "#....", "####.", "....#", "....#", "#...#", ".###."],
    "6": [".###.", "#....", "#....", "####.", "#...#", "#...#", ".###."],
    "7": ["#####", "....#", "...#.", "..#..", ".#...", ".#...", ".#..."],
    "8": [".###.", "#...#", "#...#", ".###.", "#...#", "#...#", ".###."],
    "9": [".###.", "#...#", "#...#", ".####", "....#", "....#", ".###."],
}

GLYPH_H, GLYPH_W, GAP = 7, 5, 1


def glyph(ch: str) -> np.ndarray:
    return np.array([[c == "#" for c in row] for row in _GLYPHS[ch]], dtype=bool)


def render(text: str) -> np.ndarray:
    """Boolean ink mask of ``text`` at one cell per font pixel."""
    width = len(text) * (GLYPH_W + GAP) - GAP
    out = np.zeros((GLYPH_H, width), dtype=bool)
    for n, ch in enumerate(text):
        c0 = n * (GLYPH_W + GAP)
        out[:, c0:c0 + GLYPH_W] = glyph(ch)
    return out


def char_index(text: str) -> np.ndarray:
    """Per-column index of the character that owns each cell (-1 for gaps)."""
    width = len(text) * (GLYPH_W + GAP) - GAP
    idx = np.full(width, -1, dtype=np.int64)
    for n in range(len(text)):
        c0 = n * (GLYPH_W + GAP)
        idx[c0:c0 + GLYPH_W] = n
    return idx
