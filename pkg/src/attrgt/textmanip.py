"""Article-substitution text datasets with tracked article positions.

Reviews are lists of lowercase tokens. In the article dataset every article
is rewritten to "the" (positive) or "a" (negative). The CN/NC variants split
a review at ``len // 2``: articles in the correlating half follow the label,
articles in the other half all become one word drawn independently of it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .core import EffectiveRegion, GroundTruthSpec, Instance
from .errors import ConfigError, FormatError
from .streams import stream

ARTICLES = ("a", "an", "the")
POSITIVE_ARTICLE = "the"
NEGATIVE_ARTICLE = "a"
LABEL_TAG = "text-label"
DECOY_TAG = "text-decoy"


@dataclass(frozen=True)
class TextInstance:
    tokens: tuple[str, ...]
    label: int
    corr_indices: EffectiveRegion
    noncorr_indices: EffectiveRegion = field(default_factory=EffectiveRegion)
    source_index: int = -1
    decoy: str | None = None

    def __post_init__(self):
        if set(self.corr_indices) & set(self.noncorr_indices):
            raise ConfigError("correlating and non-correlating indices overlap")
        for i in (*self.corr_indices, *self.noncorr_indices):
            if self.tokens[i] not in ARTICLES:
                raise ConfigError(f"index {i} does not hold an article")


@dataclass
class TextDataset:
    instances: list[TextInstance]
    skipped: list[dict]
    mode: str


def label_for(seed: int, index: int) -> int:
    return int(stream(seed, LABEL_TAG, index).integers(0, 2))


def decoy_for(seed: int, index: int) -> str:
    return ARTICLES[int(stream(seed, DECOY_TAG, index).integers(0, len(ARTICLES)))]


def article_positions(tokens: Sequence[str], lo: int = 0, hi: int | None = None) -> list[int]:
    hi = len(tokens) if hi is None else hi
    return [i for i in range(lo, hi) if tokens[i] in ARTICLES]


def midpoint(tokens: Sequence[str]) -> int:
    return len(tokens) // 2


def label_article(label: int) -> str:
    return POSITIVE_ARTICLE if label == 1 else NEGATIVE_ARTICLE


def substitute_articles(tokens: Sequence[str], label: int) -> TextInstance:
    """Rewrite every article according to ``label``."""
    toks = list(tokens)
    pos = article_positions(toks)
    word = label_article(label)
    for i in pos:
        toks[i] = word
    return TextInstance(tuple(toks), label, EffectiveRegion(tuple(pos)))


def mix_articles(tokens: Sequence[str], label: int, mode: str, decoy: str) -> TextInstance:
    """CN: first half correlates with the label; NC: second half does."""
    if mode not in ("CN", "NC"):
        raise ConfigError(f"mode must be CN or NC, got {mode!r}")
    if decoy not in ARTICLES:
        raise ConfigError(f"decoy {decoy!r} is not an article")
    toks = list(tokens)
    mid = midpoint(toks)
    first, second = article_positions(toks, 0, mid), article_positions(toks, mid)
    corr, noncorr = (first, second) if mode == "CN" else (second, first)
    word = label_article(label)
    for i in corr:
        toks[i] = word
    for i in noncorr:
        toks[i] = decoy
    return TextInstance(tuple(toks), label, EffectiveRegion(tuple(corr)), EffectiveRegion(tuple(noncorr)),
                        decoy=decoy)


def _check_corpus(corpus):
    if not corpus:
        raise ConfigError("corpus is empty")


def build_article_dataset(corpus: Sequence[Sequence[str]], seed: int = 0) -> TextDataset:
    _check_corpus(corpus)
    out, skipped = [], []
    for n, review in enumerate(corpus):
        if not article_positions(review):
            skipped.append({"index": n, "reason": "no articles"})
            continue
        inst = substitute_articles(review, label_for(seed, n))
        out.append(TextInstance(inst.tokens, inst.label, inst.corr_indices, source_index=n))
    return TextDataset(out, skipped, "article")


def build_mixed_dataset(corpus: Sequence[Sequence[str]], mode: str, seed: int = 0) -> TextDataset:
    """Label and decoy come from disjoint streams, so the decoy carries no label information."""
    _check_corpus(corpus)
    if mode not in ("CN", "NC"):
        raise ConfigError(f"mode must be CN or NC, got {mode!r}")
    out, skipped = [], []
    for n, review in enumerate(corpus):
        mid = midpoint(review)
        if not article_positions(review, 0, mid) or not article_positions(review, mid):
            skipped.append({"index": n, "reason": "half without articles"})
            continue
        inst = mix_articles(review, label_for(seed, n), mode, decoy_for(seed, n))
        out.append(TextInstance(inst.tokens, inst.label, inst.corr_indices, inst.noncorr_indices,
                                source_index=n, decoy=inst.decoy))
    return TextDataset(out, skipped, mode)


# --------------------------------------------------------------------------
# synthetic corpus

_ADJ = (
    "amber golden hazy clear dark pale crisp smooth bitter sweet malty hoppy fruity "
    "creamy thin thick light heavy dry tart rich bold mild sharp fresh stale faint "
    "strong subtle earthy floral piney citrus roasted toasty nutty spicy sour funky "
    "lovely decent solid great poor weak big small nice"
).split()
_NOUN = (
    "beer ale stout lager porter pint glass bottle can head foam lacing aroma nose "
    "taste finish body mouthfeel carbonation malt hops yeast caramel chocolate coffee "
    "toffee grapefruit lemon orange pine bread biscuit honey vanilla oak smoke color "
    "brew style brewery tap pour retention bubbles sip hint note flavor palate "
    "sweetness bitterness kick bite backbone"
).split()
_VERB = (
    "pours smells tastes feels finishes lingers shows offers delivers has leaves "
    "brings gives opens fades settles drinks goes holds starts ends poured drank "
    "tried enjoyed loved liked found noticed expected"
).split()
_OTHER = (
    "with and but very quite really slightly too not into of in on from that this "
    "some more less it is was i my overall then just also up down well so"
).split()
VOCAB_WORDS = tuple(dict.fromkeys(_ADJ + _NOUN + _VERB + _OTHER))


def synthetic_corpus(n_reviews: int, seed: int = 0, article_rate: float = 0.079,
                     min_len: int = 20, max_len: int = 60) -> list[list[str]]:
    """Template-free random reviews over ~200 words with a controlled article rate."""
    if not 0.0 <= article_rate <= 1.0:
        raise ConfigError("article_rate must lie in [0, 1]")
    corpus = []
    words = np.array(VOCAB_WORDS)
    for n in range(n_reviews):
        g = stream(seed, "corpus", n)
        length = int(g.integers(min_len, max_len + 1))
        is_art = g.random(length) < article_rate
        arts = g.integers(0, len(ARTICLES), size=length)
        other = g.integers(0, len(words), size=length)
        corpus.append([ARTICLES[a] if m else str(words[o]) for m, a, o in zip(is_art, arts, other)])
    return corpus


# --------------------------------------------------------------------------
# file formats and conversion to core instances


def read_corpus(path) -> list[list[str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(f"cannot read corpus {path}: {exc.strerror}") from exc
    return [line.lower().split() for line in text.splitlines() if line.strip()]


def write_corpus(path, corpus: Iterable[Sequence[str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for review in corpus:
            fh.write(" ".join(review) + "\n")


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]

    @classmethod
    def build(cls, corpora: Iterable[Iterable[str]]) -> "Vocabulary":
        seen = dict.fromkeys(ARTICLES)
        for review in corpora:
            for t in review:
                seen.setdefault(t)
        return cls(tuple(seen))

    def __len__(self):
        return len(self.tokens)

    def index(self) -> dict[str, int]:
        return {t: i for i, t in enumerate(self.tokens)}

    def encode(self, tokens: Sequence[str]) -> list[int]:
        idx = self.index()
        try:
            return [idx[t] for t in tokens]
        except KeyError as exc:
            raise ConfigError(f"token {exc.args[0]!r} not in vocabulary") from None

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for i, t in enumerate(self.tokens):
                fh.write(f"{t}\t{i}\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise FormatError(f"cannot read vocabulary {path}: {exc.strerror}") from exc
        pairs = []
        for line in lines:
            if line.strip():
                tok, idx = line.rsplit("\t", 1)
                pairs.append((int(idx), tok))
        pairs.sort()
        if [i for i, _ in pairs] != list(range(len(pairs))):
            raise FormatError(f"{path}: vocabulary ids must be 0..N-1")
        return cls(tuple(t for _, t in pairs))


def to_instances(ds: TextDataset, vocab: Vocabulary, splits: Sequence[str] | None = None) -> list[Instance]:
    out = []
    for n, ti in enumerate(ds.instances):
        ids = vocab.encode(ti.tokens)
        out.append(Instance(
            id=f"review-{ti.source_index:06d}",
            features=np.asarray(ids, dtype=np.float32),
            shape=(len(ids),),
            y_orig=ti.label,
            y_hat=ti.label,
            kind="text",
            manip_id=ds.mode,
            er=EffectiveRegion.of((*ti.corr_indices, *ti.noncorr_indices)),
            gt=GroundTruthSpec(ti.corr_indices, ti.noncorr_indices),
            split=splits[n] if splits is not None else "train",
        ))
    return out
