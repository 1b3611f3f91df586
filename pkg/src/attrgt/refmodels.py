"""Desk-scale reference classifiers and attribution methods with exact oracles.

Two architectures: linear softmax and a one-hidden-layer tanh network.
Models take flat input vectors; for images the input is the (H, W, C)
array flattened in C order, and pixel-level scores are summed over
channels. Text uses a positional bag-of-words over (half, token) pairs.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .core import AttributionMap, Instance
from .errors import ConfigError, FormatError, SizeError, TrainingError

MAX_SHAPLEY_GROUPS = 20
MODEL_MAGIC = b"ATMD"
MODEL_VERSION = 1


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(eq=False)
class RefModel:
    kind: str
    params: dict[str, np.ndarray]
    input_dim: int
    n_classes: int

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ConfigError(f"unknown model kind {self.kind!r}")
        need = ("W", "b") if self.kind == "linear" else ("W1", "b1", "W2", "b2")
        for k in need:
            if k not in self.params:
                raise ConfigError(f"{self.kind} model missing parameter {k}")
        for k, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise ConfigError(f"parameter {k} is not finite")

    @property
    def hidden(self) -> int:
        return self.params["W1"].shape[1] if self.kind == "mlp" else 0

    def logits(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "linear":
            return x @ p["W"] + p["b"]
        return np.tanh(x @ p["W1"] + p["b1"]) @ p["W2"] + p["b2"]

    def proba(self, x: np.ndarray) -> np.ndarray:
        return softmax(self.logits(x))

    def logits_perturbed(self, x: np.ndarray, deltas: np.ndarray) -> np.ndarray:
        """Logits at ``x + delta`` for each row of ``deltas``.

        The first layer is evaluated as base + delta @ W, so inputs the
        model ignores leave the output bit-identical to the unperturbed one.
        """
        x = np.asarray(x, dtype=np.float64)
        p = self.params
        if self.kind == "linear":
            return (x @ p["W"] + p["b"]) + deltas @ p["W"]
        pre = (x @ p["W1"] + p["b1"]) + deltas @ p["W1"]
        return np.tanh(pre) @ p["W2"] + p["b2"]

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(x), axis=-1)

    def input_grad(self, x: np.ndarray, c: int) -> np.ndarray:
        """d logit_c / d x for a single input vector."""
        p = self.params
        if self.kind == "linear":
            return p["W"][:, c].copy()
        h = np.tanh(np.asarray(x, dtype=np.float64) @ p["W1"] + p["b1"])
        return p["W1"] @ ((1.0 - h * h) * p["W2"][:, c])

    def copy(self) -> "RefModel":
        return RefModel(self.kind, {k: v.copy() for k, v in self.params.items()}, self.input_dim, self.n_classes)


def init_model(kind: str, input_dim: int, n_classes: int, hidden: int = 16, seed: int = 0) -> RefModel:
    rng = np.random.default_rng([seed, 1])
    if kind == "linear":
        params = {"W": np.zeros((input_dim, n_classes)), "b": np.zeros(n_classes)}
    elif kind == "mlp":
        params = {
            "W1": rng.normal(0.0, 1.0 / math.sqrt(input_dim), (input_dim, hidden)),
            "b1": np.zeros(hidden),
            "W2": rng.normal(0.0, 1.0 / math.sqrt(hidden), (hidden, n_classes)),
            "b2": np.zeros(n_classes),
        }
    else:
        raise ConfigError(f"unknown model kind {kind!r}")
    return RefModel(kind, params, input_dim, n_classes)


# --------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.1
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    l2: float = 1e-3
    patience: int = 5
    l1: float = 0.0
    model: str = "linear"
    hidden: int = 16

    def __post_init__(self):
        if not (self.lr > 0 and self.batch_size >= 1 and self.epochs >= 1 and self.patience >= 1):
            raise ConfigError("lr, batch_size, epochs and patience must be positive")
        if self.l2 < 0 or self.l1 < 0:
            raise ConfigError("l1 and l2 must be non-negative")
        if self.model not in ("linear", "mlp") or self.hidden < 1:
            raise ConfigError("model must be 'linear' or 'mlp' with hidden >= 1")


@dataclass
class TrainData:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray
    n_classes: int = 2


@dataclass
class TrainResult:
    model: RefModel
    best_epoch: int
    history: list[dict] = field(default_factory=list)


def cross_entropy(model: RefModel, x: np.ndarray, y: np.ndarray) -> float:
    z = model.logits(x)
    z = z - z.max(axis=1, keepdims=True)
    return float(np.mean(np.log(np.exp(z).sum(axis=1)) - z[np.arange(len(y)), y]))


def accuracy(model: RefModel, x: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(model.predict(x) == np.asarray(y)))


def _loss_and_grads(model: RefModel, x, y, l2):
    p = model.params
    n = x.shape[0]
    onehot = np.zeros((n, model.n_classes))
    onehot[np.arange(n), y] = 1.0
    if model.kind == "linear":
        z = x @ p["W"] + p["b"]
    else:
        h = np.tanh(x @ p["W1"] + p["b1"])
        z = h @ p["W2"] + p["b2"]
    zs = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(zs).sum(axis=1))
    loss = float(np.mean(logsum - zs[np.arange(n), y]))
    dz = (softmax(z) - onehot) / n
    if model.kind == "linear":
        grads = {"W": x.T @ dz + l2 * p["W"], "b": dz.sum(axis=0)}
        loss += 0.5 * l2 * float(np.sum(p["W"] ** 2))
    else:
        dh = (dz @ p["W2"].T) * (1.0 - h * h)
        grads = {
            "W2": h.T @ dz + l2 * p["W2"], "b2": dz.sum(axis=0),
            "W1": x.T @ dh + l2 * p["W1"], "b1": dh.sum(axis=0),
        }
        loss += 0.5 * l2 * float(np.sum(p["W1"] ** 2) + np.sum(p["W2"] ** 2))
    return loss, grads


def _soft_threshold(model: RefModel, t: float) -> None:
    """Proximal step for the L1 penalty on weight matrices (biases untouched)."""
    for k in ("W", "W1", "W2"):
        if k in model.params:
            w = model.params[k]
            model.params[k] = np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def train(data: TrainData, cfg: TrainConfig,
          on_epoch: Callable[[int, RefModel, dict], None] | None = None) -> TrainResult:
    """Minibatch SGD on cross-entropy (+ L2, optional proximal L1).

    Returns the best-validation model: highest validation accuracy, ties
    broken by lower validation loss; patience counts epochs without such an
    improvement. Deterministic given ``cfg.seed``. ``on_epoch(epoch, model,
    stats)`` is called after every epoch with the current (not best) model.
    """
    x = np.asarray(data.x_train, dtype=np.float64)
    y = np.asarray(data.y_train, dtype=np.int64)
    xv = np.asarray(data.x_val, dtype=np.float64)
    yv = np.asarray(data.y_val, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0] or x.shape[0] == 0:
        raise ConfigError("training data must be a non-empty (n, D) array with n labels")
    model = init_model(cfg.model, x.shape[1], data.n_classes, cfg.hidden, cfg.seed)
    rng = np.random.default_rng([cfg.seed, 2])
    history = []
    with np.errstate(over="ignore", invalid="ignore"):
        return _train_loop(model, x, y, xv, yv, cfg, rng, on_epoch, history)


def _train_loop(model, x, y, xv, yv, cfg, rng, on_epoch, history) -> TrainResult:
    best, best_key, best_epoch, stale = model.copy(), (-1.0, -math.inf), 0, 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(x.shape[0])
        losses = []
        for start in range(0, x.shape[0], cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = _loss_and_grads(model, x[idx], y[idx], cfg.l2)
            if not math.isfinite(loss):
                raise TrainingError(
                    "training diverged (non-finite loss)",
                    {"epoch": epoch, "batch_start": start, "lr": cfg.lr,
                     "recent_losses": losses[-5:]},
                )
            losses.append(loss)
            for k, g in grads.items():
                model.params[k] -= cfg.lr * g
            if cfg.l1 > 0:
                _soft_threshold(model, cfg.lr * cfg.l1)
        xe, ye = (xv, yv) if len(yv) else (x, y)
        val_acc, val_loss = accuracy(model, xe, ye), cross_entropy(model, xe, ye)
        stats = {"epoch": epoch, "loss": float(np.mean(losses)), "val_accuracy": val_acc,
                 "val_loss": val_loss}
        history.append(stats)
        if on_epoch is not None:
            on_epoch(epoch, model, stats)
        key = (val_acc, -val_loss)
        if key > best_key:
            best, best_key, best_epoch, stale = model.copy(), key, epoch, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return TrainResult(best, best_epoch, history)


# --------------------------------------------------------------------------
# attribution


def _pixel_sum(g: np.ndarray, shape) -> np.ndarray:
    if shape is None or len(shape) != 3:
        return g
    return g.reshape(shape).sum(axis=-1).ravel()


def _gradient_map(model: RefModel, x: np.ndarray, c: int, shape) -> np.ndarray:
    return _pixel_sum(np.abs(model.input_grad(x, c)), shape)


def grad_attribution(model: RefModel, x, shape=None, instance_id: str = "") -> AttributionMap:
    """|d(logit of the predicted class)/dx|, channels summed when ``shape`` is (H, W, C)."""
    x = np.asarray(x, dtype=np.float64).ravel()
    c = int(model.predict(x))
    return AttributionMap(instance_id, _gradient_map(model, x, c, shape))


def smoothgrad(model: RefModel, x, n: int = 50, sigma_frac: float = 0.15, seed: int = 0,
               shape=None, instance_id: str = "") -> AttributionMap:
    """Mean gradient map over ``n`` Gaussian-perturbed copies of ``x``.

    Absolute values are taken per copy, before averaging. The class is the
    prediction on the clean input.
    """
    if n < 1:
        raise ConfigError("smoothgrad needs n >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    c = int(model.predict(x))
    sigma = sigma_frac * (x.max() - x.min())
    rng = np.random.default_rng(seed)
    mean = None
    for k in range(1, n + 1):
        g = _gradient_map(model, x + rng.normal(0.0, 1.0, x.shape) * sigma, c, shape)
        # running mean: exact when every copy yields the same map
        mean = g.copy() if mean is None else mean + (g - mean) / k
    return AttributionMap(instance_id, mean)


def _unit_to_inputs(shape, d: int):
    """Map from attributable unit to its input indices."""
    if shape is not None and len(shape) == 3:
        h, w, ch = shape
        return h * w, lambda units: (np.asarray(units)[:, None] * ch + np.arange(ch)).ravel()
    return d, lambda units: np.asarray(units, dtype=np.int64)


def _baseline_vector(baseline, x):
    b = np.broadcast_to(np.asarray(baseline, dtype=np.float64), x.shape).astype(np.float64)
    return b.ravel()


def occlusion_attribution(model: RefModel, x, baseline=0.0, window: int = 1, shape=None,
                          instance_id: str = "") -> AttributionMap:
    """Drop in predicted-class probability when the window around each unit is set to baseline.

    Images use a ``window`` x ``window`` pixel square (all channels); flat
    inputs use a 1-D window.
    """
    if window < 1:
        raise ConfigError("window must be >= 1")
    x = np.asarray(x, dtype=np.float64).ravel()
    b = _baseline_vector(baseline, x)
    c = int(model.predict(x))
    lo, hi = (window - 1) // 2, window // 2
    if shape is not None and len(shape) == 3:
        h, w, ch = shape
        units = h * w
        xs = np.repeat(x[None, :], units, axis=0).reshape(units, h, w, ch)
        bs = b.reshape(h, w, ch)
        for u in range(units):
            r, q = divmod(u, w)
            r0, r1, q0, q1 = max(0, r - lo), min(h, r + hi + 1), max(0, q - lo), min(w, q + hi + 1)
            xs[u, r0:r1, q0:q1] = bs[r0:r1, q0:q1]
        xs = xs.reshape(units, -1)
    else:
        units = x.size
        xs = np.repeat(x[None, :], units, axis=0)
        for u in range(units):
            s0, s1 = max(0, u - lo), min(units, u + hi + 1)
            xs[u, s0:s1] = b[s0:s1]
    # row 0 is the unperturbed input, evaluated on the same path as the occlusions
    deltas = np.vstack([np.zeros((1, x.size)), xs - x[None, :]])
    probs = softmax(model.logits_perturbed(x, deltas))[:, c]
    return AttributionMap(instance_id, probs[0] - probs[1:])


def shapley_by_enumeration(value: Callable[[np.ndarray], np.ndarray], n_players: int,
                           chunk: int = 1 << 14) -> np.ndarray:
    """Exact Shapley values of a game given ``value(masks) -> v`` over bitmask coalitions."""
    if n_players > MAX_SHAPLEY_GROUPS:
        raise SizeError(f"{n_players} players exceed the {MAX_SHAPLEY_GROUPS}-player enumeration limit")
    if n_players < 1:
        raise ConfigError("need at least one player")
    n_masks = 1 << n_players
    v = np.empty(n_masks)
    for start in range(0, n_masks, chunk):
        masks = np.arange(start, min(n_masks, start + chunk), dtype=np.int64)
        v[start:start + masks.size] = value(masks)
    fact = [math.factorial(k) for k in range(n_players + 1)]
    weight = np.array([fact[s] * fact[n_players - s - 1] / fact[n_players] for s in range(n_players)])
    all_masks = np.arange(n_masks, dtype=np.int64)
    size = np.bitwise_count(all_masks).astype(np.int64)
    phi = np.empty(n_players)
    for i in range(n_players):
        bit = 1 << i
        without = all_masks[(all_masks & bit) == 0]
        phi[i] = np.sum(weight[size[without]] * (v[without | bit] - v[without]))
    return phi


def exact_shapley_groups(model: RefModel, x, partition: Sequence[Sequence[int]], baseline=0.0,
                         shape=None, output: str = "proba") -> np.ndarray:
    """Exact Shapley value of each feature group for the predicted class.

    The game is v(S) = predicted-class probability (or logit with
    ``output="logit"``) with groups outside S set to ``baseline``. Groups
    are lists of units (pixels for images) and must partition all units.
    """
    if len(partition) > MAX_SHAPLEY_GROUPS:
        raise SizeError(f"{len(partition)} groups exceed the {MAX_SHAPLEY_GROUPS}-group limit")
    if output not in ("proba", "logit"):
        raise ConfigError("output must be 'proba' or 'logit'")
    x = np.asarray(x, dtype=np.float64).ravel()
    b = _baseline_vector(baseline, x)
    n_units, expand = _unit_to_inputs(shape, x.size)
    seen = np.zeros(n_units, dtype=np.int64)
    member = np.zeros((len(partition), x.size))
    for g, units in enumerate(partition):
        units = np.asarray(list(units), dtype=np.int64)
        if units.size and (units.min() < 0 or units.max() >= n_units):
            raise ConfigError("group index out of range")
        seen[units] += 1
        member[g, expand(units)] = 1.0
    if np.any(seen != 1):
        raise ConfigError("groups must be disjoint and cover every unit")
    c = int(model.predict(x))
    diff = x - b
    bits = 1 << np.arange(len(partition), dtype=np.int64)

    def value(masks):
        on = ((masks[:, None] & bits[None, :]) != 0).astype(np.float64)
        inputs = b[None, :] + (on @ member) * diff[None, :]
        out = model.proba(inputs) if output == "proba" else model.logits(inputs)
        return out[:, c]

    return shapley_by_enumeration(value, len(partition))


def mean_baseline(x: np.ndarray) -> np.ndarray:
    """Per-feature dataset mean, the default occlusion/Shapley reference."""
    return np.asarray(x, dtype=np.float64).mean(axis=0)


# --------------------------------------------------------------------------
# text: positional bag of words


def position_buckets(length: int, n_buckets: int = 2) -> np.ndarray:
    """Bucket of each position; with two buckets the split is at length // 2."""
    i = np.arange(length)
    return n_buckets - 1 - ((length - 1 - i) * n_buckets) // max(length, 1)


@dataclass(eq=False)
class PositionalBowModel:
    vocab_size: int
    n_buckets: int
    model: RefModel

    def featurize(self, tokens: Sequence[int]) -> np.ndarray:
        tok = np.asarray(tokens, dtype=np.int64)
        out = np.zeros(self.n_buckets * self.vocab_size)
        np.add.at(out, position_buckets(tok.size, self.n_buckets) * self.vocab_size + tok, 1.0)
        return out

    def featurize_many(self, reviews) -> np.ndarray:
        return np.stack([self.featurize(t) for t in reviews]) if len(reviews) else np.zeros((0, self.n_buckets * self.vocab_size))

    def predict(self, tokens) -> int:
        return int(self.model.predict(self.featurize(tokens)))

    def token_attribution(self, tokens, instance_id: str = "") -> AttributionMap:
        """|weight of (bucket, token)| for the predicted class, one score per position."""
        tok = np.asarray(tokens, dtype=np.int64)
        c = self.predict(tok)
        w = self.model.params["W"][:, c]
        return AttributionMap(instance_id, np.abs(w[position_buckets(tok.size, self.n_buckets) * self.vocab_size + tok]))


def train_bow(train_tokens, y_train, val_tokens, y_val, vocab_size: int, cfg: TrainConfig,
              n_buckets: int = 2, on_epoch=None) -> tuple[PositionalBowModel, TrainResult]:
    if cfg.model != "linear":
        raise ConfigError("the positional bag-of-words model is linear")
    shell = PositionalBowModel(vocab_size, n_buckets, init_model("linear", n_buckets * vocab_size, 2))
    data = TrainData(shell.featurize_many(train_tokens), np.asarray(y_train),
                     shell.featurize_many(val_tokens), np.asarray(y_val), 2)
    result = train(data, cfg, on_epoch)
    return PositionalBowModel(vocab_size, n_buckets, result.model), result


# --------------------------------------------------------------------------
# persistence: binary parameter blob plus JSON sidecar

_HDR = struct.Struct("<4sII")


def save_model(model, path, extra: dict | None = None) -> None:
    """Write ``path`` (parameters) and ``path.json`` (hyperparameters)."""
    path = Path(path)
    meta = dict(extra or {})
    ref = model.model if isinstance(model, PositionalBowModel) else model
    if isinstance(model, PositionalBowModel):
        meta["text"] = {"vocab_size": model.vocab_size, "n_buckets": model.n_buckets}
    meta.update({"format": "attrgt-refmodel", "version": MODEL_VERSION, "kind": ref.kind,
                 "input_dim": ref.input_dim, "n_classes": ref.n_classes, "hidden": ref.hidden})
    names = sorted(ref.params)
    with open(path, "wb") as fh:
        fh.write(_HDR.pack(MODEL_MAGIC, MODEL_VERSION, len(names)))
        for name in names:
            arr = np.ascontiguousarray(ref.params[name], dtype="<f8")
            nb = name.encode()
            fh.write(struct.pack("<I", len(nb)) + nb + struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(arr.tobytes())
    with open(str(path) + ".json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=2)


def load_model(path):
    path = Path(path)
    try:
        data = path.read_bytes()
        meta = json.loads(Path(str(path) + ".json").read_text(encoding="utf-8"))
    except OSError as exc:
        raise FormatError(f"cannot read model {exc.filename}: {exc.strerror}", exc.filename) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}.json: invalid model sidecar ({exc.msg})", str(path) + ".json") from exc
    if len(data) < _HDR.size:
        raise FormatError(f"{path}: truncated model header", path)
    magic, version, count = _HDR.unpack_from(data)
    if magic != MODEL_MAGIC or version != MODEL_VERSION:
        raise FormatError(f"{path}: not a version-{MODEL_VERSION} model file", path)
    try:
        params = _read_params(data, count)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: corrupt model file ({exc})", path) from exc
    ref = RefModel(meta["kind"], params, int(meta["input_dim"]), int(meta["n_classes"]))
    if "text" in meta:
        return PositionalBowModel(int(meta["text"]["vocab_size"]), int(meta["text"]["n_buckets"]), ref), meta
    return ref, meta


def _read_params(data: bytes, count: int) -> dict[str, np.ndarray]:
    off = _HDR.size
    params = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nl].decode()
        off += nl
        (ndim,) = struct.unpack_from("<I", data, off)
        off += 4
        shp = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        n = int(np.prod(shp)) if ndim else 1
        params[name] = np.frombuffer(data, dtype="<f8", count=n, offset=off).reshape(shp).copy()
        off += 8 * n
    if off != len(data):
        raise ValueError("trailing bytes")
    return params


def instance_input(inst: Instance) -> np.ndarray:
    return inst.features.astype(np.float64)
