"""Feature construction, normalization, and the from-scratch MLP.

The network is a small fully connected net (13 inputs, three tanh hidden
layers by default) trained by deterministic full-batch gradient descent.
Two heads are supported: a sigmoid head trained with cross-entropy plus L2
weight decay (buy/no-buy classification), and an identity head trained
with mean squared error (next-day price regression on normalized targets).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass

import numpy as np

from .errors import DivergenceDetected, EmptyBatch, MissingDay
from .market import MarketSnapshot
from .solver import RegularizedSolution

log = logging.getLogger(__name__)

N_FEATURES = 13
FEATURE_NAMES = (
    "est_tau",
    "est_2tau",
    "stock_ask_0",
    "stock_bid_0",
    "opt_ask_m2",
    "opt_ask_m1",
    "opt_ask_0",
    "opt_bid_m2",
    "opt_bid_m1",
    "opt_bid_0",
    "ivol_m2",
    "ivol_m1",
    "ivol_0",
)
# Positions of the two minimizer features and six raw option quotes (these
# normalize as plain prices), the two stock features (strike-offset rule),
# and the pass-through volatilities.
_PRICE_IDX = (0, 1, 4, 5, 6, 7, 8, 9)
_STOCK_IDX = (2, 3)
_VOL_IDX = (10, 11, 12)
_QUOTE_IDX = (4, 5, 6, 7, 8, 9)

_CLAMP = 1e-12
_DEGENERATE_SD = 1e-9


@dataclass(frozen=True)
class NormalizationStats:
    """Mean and sample standard deviation of the six raw option quotes."""

    mu: float
    sd: float

    @property
    def degenerate(self) -> bool:
        return self.sd < _DEGENERATE_SD


@dataclass(frozen=True)
class FeatureRecord:
    option_id: str
    date: int
    strike: float
    raw: np.ndarray
    label: int
    real_0: float
    real_tau: float

    def __post_init__(self):
        object.__setattr__(self, "raw", np.asarray(self.raw, dtype=float))
        if self.raw.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} features, got {self.raw.shape}")
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label}")

    def stats(self) -> NormalizationStats:
        quotes = self.raw[list(_QUOTE_IDX)]
        return NormalizationStats(mu=float(quotes.mean()), sd=float(quotes.std(ddof=1)))

    @property
    def stock_mid(self) -> float:
        return 0.5 * (self.raw[2] + self.raw[3])


def build_features(
    day_minus2: MarketSnapshot,
    day_minus1: MarketSnapshot,
    day0: MarketSnapshot,
    sol: RegularizedSolution,
    next_day: MarketSnapshot,
) -> FeatureRecord:
    """Assemble the 13-feature record for one option/day, with its label.

    Label is 1 when tomorrow's realized mid is at least today's mid (ties
    count as profitable, matching the buy rule).
    """
    days = (day_minus2, day_minus1, day0, next_day)
    if len({s.option_id for s in days}) != 1:
        raise MissingDay("snapshots mix option ids")
    expected = range(day_minus2.date, day_minus2.date + 4)
    if tuple(s.date for s in days) != tuple(expected):
        raise MissingDay(f"non-consecutive days {[s.date for s in days]}")

    raw = np.array(
        [
            sol.est_tau,
            sol.est_2tau,
            day0.s_a,
            day0.s_b,
            day_minus2.u_a,
            day_minus1.u_a,
            day0.u_a,
            day_minus2.u_b,
            day_minus1.u_b,
            day0.u_b,
            day_minus2.ivol,
            day_minus1.ivol,
            day0.ivol,
        ]
    )
    real_0 = day0.option_mid
    real_tau = next_day.option_mid
    return FeatureRecord(
        option_id=day0.option_id,
        date=day0.date,
        strike=day0.strike,
        raw=raw,
        label=1 if real_tau >= real_0 else 0,
        real_0=real_0,
        real_tau=real_tau,
    )


def normalize(rec: FeatureRecord) -> tuple[np.ndarray, bool]:
    """Z-score the price-like features against the record's own quote stats.

    Option-price features map via (v - mu)/sd; the stock bid/ask map via
    ((s - strike) - mu)/sd (the strike-offset rule, applied verbatim even
    though it mixes stock and option scales); volatilities pass through.
    Returns (features, degenerate_flag); a degenerate sd zeroes the price
    features instead of failing.
    """
    stats = rec.stats()
    out = rec.raw.copy()
    if stats.degenerate:
        for i in _PRICE_IDX + _STOCK_IDX:
            out[i] = 0.0
        return out, True
    for i in _PRICE_IDX:
        out[i] = (rec.raw[i] - stats.mu) / stats.sd
    for i in _STOCK_IDX:
        out[i] = ((rec.raw[i] - rec.strike) - stats.mu) / stats.sd
    return out, False


def normalize_target(rec: FeatureRecord) -> float:
    """Regression target: realized next-day mid under the record's stats."""
    stats = rec.stats()
    if stats.degenerate:
        return 0.0
    return (rec.real_tau - stats.mu) / stats.sd


def denormalize_prediction(rec: FeatureRecord, value: float) -> float:
    stats = rec.stats()
    if stats.degenerate:
        return stats.mu
    return value * stats.sd + stats.mu


# ---------------------------------------------------------------------------
# Network.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 5000
    l2: float = 1e-3
    seed: int = 0
    hidden_width: int = 32
    hidden_layers: int = 3

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.l2 < 0:
            raise ValueError("l2 must be nonnegative")


@dataclass
class MlpParams:
    weights: list
    biases: list
    head: str  # "sigmoid" or "identity"
    activation: str = "tanh"

    def copy(self) -> "MlpParams":
        return MlpParams(
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
            head=self.head,
            activation=self.activation,
        )

    def to_json(self) -> str:
        return json.dumps(
            {
                "head": self.head,
                "activation": self.activation,
                "layers": [
                    {"weights": w.tolist(), "biases": b.tolist()}
                    for w, b in zip(self.weights, self.biases)
                ],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MlpParams":
        doc = json.loads(text)
        return cls(
            weights=[np.array(layer["weights"], dtype=float) for layer in doc["layers"]],
            biases=[np.array(layer["biases"], dtype=float) for layer in doc["layers"]],
            head=doc["head"],
            activation=doc.get("activation", "tanh"),
        )


def init_params(cfg: TrainConfig, head: str, n_inputs: int = N_FEATURES) -> MlpParams:
    """Seeded uniform[-1/sqrt(fan_in), 1/sqrt(fan_in)] initialization."""
    if head not in ("sigmoid", "identity"):
        raise ValueError(f"unknown head {head!r}")
    rng = np.random.default_rng(cfg.seed)
    sizes = [n_inputs] + [cfg.hidden_width] * cfg.hidden_layers + [1]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights=weights, biases=biases, head=head)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward_batch(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Network outputs for a batch (m, n_features) -> (m,)."""
    a = np.atleast_2d(np.asarray(x, dtype=float))
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        a = np.tanh(a @ w + b)
    z = (a @ p.weights[-1] + p.biases[-1]).ravel()
    return _sigmoid(z) if p.head == "sigmoid" else z


def forward(p: MlpParams, x: np.ndarray) -> float:
    return float(forward_batch(p, x)[0])


def _forward_cached(p: MlpParams, x: np.ndarray):
    activations = [np.atleast_2d(x)]
    for w, b in zip(p.weights[:-1], p.biases[:-1]):
        activations.append(np.tanh(activations[-1] @ w + b))
    z = (activations[-1] @ p.weights[-1] + p.biases[-1]).ravel()
    h = _sigmoid(z) if p.head == "sigmoid" else z
    return activations, h


def loss_classification(p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    """Mean cross entropy plus (l2 / 2m) * sum of squared weights (no biases)."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyBatch("classification loss on empty batch")
    h = np.clip(forward_batch(p, x), _CLAMP, 1.0 - _CLAMP)
    m = y.size
    ce = -np.mean(y * np.log(h) + (1.0 - y) * np.log(1.0 - h))
    reg = sum(float(np.sum(w * w)) for w in p.weights)
    return float(ce + l2 / (2.0 * m) * reg)


def loss_regression(p: MlpParams, x: np.ndarray, y: np.ndarray) -> float:
    """(1/m) * sum of squared prediction errors."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyBatch("regression loss on empty batch")
    h = forward_batch(p, x)
    return float(np.mean((h - y) ** 2))


def loss(p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float) -> float:
    if p.head == "sigmoid":
        return loss_classification(p, x, y, l2)
    return loss_regression(p, x, y)


def _gradients(p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float):
    """Backpropagation gradients of the batch loss for either head."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    m = y.size
    activations, h = _forward_cached(p, x)
    if p.head == "sigmoid":
        # d(cross entropy)/dz for a sigmoid output
        delta = ((h - y) / m)[:, None]
    else:
        delta = (2.0 * (h - y) / m)[:, None]

    grads_w = [None] * len(p.weights)
    grads_b = [None] * len(p.biases)
    for layer in range(len(p.weights) - 1, -1, -1):
        grads_w[layer] = activations[layer].T @ delta
        grads_b[layer] = delta.sum(axis=0)
        if p.head == "sigmoid":
            grads_w[layer] = grads_w[layer] + (l2 / m) * p.weights[layer]
        if layer > 0:
            delta = (delta @ p.weights[layer].T) * (1.0 - activations[layer] ** 2)
    return grads_w, grads_b


def train(p0: MlpParams, x: np.ndarray, y: np.ndarray, cfg: TrainConfig) -> tuple[MlpParams, list]:
    """Full-batch gradient descent; deterministic for a fixed p0 and config.

    Returns the trained parameters and the per-epoch loss history.  Raises
    DivergenceDetected when the loss leaves the finite range.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise EmptyBatch("training set is empty")
    p = p0.copy()
    history = []
    for epoch in range(cfg.epochs):
        grads_w, grads_b = _gradients(p, x, y, cfg.l2)
        for w, b, gw, gb in zip(p.weights, p.biases, grads_w, grads_b):
            w -= cfg.learning_rate * gw
            b -= cfg.learning_rate * gb
        current = loss(p, x, y, cfg.l2)
        if not np.isfinite(current):
            raise DivergenceDetected(f"loss became non-finite at epoch {epoch}")
        history.append(current)
    return p, history


def gradient_check(p: MlpParams, x: np.ndarray, y: np.ndarray, l2: float = 0.0,
                   step: float = 1e-5, max_coords: int = 200, seed: int = 0) -> float:
    """Max relative discrepancy between backprop and central finite differences.

    Samples at most max_coords parameter coordinates (batch must be small).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.asarray(y, dtype=float)
    grads_w, grads_b = _gradients(p, x, y, l2)

    flat_params = []
    for layer, w in enumerate(p.weights):
        for idx in np.ndindex(w.shape):
            flat_params.append(("w", layer, idx))
    for layer, b in enumerate(p.biases):
        for idx in np.ndindex(b.shape):
            flat_params.append(("b", layer, idx))

    rng = np.random.default_rng(seed)
    if len(flat_params) > max_coords:
        chosen = [flat_params[i] for i in rng.choice(len(flat_params), max_coords, replace=False)]
    else:
        chosen = flat_params

    worst = 0.0
    for kind, layer, idx in chosen:
        store = p.weights if kind == "w" else p.biases
        analytic = (grads_w if kind == "w" else grads_b)[layer][idx]
        original = store[layer][idx]
        store[layer][idx] = original + step
        up = loss(p, x, y, l2)
        store[layer][idx] = original - step
        down = loss(p, x, y, l2)
        store[layer][idx] = original
        fd = (up - down) / (2.0 * step)
        denom = max(abs(analytic), abs(fd), 1e-8)
        worst = max(worst, abs(analytic - fd) / denom)
    return worst


# ---------------------------------------------------------------------------
# Threshold selection and splitting.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdResult:
    c: float
    curve: list  # rows of (c, accuracy, precision, recall)
    degenerate: bool = False


def threshold_curve(probs: np.ndarray, labels: np.ndarray) -> list:
    """Accuracy/precision/recall at c = 0.00..1.00 step 0.01.

    Predicted positive means probability >= c.
    """
    probs = np.asarray(probs, dtype=float)
    labels = np.asarray(labels, dtype=int)
    rows = []
    for k in range(101):
        c = k / 100.0
        pred = probs >= c
        tp = int(np.sum(pred & (labels == 1)))
        tn = int(np.sum(~pred & (labels == 0)))
        fp = int(np.sum(pred & (labels == 0)))
        fn = int(np.sum(~pred & (labels == 1)))
        acc = (tp + tn) / labels.size if labels.size else None
        prec = tp / (tp + fp) if tp + fp > 0 else None
        rec = tp / (tp + fn) if tp + fn > 0 else None
        rows.append((c, acc, prec, rec))
    return rows


def select_threshold(probs: np.ndarray, labels: np.ndarray) -> ThresholdResult:
    """Accuracy-maximizing threshold on validation data, smallest c on ties.

    A single-class validation set makes the threshold meaningless; the
    result is flagged degenerate and defaults to 0.5.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise EmptyBatch("empty validation set")
    curve = threshold_curve(probs, labels)
    if len(set(labels.tolist())) < 2:
        log.warning("single-class validation set: defaulting threshold to 0.5")
        return ThresholdResult(c=0.5, curve=curve, degenerate=True)
    best = max(curve, key=lambda row: (row[1], -row[0]))
    return ThresholdResult(c=best[0], curve=curve)


def split_by_date(records, boundaries) -> tuple[list, list, list]:
    """Partition records into (train, validation, test) by day index.

    boundaries = (b1, b2): train has date < b1, validation b1 <= date < b2,
    test date >= b2.  Ordering within each split follows the input order.
    """
    b1, b2 = boundaries
    if not b1 < b2:
        raise ValueError(f"boundaries must increase, got {boundaries}")
    train_set = [r for r in records if r.date < b1]
    val_set = [r for r in records if b1 <= r.date < b2]
    test_set = [r for r in records if r.date >= b2]
    for name, part in (("train", train_set), ("validation", val_set), ("test", test_set)):
        if not part:
            log.warning("split_by_date: %s split is empty", name)
    return train_set, val_set, test_set
