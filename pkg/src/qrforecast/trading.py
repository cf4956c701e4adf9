"""Per-option trading decisions and aggregate metrics.

An option is bought when the forecast mid price for tomorrow is at least
today's market mid; ground truth compares tomorrow's realized mid the same
way.  Ties count as positive on both sides.  Zero-denominator metrics are
reported as explicit None markers, never as silent zeros.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from enum import Enum

from .errors import EmptyInput, InvalidQuote

log = logging.getLogger(__name__)

MONEYNESS_BIN_STEP = 0.1


class Outcome(Enum):
    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"


@dataclass(frozen=True)
class TradeRecord:
    option_id: str
    date: int
    real_0: float    # market mid at t=0
    real_tau: float  # realized mid one day later
    est_tau: float   # forecast mid for one day later
    stock: float = float("nan")   # stock price, for moneyness binning
    strike: float = float("nan")

    def __post_init__(self):
        if self.real_0 <= 0 or self.real_tau <= 0:
            raise InvalidQuote(f"mid prices must be positive: {self.real_0}, {self.real_tau}")


@dataclass
class ConfusionCounts:
    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def add(self, outcome: Outcome) -> None:
        if outcome is Outcome.TP:
            self.tp += 1
        elif outcome is Outcome.TN:
            self.tn += 1
        elif outcome is Outcome.FP:
            self.fp += 1
        else:
            self.fn += 1


@dataclass(frozen=True)
class StrategyMetrics:
    accuracy: float | None
    precision: float | None
    recall: float | None
    mean_relative_error: float | None
    n: int


def decide(r: TradeRecord) -> bool:
    """Buy decision: forecast at or above today's mid (ties buy)."""
    return r.est_tau >= r.real_0


def classify(r: TradeRecord) -> Outcome:
    predicted = r.est_tau >= r.real_0
    actual = r.real_tau >= r.real_0
    return classify_flags(predicted, actual)


def classify_flags(predicted_positive: bool, actually_positive: bool) -> Outcome:
    if predicted_positive:
        return Outcome.TP if actually_positive else Outcome.FP
    return Outcome.FN if actually_positive else Outcome.TN


def count_outcomes(outcomes) -> ConfusionCounts:
    c = ConfusionCounts()
    for o in outcomes:
        c.add(o)
    return c


def _ratio(num: int, den: int) -> float | None:
    return num / den if den > 0 else None


def metrics(counts: ConfusionCounts, records=()) -> StrategyMetrics:
    """Accuracy/precision/recall from counts, mean relative forecast error
    over the records.  Records with zero realized mid are excluded from the
    error average with a logged count (unreachable on validated quotes)."""
    if counts.total == 0:
        raise EmptyInput("no classified records")
    err_sum = 0.0
    err_n = 0
    dropped = 0
    for r in records:
        if r.real_tau == 0:
            dropped += 1
            continue
        err_sum += abs((r.est_tau - r.real_tau) / r.real_tau)
        err_n += 1
    if dropped:
        log.info("metrics: dropped %d records with zero realized mid", dropped)
    return StrategyMetrics(
        accuracy=_ratio(counts.tp + counts.tn, counts.total),
        precision=_ratio(counts.tp, counts.tp + counts.fp),
        recall=_ratio(counts.tp, counts.tp + counts.fn),
        mean_relative_error=err_sum / err_n if err_n else None,
        n=counts.total,
    )


def evaluate(records, predicted_positive=None) -> StrategyMetrics:
    """End-to-end metrics for a record list.

    predicted_positive: optional per-record booleans overriding the
    price-comparison rule (used for the classifier route, where the model
    emits a probability rather than a price forecast).
    """
    records = list(records)
    if not records:
        raise EmptyInput("no trade records")
    if predicted_positive is None:
        outcomes = [classify(r) for r in records]
        err_records = records
    else:
        outcomes = [
            classify_flags(p, r.real_tau >= r.real_0)
            for p, r in zip(predicted_positive, records)
        ]
        err_records = ()
    return metrics(count_outcomes(outcomes), err_records)


def moneyness_bin(stock: float, strike: float, step: float = MONEYNESS_BIN_STEP) -> int:
    """Bin index floor(((s - st)/s) / step)."""
    return math.floor(((stock - strike) / stock) / step)


def moneyness_bins(records, predicted_positive=None, step: float = MONEYNESS_BIN_STEP) -> dict[int, float | None]:
    """Per-bin precision keyed by bin index; None marks undefined bins."""
    records = list(records)
    if predicted_positive is None:
        predicted_positive = [decide(r) for r in records]
    per_bin: dict[int, ConfusionCounts] = {}
    for pred, r in zip(predicted_positive, records):
        idx = moneyness_bin(r.stock, r.strike, step)
        per_bin.setdefault(idx, ConfusionCounts()).add(
            classify_flags(pred, r.real_tau >= r.real_0)
        )
    return {
        idx: _ratio(c.tp, c.tp + c.fp)
        for idx, c in sorted(per_bin.items())
    }
