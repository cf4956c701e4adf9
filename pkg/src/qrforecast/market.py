"""Market data ingestion, validation, synthesis, and the analytic pricer.

Quotes are represented one option per trading day.  Trading-day arithmetic
uses integer day indices throughout; calendar dates are mapped to indices
at ingestion time (255 trading days per year).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigError, DomainError, InvalidQuote

log = logging.getLogger(__name__)

TRADING_DAYS_PER_YEAR = 255
TAU = 1.0 / TRADING_DAYS_PER_YEAR

# Empirically observed upper bounds for the bid/ask spread ratios.
MAX_TYPICAL_STOCK_SPREAD = 0.003
MAX_TYPICAL_OPTION_SPREAD = 0.27


@dataclass(frozen=True)
class MarketSnapshot:
    """One trading day's quotes for one option."""

    date: int
    option_id: str
    strike: float
    s_b: float
    s_a: float
    u_b: float
    u_a: float
    ivol: float

    @property
    def stock_mid(self) -> float:
        return 0.5 * (self.s_b + self.s_a)

    @property
    def option_mid(self) -> float:
        return 0.5 * (self.u_b + self.u_a)


@dataclass(frozen=True)
class SpreadRatios:
    """Dimensionless relative bid/ask gaps for stock and option quotes."""

    f_s: float
    f_u: float
    unusual: bool = False


@dataclass(frozen=True)
class SyntheticMarketConfig:
    """Parameters of the geometric-Brownian-motion quote generator."""

    seed: int
    n_days: int
    s0: float
    drift: float
    vol: float
    stock_spread: float = 0.002
    option_spread: float = 0.10
    strike: float = 100.0
    maturity_days: int = 255
    option_id: str = "SYN"

    def validate(self) -> None:
        if self.s0 <= 0:
            raise ConfigError(f"s0 must be positive, got {self.s0}")
        if self.vol < 0:
            raise ConfigError(f"vol must be nonnegative, got {self.vol}")
        if self.n_days < 4:
            raise ConfigError(
                f"n_days must be at least 4 (three past days plus forecast), got {self.n_days}"
            )
        if self.maturity_days <= self.n_days:
            raise ConfigError("maturity_days must exceed n_days")
        if not 0 <= self.stock_spread:
            raise ConfigError("stock_spread must be nonnegative")
        if not 0 <= self.option_spread:
            raise ConfigError("option_spread must be nonnegative")


def validate_snapshot(raw: MarketSnapshot) -> MarketSnapshot:
    """Return the snapshot unchanged if all quote invariants hold.

    Raises InvalidQuote otherwise; the record must be skipped, not repaired.
    """
    if not (raw.s_b > 0 and raw.s_a > 0 and raw.u_b > 0 and raw.u_a > 0):
        raise InvalidQuote(f"{raw.option_id}@{raw.date}: non-positive price")
    if raw.strike <= 0:
        raise InvalidQuote(f"{raw.option_id}@{raw.date}: non-positive strike")
    if raw.ivol <= 0:
        raise InvalidQuote(f"{raw.option_id}@{raw.date}: non-positive implied volatility")
    if raw.s_b >= raw.s_a:
        raise InvalidQuote(f"{raw.option_id}@{raw.date}: stock market crossed or locked")
    if raw.u_b >= raw.u_a:
        raise InvalidQuote(f"{raw.option_id}@{raw.date}: option market crossed or locked")
    return raw


def spread_ratios(snap: MarketSnapshot) -> SpreadRatios:
    """Relative spreads f_s = s_a/s_b - 1, f_u = u_a/u_b - 1.

    The ``unusual`` flag marks spreads outside the typical observed ranges
    (0.003 for stocks, 0.27 for options).
    """
    f_s = snap.s_a / snap.s_b - 1.0
    f_u = snap.u_a / snap.u_b - 1.0
    unusual = f_s > MAX_TYPICAL_STOCK_SPREAD or f_u > MAX_TYPICAL_OPTION_SPREAD
    if unusual:
        log.warning("unusual spread for %s@%d: f_s=%.4g f_u=%.4g", snap.option_id, snap.date, f_s, f_u)
    return SpreadRatios(f_s=f_s, f_u=f_u, unusual=unusual)


def _phi(z: float) -> float:
    """Standard normal CDF via erf (absolute error well below 1e-12)."""
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def bs_price(s: float, k: float, sigma: float, tau: float) -> float:
    """European call value with zero interest rate.

    Returns s*Phi(theta_plus) - K*Phi(theta_minus) with
    theta_pm = [ln(s/K) +- sigma^2 tau / 2] / (sigma sqrt(tau)).
    At tau = 0 the payoff max(s - K, 0) is returned.
    """
    if s <= 0 or k <= 0 or sigma <= 0:
        raise DomainError(f"bs_price requires positive s, K, sigma; got s={s}, K={k}, sigma={sigma}")
    if tau < 0:
        raise DomainError(f"bs_price requires tau >= 0, got {tau}")
    if tau == 0:
        return max(s - k, 0.0)
    sig_sqrt_t = sigma * math.sqrt(tau)
    theta_plus = (math.log(s / k) + 0.5 * sigma * sigma * tau) / sig_sqrt_t
    theta_minus = theta_plus - sig_sqrt_t
    return s * _phi(theta_plus) - k * _phi(theta_minus)


def _split_mid(mid: float, spread: float) -> tuple[float, float]:
    """Bid/ask around a mid price so that ask/bid - 1 == spread exactly."""
    bid = 2.0 * mid / (2.0 + spread)
    return bid, bid * (1.0 + spread)


def simulate_market(cfg: SyntheticMarketConfig) -> list[MarketSnapshot]:
    """Generate a GBM stock path with Black-Scholes option quotes on top.

    Deterministic for a fixed seed.  Day indices run 0..n_days-1; the option
    expires maturity_days after day 0.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    dt = TAU
    shocks = rng.standard_normal(cfg.n_days - 1)
    log_s = np.empty(cfg.n_days)
    log_s[0] = math.log(cfg.s0)
    increments = (cfg.drift - 0.5 * cfg.vol**2) * dt + cfg.vol * math.sqrt(dt) * shocks
    log_s[1:] = log_s[0] + np.cumsum(increments)

    out = []
    for day in range(cfg.n_days):
        s_mid = math.exp(log_s[day])
        t_rem = (cfg.maturity_days - day) * dt
        if cfg.vol > 0:
            u_mid = bs_price(s_mid, cfg.strike, cfg.vol, t_rem)
        else:
            u_mid = max(s_mid - cfg.strike, 0.0)
        s_b, s_a = _split_mid(s_mid, cfg.stock_spread)
        u_b, u_a = _split_mid(u_mid, cfg.option_spread)
        out.append(
            MarketSnapshot(
                date=day,
                option_id=cfg.option_id,
                strike=cfg.strike,
                s_b=s_b,
                s_a=s_a,
                u_b=u_b,
                u_a=u_a,
                ivol=cfg.vol,
            )
        )
    return out


CSV_COLUMNS = (
    "date",
    "option_id",
    "strike",
    "expiry",
    "stock_bid",
    "stock_ask",
    "option_bid",
    "option_ask",
    "ivol",
)


def snapshots_to_csv(path, snapshots: Iterable[MarketSnapshot]) -> None:
    """Write snapshots in the ingestion CSV schema (integer-index dates)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for s in snapshots:
            writer.writerow(
                [s.date, s.option_id, f"{s.strike:.12g}", "", f"{s.s_b:.12g}",
                 f"{s.s_a:.12g}", f"{s.u_b:.12g}", f"{s.u_a:.12g}", f"{s.ivol:.12g}"]
            )


def ingest_csv(path) -> tuple[list[MarketSnapshot], int]:
    """Read quote rows, mapping calendar dates to consecutive trading-day indices.

    Invalid rows (crossed quotes, non-positive prices) are skipped with a
    logged count rather than aborting; real market files contain such rows.
    Returns (accepted snapshots, skipped count).
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if reader.fieldnames is None or c not in reader.fieldnames]
        if missing:
            raise ConfigError(f"input CSV missing columns: {missing}")
        for row in reader:
            rows.append(row)

    # Calendar dates (or pre-assigned indices) -> consecutive indices.
    dates = sorted({r["date"] for r in rows})
    date_index = {d: i for i, d in enumerate(dates)}

    accepted: list[MarketSnapshot] = []
    skipped = 0
    for row in rows:
        try:
            snap = MarketSnapshot(
                date=date_index[row["date"]],
                option_id=row["option_id"],
                strike=float(row["strike"]),
                s_b=float(row["stock_bid"]),
                s_a=float(row["stock_ask"]),
                u_b=float(row["option_bid"]),
                u_a=float(row["option_ask"]),
                ivol=float(row["ivol"]),
            )
            accepted.append(validate_snapshot(snap))
        except (InvalidQuote, ValueError) as exc:
            skipped += 1
            log.debug("skipping row: %s", exc)
    if skipped:
        log.info("ingest: skipped %d invalid rows of %d", skipped, len(rows))
    return accepted, skipped


def group_by_option(snapshots: Sequence[MarketSnapshot]) -> Iterator[tuple[str, list[MarketSnapshot]]]:
    """Yield (option_id, date-sorted snapshots) groups in stable id order."""
    by_id: dict[str, list[MarketSnapshot]] = {}
    for s in snapshots:
        by_id.setdefault(s.option_id, []).append(s)
    for oid in sorted(by_id):
        yield oid, sorted(by_id[oid], key=lambda s: s.date)
