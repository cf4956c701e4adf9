"""End-to-end orchestration: data -> solve -> features -> train -> report.

Every stage reads and writes flat files in the output directory, so any
stage can be re-run from persisted intermediates.  All randomness derives
from the single config seed, fanned out per stage by fixed labels; the
per-option solve stage may run in a process pool, with results merged in
stable (option_id, date) order so outputs are byte-identical for any job
count.
"""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import market, ml, solver, trading
from .errors import ConfigError, EmptyDataset, InvalidBoundary, InvalidQuote, NonFiniteValue, QrfError
from .market import MarketSnapshot, SyntheticMarketConfig
from .preprocess import assemble_problem

log = logging.getLogger(__name__)

REPORT_FILES = (
    "metrics.json",
    "threshold_curve.csv",
    "pr_curve.csv",
    "moneyness_bins.csv",
    "solutions.csv",
    "features.csv",
)

# Seed fan-out labels, one per randomized stage.
_SEED_MARKET = 1
_SEED_CLASSIFIER = 2
_SEED_REGRESSOR = 3


def _fmt(x) -> str:
    if x is None:
        return "NA"
    if isinstance(x, float):
        return f"{x:.12g}"
    return str(x)


@dataclass
class PipelineConfig:
    """Flat pipeline configuration; every key may appear in the config JSON."""

    seed: int = 0
    out_dir: str = "out"
    input_csv: str | None = None   # ingest this file instead of simulating
    # synthetic market
    n_options: int = 100
    n_days: int = 8
    s0_low: float = 50.0
    s0_high: float = 150.0
    drift_low: float = -0.3
    drift_high: float = 0.3
    vol_low: float = 0.15
    vol_high: float = 0.5
    moneyness_low: float = 0.7
    moneyness_high: float = 1.2
    stock_spread: float = 0.002
    option_spread: float = 0.10
    maturity_days: int = 255
    # solver
    nx: int = 32
    nt: int = 16
    beta: float = solver.DEFAULT_BETA
    cg_tol: float = solver.DEFAULT_TOL
    cg_max_iter: int = solver.DEFAULT_MAX_ITER
    # training (both heads)
    learning_rate: float = 0.01
    epochs: int = 2000
    l2: float = 1e-3
    hidden_width: int = 32
    hidden_layers: int = 3
    # date split; None picks 70/15/15 of the usable date range
    split_validation_start: int | None = None
    split_test_start: int | None = None
    jobs: int = 1

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**doc)

    def train_config(self, seed_label: int) -> ml.TrainConfig:
        return ml.TrainConfig(
            learning_rate=self.learning_rate,
            epochs=self.epochs,
            l2=self.l2,
            seed=self.seed * 1000 + seed_label,
            hidden_width=self.hidden_width,
            hidden_layers=self.hidden_layers,
        )


@dataclass
class ReportBundle:
    out_dir: str
    metrics: dict
    files: list = field(default_factory=list)
    skipped: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Stages.
# ---------------------------------------------------------------------------

def stage_market(cfg: PipelineConfig) -> list[MarketSnapshot]:
    """Simulate (or ingest) the quote series for every option."""
    if cfg.input_csv:
        snapshots, skipped = market.ingest_csv(cfg.input_csv)
        if not snapshots:
            raise EmptyDataset(f"no valid rows in {cfg.input_csv}")
        return snapshots

    snapshots = []
    for k in range(cfg.n_options):
        rng = np.random.default_rng([cfg.seed, _SEED_MARKET, k])
        s0 = float(rng.uniform(cfg.s0_low, cfg.s0_high))
        option_cfg = SyntheticMarketConfig(
            seed=int(rng.integers(0, 2**62)),
            n_days=cfg.n_days,
            s0=s0,
            drift=float(rng.uniform(cfg.drift_low, cfg.drift_high)),
            vol=float(rng.uniform(cfg.vol_low, cfg.vol_high)),
            stock_spread=cfg.stock_spread,
            option_spread=cfg.option_spread,
            strike=s0 * float(rng.uniform(cfg.moneyness_low, cfg.moneyness_high)),
            maturity_days=cfg.maturity_days,
            option_id=f"SYN{k:05d}",
        )
        snapshots.extend(market.simulate_market(option_cfg))
    return snapshots


def _solve_option(args) -> tuple[list[dict], dict]:
    """Worker: QRM-solve every usable 3-day window of one option's series."""
    series, nx, nt, beta, tol, max_iter = args
    rows: list[dict] = []
    skipped = {"invalid_quote": 0, "invalid_boundary": 0, "non_finite": 0}
    by_date = {s.date: s for s in series}
    for date in sorted(by_date):
        window = [by_date.get(date - 2), by_date.get(date - 1), by_date.get(date)]
        if None in window or date + 1 not in by_date:
            continue
        try:
            for snap in window:
                market.validate_snapshot(snap)
            problem = assemble_problem(*window, nt_check=nt)
            grid = solver.Grid(nx=nx, nt=nt, T=2.0 * problem.tau)
            sol = solver.solve_problem(problem, grid, beta=beta, tol=tol, max_iter=max_iter)
        except InvalidQuote:
            skipped["invalid_quote"] += 1
            continue
        except InvalidBoundary:
            skipped["invalid_boundary"] += 1
            continue
        except NonFiniteValue:
            skipped["non_finite"] += 1
            continue
        rows.append(
            {
                "option_id": series[0].option_id,
                "date": date,
                "beta": beta,
                "cg_iterations": sol.cg_iterations,
                "residual_norm": sol.residual_norm,
                "j_value": sol.j_value,
                "est_tau": sol.est_tau,
                "est_2tau": sol.est_2tau,
            }
        )
    return rows, skipped


def stage_solve(snapshots, cfg: PipelineConfig) -> tuple[list[dict], dict]:
    """Run the QRM solve for every option/day; returns (rows, skip counts)."""
    tasks = [
        (series, cfg.nx, cfg.nt, cfg.beta, cfg.cg_tol, cfg.cg_max_iter)
        for _, series in market.group_by_option(snapshots)
    ]
    skipped = {"invalid_quote": 0, "invalid_boundary": 0, "non_finite": 0}
    rows: list[dict] = []
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            results = list(pool.map(_solve_option, tasks, chunksize=4))
    else:
        results = [_solve_option(t) for t in tasks]
    for option_rows, option_skips in results:
        rows.extend(option_rows)
        for key in skipped:
            skipped[key] += option_skips[key]
    rows.sort(key=lambda r: (r["option_id"], r["date"]))
    return rows, skipped


def stage_features(snapshots, solution_rows) -> list[ml.FeatureRecord]:
    by_key = {(s.option_id, s.date): s for s in snapshots}
    records = []
    for row in solution_rows:
        oid, date = row["option_id"], row["date"]
        days = [by_key.get((oid, date + d)) for d in (-2, -1, 0, 1)]
        if None in days:
            continue
        sol_stub = _SolutionStub(row["est_tau"], row["est_2tau"])
        records.append(ml.build_features(days[0], days[1], days[2], sol_stub, days[3]))
    return records


class _SolutionStub:
    """Minimal est-value carrier so features can be built from solutions.csv."""

    def __init__(self, est_tau: float, est_2tau: float):
        self.est_tau = est_tau
        self.est_2tau = est_2tau


def _auto_boundaries(records, cfg: PipelineConfig) -> tuple[int, int]:
    if cfg.split_validation_start is not None and cfg.split_test_start is not None:
        return cfg.split_validation_start, cfg.split_test_start
    dates = sorted({r.date for r in records})
    b1 = dates[int(len(dates) * 0.70)] if len(dates) > 2 else dates[0] + 1
    b2 = dates[int(len(dates) * 0.85)] if len(dates) > 2 else dates[0] + 2
    if b1 >= b2:
        b2 = b1 + 1
    return b1, b2


@dataclass
class TrainedModels:
    classifier: ml.MlpParams
    regressor: ml.MlpParams
    threshold: float
    threshold_degenerate: bool
    boundaries: tuple


def stage_train(records, cfg: PipelineConfig) -> TrainedModels:
    boundaries = _auto_boundaries(records, cfg)
    train_set, val_set, _ = ml.split_by_date(records, boundaries)
    if not train_set:
        raise EmptyDataset("training split is empty")

    x_train = np.array([ml.normalize(r)[0] for r in train_set])
    y_class = np.array([r.label for r in train_set], dtype=float)
    y_reg = np.array([ml.normalize_target(r) for r in train_set])

    cls_cfg = cfg.train_config(_SEED_CLASSIFIER)
    classifier, _ = ml.train(ml.init_params(cls_cfg, "sigmoid"), x_train, y_class, cls_cfg)
    reg_cfg = cfg.train_config(_SEED_REGRESSOR)
    regressor, _ = ml.train(ml.init_params(reg_cfg, "identity"), x_train, y_reg, reg_cfg)

    if val_set:
        x_val = np.array([ml.normalize(r)[0] for r in val_set])
        probs = ml.forward_batch(classifier, x_val)
        labels = np.array([r.label for r in val_set])
        thresh = ml.select_threshold(probs, labels)
        c, degenerate = thresh.c, thresh.degenerate
    else:
        c, degenerate = 0.5, True
    return TrainedModels(
        classifier=classifier,
        regressor=regressor,
        threshold=c,
        threshold_degenerate=degenerate,
        boundaries=boundaries,
    )


def _trade_records(records) -> list[trading.TradeRecord]:
    return [
        trading.TradeRecord(
            option_id=r.option_id,
            date=r.date,
            real_0=r.real_0,
            real_tau=r.real_tau,
            est_tau=float(r.raw[0]),
            stock=r.stock_mid,
            strike=r.strike,
        )
        for r in records
    ]


def _regressor_estimates(models: TrainedModels, records) -> list[float]:
    x = np.array([ml.normalize(r)[0] for r in records])
    preds = ml.forward_batch(models.regressor, x)
    return [ml.denormalize_prediction(r, p) for r, p in zip(records, preds)]


def _metrics_dict(m: trading.StrategyMetrics) -> dict:
    return {
        "accuracy": m.accuracy,
        "precision": m.precision,
        "recall": m.recall,
        "mean_relative_error": m.mean_relative_error,
        "n": m.n,
    }


def stage_backtest(records, models: TrainedModels) -> dict:
    """Evaluate QRM, classifier, and regressor trading on the test split."""
    _, val_set, test_set = ml.split_by_date(records, models.boundaries)
    if not test_set:
        raise EmptyDataset("test split is empty")

    trades = _trade_records(test_set)
    x_test = np.array([ml.normalize(r)[0] for r in test_set])
    probs = ml.forward_batch(models.classifier, x_test)
    cls_pred = [bool(p >= models.threshold) for p in probs]
    reg_est = _regressor_estimates(models, test_set)
    reg_trades = [
        trading.TradeRecord(
            option_id=t.option_id, date=t.date, real_0=t.real_0,
            real_tau=t.real_tau, est_tau=e, stock=t.stock, strike=t.strike,
        )
        for t, e in zip(trades, reg_est)
    ]

    result = {
        "qrm": _metrics_dict(trading.evaluate(trades)),
        "classifier": _metrics_dict(trading.evaluate(trades, predicted_positive=cls_pred)),
        "regressor": _metrics_dict(trading.evaluate(reg_trades)),
    }
    bins = {
        "qrm": trading.moneyness_bins(trades),
        "classifier": trading.moneyness_bins(trades, predicted_positive=cls_pred),
        "regressor": trading.moneyness_bins(reg_trades),
    }
    return {"methods": result, "bins": bins, "n_test": len(test_set)}


def emit_curves(out_dir, models: TrainedModels, records) -> None:
    """Validation threshold/PR curves with the QRM reference point appended."""
    _, val_set, _ = ml.split_by_date(records, models.boundaries)
    if not val_set:
        log.warning("no validation records; curves not emitted")
        rows = []
        qrm_row = ("QRM", None, None, None)
    else:
        x_val = np.array([ml.normalize(r)[0] for r in val_set])
        probs = ml.forward_batch(models.classifier, x_val)
        labels = np.array([r.label for r in val_set])
        rows = ml.threshold_curve(probs, labels)
        qrm = trading.evaluate(_trade_records(val_set))
        qrm_row = ("QRM", qrm.accuracy, qrm.precision, qrm.recall)

    with open(os.path.join(out_dir, "threshold_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "accuracy", "precision", "recall"])
        for row in rows:
            w.writerow([_fmt(v) for v in row])
        w.writerow([_fmt(v) for v in qrm_row])

    with open(os.path.join(out_dir, "pr_curve.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["c", "recall", "precision"])
        for c, _acc, prec, rec in rows:
            w.writerow([_fmt(c), _fmt(rec), _fmt(prec)])
        w.writerow([_fmt(qrm_row[0]), _fmt(qrm_row[3]), _fmt(qrm_row[2])])


def write_solutions_csv(out_dir, rows) -> None:
    with open(os.path.join(out_dir, "solutions.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["option_id", "date", "beta", "cg_iterations", "residual_norm",
                  "j_value", "est_tau", "est_2tau"]
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in header])


def read_solutions_csv(path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            rows.append(
                {
                    "option_id": r["option_id"],
                    "date": int(r["date"]),
                    "beta": float(r["beta"]),
                    "cg_iterations": int(r["cg_iterations"]),
                    "residual_norm": float(r["residual_norm"]),
                    "j_value": float(r["j_value"]),
                    "est_tau": float(r["est_tau"]),
                    "est_2tau": float(r["est_2tau"]),
                }
            )
    return rows


def write_features_csv(out_dir, records) -> None:
    with open(os.path.join(out_dir, "features.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["option_id", "date", "strike", *ml.FEATURE_NAMES, "label", "real_0", "real_tau"])
        for r in records:
            w.writerow(
                [r.option_id, r.date, _fmt(r.strike)]
                + [_fmt(float(v)) for v in r.raw]
                + [r.label, _fmt(r.real_0), _fmt(r.real_tau)]
            )


def read_features_csv(path) -> list[ml.FeatureRecord]:
    records = []
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            records.append(
                ml.FeatureRecord(
                    option_id=r["option_id"],
                    date=int(r["date"]),
                    strike=float(r["strike"]),
                    raw=np.array([float(r[name]) for name in ml.FEATURE_NAMES]),
                    label=int(r["label"]),
                    real_0=float(r["real_0"]),
                    real_tau=float(r["real_tau"]),
                )
            )
    return records


def write_moneyness_csv(out_dir, bins: dict) -> None:
    all_bins = sorted({b for per_method in bins.values() for b in per_method})
    with open(os.path.join(out_dir, "moneyness_bins.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin", "moneyness_low", "moneyness_high",
                    "precision_qrm", "precision_classifier", "precision_regressor"])
        for b in all_bins:
            w.writerow(
                [
                    b,
                    _fmt(b * trading.MONEYNESS_BIN_STEP),
                    _fmt((b + 1) * trading.MONEYNESS_BIN_STEP),
                    _fmt(bins["qrm"].get(b)),
                    _fmt(bins["classifier"].get(b)),
                    _fmt(bins["regressor"].get(b)),
                ]
            )


def run_pipeline(cfg: PipelineConfig) -> ReportBundle:
    """Execute every stage and write the full report bundle."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    snapshots = stage_market(cfg)
    market.snapshots_to_csv(os.path.join(cfg.out_dir, "market.csv"), snapshots)

    solution_rows, skipped = stage_solve(snapshots, cfg)
    if not solution_rows:
        raise EmptyDataset("no options survived validation and preprocessing")
    write_solutions_csv(cfg.out_dir, solution_rows)

    records = stage_features(snapshots, solution_rows)
    if not records:
        raise EmptyDataset("no feature records could be built")
    write_features_csv(cfg.out_dir, records)

    models = stage_train(records, cfg)
    with open(os.path.join(cfg.out_dir, "classifier.json"), "w") as fh:
        fh.write(models.classifier.to_json())
    with open(os.path.join(cfg.out_dir, "regressor.json"), "w") as fh:
        fh.write(models.regressor.to_json())

    backtest = stage_backtest(records, models)
    emit_curves(cfg.out_dir, models, records)
    write_moneyness_csv(cfg.out_dir, backtest["bins"])

    metrics_doc = {
        "methods": backtest["methods"],
        "threshold": models.threshold,
        "threshold_degenerate": models.threshold_degenerate,
        "split": {"validation_start": models.boundaries[0], "test_start": models.boundaries[1]},
        "n_test": backtest["n_test"],
        "skipped": skipped,
        "seed": cfg.seed,
    }
    with open(os.path.join(cfg.out_dir, "metrics.json"), "w") as fh:
        json.dump(metrics_doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    from . import plots

    plots.render_all(cfg.out_dir)

    log.info("pipeline complete: %d options solved, skipped=%s", len(solution_rows), skipped)
    return ReportBundle(
        out_dir=cfg.out_dir,
        metrics=metrics_doc,
        files=[os.path.join(cfg.out_dir, f) for f in REPORT_FILES],
        skipped=skipped,
    )
