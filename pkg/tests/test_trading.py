import math

import pytest
from hypothesis import given, strategies as st

from qrforecast.errors import EmptyInput, InvalidQuote
from qrforecast.trading import (
    ConfusionCounts,
    Outcome,
    TradeRecord,
    classify,
    classify_flags,
    count_outcomes,
    decide,
    evaluate,
    metrics,
    moneyness_bin,
    moneyness_bins,
)


def rec(real_0, real_tau, est_tau, stock=100.0, strike=100.0, date=0):
    return TradeRecord(option_id="X", date=date, real_0=real_0, real_tau=real_tau,
                       est_tau=est_tau, stock=stock, strike=strike)


class TestDecideClassify:
    def test_buy_rule_ties_buy(self):
        assert decide(rec(2.0, 2.5, 2.1))
        assert decide(rec(2.0, 2.5, 2.0))  # tie counts as a buy
        assert not decide(rec(2.0, 2.5, 1.9))

    @pytest.mark.parametrize("real_tau,est_tau,want", [
        (2.5, 2.1, Outcome.TP),   # bought, price rose
        (1.5, 2.1, Outcome.FP),   # bought, price fell
        (1.5, 1.9, Outcome.TN),   # skipped, price fell
        (2.5, 1.9, Outcome.FN),   # skipped, price rose
    ])
    def test_four_outcomes(self, real_tau, est_tau, want):
        assert classify(rec(2.0, real_tau, est_tau)) is want

    def test_double_tie_is_tp(self):
        assert classify(rec(2.0, 2.0, 2.0)) is Outcome.TP

    def test_flags_table(self):
        assert classify_flags(True, True) is Outcome.TP
        assert classify_flags(True, False) is Outcome.FP
        assert classify_flags(False, False) is Outcome.TN
        assert classify_flags(False, True) is Outcome.FN

    def test_rejects_nonpositive_prices(self):
        with pytest.raises(InvalidQuote):
            rec(0.0, 2.0, 2.0)

    @given(r0=st.floats(min_value=0.01, max_value=100),
           rt=st.floats(min_value=0.01, max_value=100),
           e=st.floats(min_value=0.01, max_value=100))
    def test_exactly_one_outcome(self, r0, rt, e):
        r = rec(r0, rt, e)
        out = classify(r)
        assert out in (Outcome.TP, Outcome.TN, Outcome.FP, Outcome.FN)
        assert (out in (Outcome.TP, Outcome.FP)) == decide(r)


class TestMetrics:
    def test_worked_example(self):
        # 10 records: 4 TP, 3 TN, 2 FP, 1 FN
        counts = ConfusionCounts(tp=4, tn=3, fp=2, fn=1)
        m = metrics(counts)
        assert m.accuracy == pytest.approx(0.7)
        assert m.precision == pytest.approx(4 / 6)
        assert m.recall == pytest.approx(0.8)
        assert m.n == 10

    def test_count_outcomes(self):
        outs = [Outcome.TP, Outcome.TP, Outcome.FP, Outcome.TN, Outcome.FN]
        c = count_outcomes(outs)
        assert (c.tp, c.tn, c.fp, c.fn) == (2, 1, 1, 1)

    def test_undefined_when_no_buys(self):
        m = evaluate([rec(2.0, 1.5, 1.0), rec(2.0, 2.5, 1.0)])
        assert m.precision is None
        assert m.accuracy == pytest.approx(0.5)

    def test_undefined_when_no_positives(self):
        m = evaluate([rec(2.0, 1.5, 3.0), rec(2.0, 1.9, 1.0)])
        assert m.recall is None

    def test_empty_input_is_an_error(self):
        with pytest.raises(EmptyInput):
            evaluate([])

    def test_relative_error(self):
        rs = [rec(2.0, 2.0, 2.2), rec(2.0, 4.0, 3.0)]
        # |2.2-2|/2 = 0.1 and |3-4|/4 = 0.25 -> mean 0.175
        m = evaluate(rs)
        assert m.mean_relative_error == pytest.approx(0.175)

    def test_external_predictions_override_estimates(self):
        rs = [rec(2.0, 2.5, 1.0), rec(2.0, 1.5, 1.0)]
        m = evaluate(rs, predicted_positive=[True, True])
        assert m.precision == pytest.approx(0.5)
        assert m.recall == pytest.approx(1.0)

    @given(st.lists(st.tuples(st.floats(0.5, 5), st.floats(0.5, 5), st.floats(0.5, 5)),
                    min_size=1, max_size=30))
    def test_counts_partition_records(self, triples):
        rs = [rec(*t) for t in triples]
        c = count_outcomes(classify(r) for r in rs)
        assert c.tp + c.tn + c.fp + c.fn == len(rs)
        m = evaluate(rs)
        assert m.n == len(rs)
        for v in (m.accuracy, m.precision, m.recall):
            assert v is None or 0.0 <= v <= 1.0


class TestMoneyness:
    def test_bin_examples(self):
        assert moneyness_bin(100.0, 100.0) == 0
        assert moneyness_bin(100.0, 85.0) == 1     # (100-85)/100 = 0.15
        assert moneyness_bin(100.0, 111.0) == -2   # -0.11 -> floor -> -2
        assert moneyness_bin(100.0, 90.0) == 1     # 0.10 on the boundary

    def test_bins_report_precision_per_bucket(self):
        rs = [
            rec(2.0, 2.5, 2.1, stock=100.0, strike=100.0),  # TP, bin 0
            rec(2.0, 1.5, 2.1, stock=100.0, strike=100.0),  # FP, bin 0
            rec(2.0, 2.5, 2.1, stock=100.0, strike=85.0),   # TP, bin 1
            rec(2.0, 1.5, 1.0, stock=100.0, strike=85.0),   # TN, bin 1
        ]
        bins = moneyness_bins(rs)
        assert bins[0] == pytest.approx(0.5)
        assert bins[1] == pytest.approx(1.0)

    def test_bin_with_no_buys_is_undefined(self):
        rs = [rec(2.0, 2.5, 1.0, stock=100.0, strike=120.0)]
        assert moneyness_bins(rs)[-2] is None
