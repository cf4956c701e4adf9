import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from qrforecast.errors import ConfigError, DomainError, InvalidQuote
from qrforecast.market import (
    MarketSnapshot,
    SyntheticMarketConfig,
    bs_price,
    ingest_csv,
    simulate_market,
    snapshots_to_csv,
    spread_ratios,
    validate_snapshot,
)


def snap(s_b=100.0, s_a=100.2, u_b=2.0, u_a=2.2, ivol=0.3, strike=100.0, date=0):
    return MarketSnapshot(date=date, option_id="X", strike=strike,
                          s_b=s_b, s_a=s_a, u_b=u_b, u_a=u_a, ivol=ivol)


class TestValidate:
    def test_accepts_sane_quotes(self):
        s = snap()
        assert validate_snapshot(s) is s

    def test_rejects_locked_stock(self):
        with pytest.raises(InvalidQuote):
            validate_snapshot(snap(s_b=100, s_a=100))

    def test_rejects_crossed_option(self):
        with pytest.raises(InvalidQuote):
            validate_snapshot(snap(u_b=2.2, u_a=2.0))

    @pytest.mark.parametrize("field,value", [
        ("s_b", -1.0), ("u_b", 0.0), ("ivol", 0.0), ("ivol", -0.2), ("strike", 0.0),
    ])
    def test_rejects_nonpositive(self, field, value):
        with pytest.raises(InvalidQuote):
            validate_snapshot(snap(**{field: value}))


class TestSpreadRatios:
    def test_boundary_of_typical_stock_range(self):
        r = spread_ratios(snap(s_b=100.0, s_a=100.0 * 1.003))
        assert r.f_s == pytest.approx(0.003, abs=1e-15)
        assert not r.unusual

    def test_hand_value(self):
        # 100.1/100 - 1
        r = spread_ratios(snap(s_b=100.0, s_a=100.1))
        assert r.f_s == pytest.approx(0.001, abs=1e-15)

    def test_wide_option_spread_flagged(self):
        r = spread_ratios(snap(u_b=1.0, u_a=1.5))
        assert r.unusual

    @given(c=st.floats(min_value=1e-3, max_value=1e3),
           s_b=st.floats(min_value=1.0, max_value=500.0),
           fs=st.floats(min_value=1e-6, max_value=0.01),
           u_b=st.floats(min_value=0.1, max_value=50.0),
           fu=st.floats(min_value=1e-6, max_value=0.3))
    def test_scale_invariance(self, c, s_b, fs, u_b, fu):
        base = snap(s_b=s_b, s_a=s_b * (1 + fs), u_b=u_b, u_a=u_b * (1 + fu))
        scaled = snap(s_b=c * base.s_b, s_a=c * base.s_a, u_b=c * base.u_b, u_a=c * base.u_a)
        r0, r1 = spread_ratios(base), spread_ratios(scaled)
        assert r1.f_s == pytest.approx(r0.f_s, rel=1e-9)
        assert r1.f_u == pytest.approx(r0.f_u, rel=1e-9)


class TestBsPrice:
    def test_payoff_at_expiry(self):
        assert bs_price(105.0, 100.0, 0.2, 0.0) == 5.0
        assert bs_price(95.0, 100.0, 0.2, 0.0) == 0.0

    def test_long_maturity_limit(self):
        assert bs_price(100.0, 100.0, 0.5, 400.0) == pytest.approx(100.0, rel=1e-6)

    def test_reference_value(self):
        # Frozen from an independent high-precision evaluation of the closed
        # form (mpmath ncdf, 50 digits): 3.9877611676744920...
        assert bs_price(100.0, 100.0, 0.2, 0.25) == pytest.approx(3.987761167674492, abs=1e-10)

    def test_rejects_bad_domain(self):
        for args in [(-1, 100, 0.2, 1), (100, 0, 0.2, 1), (100, 100, 0, 1), (100, 100, 0.2, -1)]:
            with pytest.raises(DomainError):
                bs_price(*args)

    def test_monotone_in_spot_and_vol(self):
        spots = np.linspace(50.0, 150.0, 100)
        prices = [bs_price(s, 100.0, 0.2, 0.5) for s in spots]
        assert all(b >= a - 1e-12 for a, b in zip(prices, prices[1:]))
        vols = np.linspace(0.05, 1.0, 100)
        prices = [bs_price(100.0, 100.0, v, 0.5) for v in vols]
        assert all(b >= a - 1e-12 for a, b in zip(prices, prices[1:]))

    @given(s=st.floats(min_value=10.0, max_value=500.0),
           k=st.floats(min_value=10.0, max_value=500.0),
           sigma=st.floats(min_value=0.01, max_value=2.0),
           tau=st.floats(min_value=0.0, max_value=5.0))
    def test_dominates_intrinsic(self, s, k, sigma, tau):
        assert bs_price(s, k, sigma, tau) >= max(s - k, 0.0) - 1e-9


class TestSimulate:
    def test_degenerate_path_constant(self):
        snaps = simulate_market(SyntheticMarketConfig(seed=1, n_days=6, s0=80.0,
                                                      drift=0.0, vol=0.0, strike=60.0))
        mids = [s.stock_mid for s in snaps]
        assert all(m == pytest.approx(80.0, rel=1e-12) for m in mids)

    def test_deterministic(self):
        cfg = SyntheticMarketConfig(seed=9, n_days=10, s0=100.0, drift=0.1, vol=0.3)
        assert simulate_market(cfg) == simulate_market(cfg)

    def test_spread_recovered(self):
        cfg = SyntheticMarketConfig(seed=3, n_days=6, s0=100.0, drift=0.05, vol=0.2,
                                    stock_spread=0.002, strike=90.0)
        for s in simulate_market(cfg):
            assert spread_ratios(s).f_s == pytest.approx(0.002, rel=1e-9)

    def test_all_emitted_snapshots_validate(self):
        cfg = SyntheticMarketConfig(seed=5, n_days=12, s0=120.0, drift=-0.1, vol=0.4,
                                    strike=100.0)
        for s in simulate_market(cfg):
            validate_snapshot(s)

    def test_config_errors(self):
        with pytest.raises(ConfigError):
            simulate_market(SyntheticMarketConfig(seed=1, n_days=3, s0=100, drift=0, vol=0.2))
        with pytest.raises(ConfigError):
            simulate_market(SyntheticMarketConfig(seed=1, n_days=6, s0=-5, drift=0, vol=0.2))


class TestCsvRoundTrip:
    def test_roundtrip_and_skip(self, tmp_path):
        cfg = SyntheticMarketConfig(seed=2, n_days=5, s0=100.0, drift=0.1, vol=0.25,
                                    strike=95.0, option_id="OPT1")
        snaps = simulate_market(cfg)
        path = tmp_path / "m.csv"
        snapshots_to_csv(path, snaps)
        # append a crossed row that must be skipped, not fatal
        with open(path, "a") as fh:
            fh.write("9,BAD,95,,100,101,2.5,2.0,0.3\n")
        back, skipped = ingest_csv(path)
        assert skipped == 1
        assert len(back) == len(snaps)
        assert [s.option_mid for s in back] == pytest.approx([s.option_mid for s in snaps])
