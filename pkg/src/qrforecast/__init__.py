"""Next-day option price forecasting via a regularized forward PDE solve
plus a neural trading filter."""

__version__ = "0.1.0"
