"""Fairness-aware demand forecasting and vehicle rebalancing for ride-hailing."""

__version__ = "0.1.0"
