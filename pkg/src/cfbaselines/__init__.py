"""Counterfactual baselines for path attributions, on a small numpy autodiff core."""

__version__ = "0.1.0"
