"""Network inference from multivariate time series with the normalised
mutual information rate (MIR-bar)."""

__version__ = "0.1.0"
