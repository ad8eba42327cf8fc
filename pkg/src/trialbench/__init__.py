"""Trial-report reference sets and observational-method benchmarking."""

__version__ = "0.1.0"
