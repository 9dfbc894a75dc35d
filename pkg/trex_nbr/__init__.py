"""Next-basket recommendation toolkit: repetition/exploration recommender, baselines and evaluation harness."""

__version__ = "0.1.0"
