"""Spoil material classification from photographs.

Weighted-vote BMAC scoring, dataset handling, fine-tuned CNNs, CNN-feature
hybrids with classical heads, a bag-of-features baseline and the evaluation
and reporting around them.
"""
from .bmac import DEFAULT_WEIGHTS, SpoilAttribute, lookup_strength, score_bmac
from .errors import ConfigError, DataError, SpoilClassError, TrainingError
from .metrics import aggregate, evaluate, t_test

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_WEIGHTS", "SpoilAttribute", "lookup_strength", "score_bmac",
    "ConfigError", "DataError", "SpoilClassError", "TrainingError",
    "aggregate", "evaluate", "t_test",
]
