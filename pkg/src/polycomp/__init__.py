"""Reward-free compression of softmax policy spaces in tabular controlled Markov processes."""

__version__ = "0.1.0"
