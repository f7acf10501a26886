"""Stochastic quasi-Newton optimisation with a Markov-chain line search."""

__version__ = "0.1.0"
