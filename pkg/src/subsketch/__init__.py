"""Graph classification by attention over sampled subgraphs."""

__version__ = "0.1.0"
