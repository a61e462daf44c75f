"""Multiple-account detection on account/page bipartite graphs."""

__version__ = "0.1.0"
