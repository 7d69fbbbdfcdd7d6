"""paramscope: train populations of small networks and characterize optimal
vs suboptimal solutions via weight statistics, node strength, density
estimates, and 2-D embeddings of flattened weights."""

__version__ = "0.1.0"
