"""Multi-agent simulation of scientific team collaboration.

Builds a research ecosystem from a citation corpus, assembles scientist
agents into teams, runs a staged discussion pipeline that produces a
research abstract, and scores the result with embedding-based novelty
metrics.
"""

__version__ = "0.1.0"
