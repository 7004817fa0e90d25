"""Synthetic knowledge-graph testbed for three modes of expert transcendence.

The package generates fictional knowledge graphs, simulates populations of
imperfect experts writing about them, emits training corpora with full
provenance, and checks with exact tabular learners whether a model fit on
the pooled data can beat every individual expert (denoising, selection,
and two-hop generalization).
"""

__version__ = "0.1.0"
