"""Explanation-aware active learning toolkit.

Subpackages cover the dataset model (:mod:`expal.corpus`), deterministic
text embedding (:mod:`expal.embedding`), diversity-based data selection
(:mod:`expal.selector`), the dual-model training contract and simulated
backends (:mod:`expal.modeling`), the active-learning loop and simulation
harness (:mod:`expal.engine`), curve aggregation and contingency statistics
(:mod:`expal.analysis`), and the human annotation service
(:mod:`expal.service`).
"""

__version__ = "0.1.0"
