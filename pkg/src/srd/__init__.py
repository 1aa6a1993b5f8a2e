"""Self-reflective detox pipeline.

Builds a model-specific toxic-signal list, intercepts streaming generation
word by word to produce contrastive (toxic -> rewritten) preference pairs,
exports them for preference-optimization trainers, and evaluates toxicity
and rewrite quality.
"""

__version__ = "0.1.0"
