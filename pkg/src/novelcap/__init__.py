"""Desk-scale novel-object captioning pipeline.

Synthetic paired-data generation by bounding-box replacement, heuristic
caption rewriting, pseudo-label fine-tuning with plain and constrained beam
search over a pluggable scorer, caption metrics (CIDEr-D, novel-object F1,
combined F-beta), and a human review loop for synthetic pairs.
"""

__version__ = "0.1.0"
