"""Learning-to-rank toolkit: lexical and proximity features, a click scorer,
gradient-boosted trees and DCG-based evaluation/ablation."""

__version__ = "0.1.0"
