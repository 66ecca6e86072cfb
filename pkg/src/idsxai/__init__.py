"""Interpretable intrusion detection on network-flow records.

Decision-tree and logistic classifiers for binary Normal/Attack flow
classification, with perturbation-based local explanations, permutation
importance for global explanations, and confidence-gated detection reports.
"""

__version__ = "0.1.0"
