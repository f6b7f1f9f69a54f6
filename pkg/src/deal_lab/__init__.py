"""Discrepancy-based active learning lab for weakly supervised segmentation."""

__version__ = "0.1.0"
