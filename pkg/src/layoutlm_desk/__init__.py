"""Desk-scale layout-aware document language model.

A from-scratch numpy implementation of a BERT-style encoder whose input
embedding adds learned lookups for each word's bounding box, with masked
visual-language pre-training and fine-tuning for form/receipt labeling and
document classification.
"""

__version__ = "0.1.0"
