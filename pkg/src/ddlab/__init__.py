"""Epoch-wise double-descent detection and a desk-scale training lab."""
