"""Exact-DP laboratory for representation learning in low-rank MDPs."""
