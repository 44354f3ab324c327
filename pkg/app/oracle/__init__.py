"""Exact expert / conditional / interventional policies and the Thompson actor."""
