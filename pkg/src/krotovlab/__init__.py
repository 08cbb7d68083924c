"""Monotone optimal control of closed quantum systems."""
