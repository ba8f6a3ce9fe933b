"""Test suite for quenched-limits."""
