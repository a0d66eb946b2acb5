"""Utility helpers for lesionnet."""
