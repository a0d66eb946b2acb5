"""Optimization schedule, augmentation and training loops."""
