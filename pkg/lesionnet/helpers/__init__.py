"""Ingestion, configuration and persistence helpers."""
