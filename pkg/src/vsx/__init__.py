"""Taxonomy-decoupled visual search engine with a judge-based evaluation harness."""

__version__ = "0.1.0"
