"""Toolkit for measuring how prior context shifts model answer quality:
tiered hint runs, rubric grading (manual and automated), credibility-weighted
feedback packing, and reproducible record/replay provider access."""

__version__ = "0.1.0"
