"""Turn MIMIC-IV-shaped EHR tables into tabular feature sets and templated patient text."""

__version__ = "0.1.0"
