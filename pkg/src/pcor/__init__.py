"""Private release of contextual outlier explanations."""

__version__ = "0.1.0"
