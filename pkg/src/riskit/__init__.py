"""riskit: link-level simulation toolkit for RIS-aided wireless systems."""

__version__ = "0.1.0"
