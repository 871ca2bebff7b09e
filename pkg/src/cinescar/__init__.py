"""Contrast-free myocardial scar segmentation from cine MRI motion and texture."""

__version__ = "0.1.0"
