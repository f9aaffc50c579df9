"""Segmentation and quantification toolkit for intravascular ultrasound."""

__version__ = "0.1.0"

TARGETS = ("lumen", "ma")
