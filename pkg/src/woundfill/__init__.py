"""Wound segmentation on triangle meshes and watertight wound-filler extraction."""

__version__ = "0.1.0"
