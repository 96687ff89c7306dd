"""Lateral ventricle segmentation from silver- and gold-standard masks."""
from .volume import BinaryMask, Scan, Spacing, Volume, read_volume, write_volume

__version__ = "0.1.0"

__all__ = ["BinaryMask", "Scan", "Spacing", "Volume", "read_volume", "write_volume", "__version__"]
