"""Style-expansion training for corruption- and domain-robust segmentation."""

__version__ = "0.1.0"
