"""Joint in-hand pose and extrinsic contact estimation over a factor graph."""

__version__ = "0.1.0"
