"""First-level index: R*-tree over segment rectangles and segment references."""

from .reference import Residency, SegmentLoader, SegmentReference
from .rstar import GlobalIndex, RStarTree

__all__ = ["GlobalIndex", "RStarTree", "Residency", "SegmentLoader", "SegmentReference"]
