"""Segment files and the segment cache."""

from .cache import CacheStats, SegmentCache
from .store import SegmentStore

__all__ = ["CacheStats", "SegmentCache", "SegmentStore"]
