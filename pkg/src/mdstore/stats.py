# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Segmentation quality statistics.

The overlap of a segment is the number of other segments whose bounding rectangles
intersect its own, counted pairwise over closed intervals on every indexing dimension.
"""

import logging
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

from .index.reference import SegmentReference
from .segment import Hyperrectangle

py_logger = logging.getLogger(__name__)

# rows of the pairwise intersection matrix computed at once
_BLOCK_ROWS = 1024


class OverlapReport(BaseModel):
    """Pairwise bounding-rectangle overlap of the segments of a store."""

    counts: List[int] = Field(default_factory=list)
    mean: float = 0.0
    stddev: float = 0.0
    segment_count: int = 0
    records_per_segment_mean: float = 0.0
    records_per_segment_stddev: float = 0.0
    method: str = "pairwise, closed intervals, all indexing dimensions"
    metadata: Dict[str, Any] = Field(default_factory=dict)

    def summary(self) -> Dict[str, Any]:
        """Flat row for tables: everything except the per-segment counts."""
        return {
            **self.metadata,
            "segments": self.segment_count,
            "mean_overlap": round(self.mean, 2),
            "stddev_overlap": round(self.stddev, 2),
            "mean_records": round(self.records_per_segment_mean, 1),
            "stddev_records": round(self.records_per_segment_stddev, 1),
        }


def _stack(rects: Sequence[Hyperrectangle]) -> Tuple[np.ndarray, np.ndarray]:
    lo = np.stack([r.lo for r in rects]).astype(np.int64)
    hi = np.stack([r.hi for r in rects]).astype(np.int64)
    return lo, hi


def overlap_counts(rects: Sequence[Hyperrectangle]) -> np.ndarray:
    """Number of other rectangles intersecting each rectangle."""
    n = len(rects)
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    lo, hi = _stack(rects)
    counts = np.empty(n, dtype=np.int64)
    for start in range(0, n, _BLOCK_ROWS):
        stop = min(start + _BLOCK_ROWS, n)
        hits = np.all(
            (lo[start:stop, None, :] <= hi[None, :, :])
            & (lo[None, :, :] <= hi[start:stop, None, :]),
            axis=2,
        )
        # a rectangle always intersects itself
        counts[start:stop] = hits.sum(axis=1) - 1
    return counts


def overlap_stats(refs: Sequence[SegmentReference], **metadata: Any) -> OverlapReport:
    """Overlap counts with their mean and population standard deviation.

    ``metadata`` (scheme, chunk size, segment size, ...) is carried into the report.
    """
    counts = overlap_counts([ref.rect for ref in refs])
    sizes = np.array([ref.record_count for ref in refs], dtype=np.float64)
    if len(refs) < 2:
        py_logger.warning(f"Overlap of {len(refs)} segments is trivially zero")
    report = OverlapReport(
        counts=counts.tolist(),
        mean=float(counts.mean()) if len(counts) else 0.0,
        stddev=float(counts.std()) if len(counts) else 0.0,
        segment_count=len(refs),
        records_per_segment_mean=float(sizes.mean()) if len(sizes) else 0.0,
        records_per_segment_stddev=float(sizes.std()) if len(sizes) else 0.0,
        metadata=dict(metadata),
    )
    py_logger.debug(
        f"Overlap of {report.segment_count} segments: mean {report.mean:.2f}, "
        f"stddev {report.stddev:.2f}"
    )
    return report
