# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Utilities shared across the mdstore package."""

import logging
import re
import time
from contextlib import contextmanager
from typing import Iterator, List, Tuple

import typer

py_logger = logging.getLogger(__name__)

_SIZE_UNITS = {
    "": 1,
    "b": 1,
    "k": 1000,
    "kb": 1024,
    "kib": 1024,
    "m": 1000**2,
    "mb": 1024**2,
    "mib": 1024**2,
    "g": 1000**3,
    "gb": 1024**3,
    "gib": 1024**3,
}
_SIZE_PATTERN = re.compile(r"^\s*(\d+(?:\.\d+)?)\s*([a-zA-Z]*)\s*$")


def parse_size(text: str | int) -> int:
    """Parse a byte size such as ``4096``, ``256KB`` or ``1MiB``.

    ``KB``, ``MB`` and ``GB`` are binary multiples, as in segment size settings.

    Raises:
        ValueError: for unknown units or malformed numbers.
    """
    if isinstance(text, int):
        return text
    match = _SIZE_PATTERN.match(text)
    if match is None or match.group(2).lower() not in _SIZE_UNITS:
        raise ValueError(f"Invalid size '{text}'")
    return int(float(match.group(1)) * _SIZE_UNITS[match.group(2).lower()])


def size_option(value: str | None) -> int | None:
    """typer callback turning a size option into bytes."""
    if value is None:
        return None
    try:
        return parse_size(value)
    except ValueError as exc:
        raise typer.BadParameter(str(exc))


def human_bytes(num: float) -> str:
    for unit in ("B", "KiB", "MiB", "GiB"):
        if abs(num) < 1024 or unit == "GiB":
            return f"{num:.0f} {unit}" if unit == "B" else f"{num:.1f} {unit}"
        num /= 1024
    return f"{num:.1f} GiB"


class Stopwatch:
    """Elapsed wall-clock time, measured with ``time.perf_counter``."""

    def __init__(self) -> None:
        self.start = time.perf_counter()
        self.stop: float | None = None

    @property
    def elapsed(self) -> float:
        end = self.stop if self.stop is not None else time.perf_counter()
        return end - self.start


@contextmanager
def timer(label: str | None = None) -> Iterator[Stopwatch]:
    """Time the enclosed block; logs at DEBUG level when ``label`` is given."""
    watch = Stopwatch()
    try:
        yield watch
    finally:
        watch.stop = time.perf_counter()
        if label is not None:
            py_logger.debug(f"{label} took {watch.elapsed:.4f}s")


def split_evenly(total: int, parts: int) -> List[Tuple[int, int]]:
    """Split ``range(total)`` into ``parts`` contiguous ``(start, stop)`` slices whose
    sizes differ by at most one. Trailing slices may be empty."""
    if parts < 1:
        raise ValueError(f"Cannot split into {parts} parts")
    base, extra = divmod(total, parts)
    slices = []
    start = 0
    for i in range(parts):
        stop = start + base + (1 if i < extra else 0)
        slices.append((start, stop))
        start = stop
    return slices
