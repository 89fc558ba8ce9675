# --------------------------------------------------------------------------------------
# Part of the mdstore project.
# --------------------------------------------------------------------------------------

"""Constants used in the mdstore project"""

from pathlib import Path
from uuid import UUID

# Segment files
SEGMENT_SUFFIX = ".mdseg"
TEMP_SUFFIX = ".tmp"
DESCRIPTOR_FILE_NAME = "descriptor.xml"
DEFAULT_DATA_DIR = Path("mdstore-data")

# Namespace for deterministic record-type identifiers of placeholder descriptors
DESCRIPTOR_NAMESPACE = UUID("6f1d2a9e-3c4b-5e7f-8a90-b1c2d3e4f5a6")

# Bundled descriptors, addressable by short name from the CLI
BUNDLED_DESCRIPTORS = {
    "nyc": "nyc_taxi.xml",
    "ghcn": "ghcn_daily.xml",
}

# Segmentation defaults
DEFAULT_MAX_SEGMENT_SIZE = 1 << 20
DEFAULT_OVERPACKING = 4.0
DEFAULT_PIVOT_SAMPLES = 3

# Ingest defaults
DEFAULT_MAX_CHUNK_RECORDS = 10_000
DEFAULT_WRITER_PERIOD_MS = 500.0
DEFAULT_HIGH_WATER_MARK = 10_000
WRITER_BACKOFF_CAP = 10

# Global index
RSTAR_MAX_ENTRIES = 64
RSTAR_MIN_FILL = 0.4
RSTAR_REINSERT_FRACTION = 0.3

# Cache
DEFAULT_CACHE_CAPACITY_BYTES = 1 << 30
CLOCK_MAX_COUNTER = 3

# Packed kd-tree nil child
NIL = -1
