"""Feature-dump extractor for frozen classifiers.

Runs a checkpoint over a dataset and writes penultimate features, logits,
labels and the linear head in the .oodf interchange format, together with
the channels a post-hoc consumer cannot recompute: MC-dropout probability
stacks and logits after the ODIN input-gradient perturbation. A sidecar
with checksums and reference scores makes every dump cross-checkable.
"""

__version__ = "0.1.0"

from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    ExtractError,
    MissingHead,
)
from .extract import ExtractionJob, ExtractResult, OdinOptions, extract
from .models import PenultimateCapture, build_mlp, find_head, load_checkpoint
from .oodf import write_dump, write_head, write_sidecar

__all__ = [
    "__version__",
    "ExtractError",
    "ConfigError",
    "CheckpointError",
    "DataError",
    "MissingHead",
    "ExtractionJob",
    "ExtractResult",
    "OdinOptions",
    "extract",
    "build_mlp",
    "find_head",
    "load_checkpoint",
    "PenultimateCapture",
    "write_dump",
    "write_head",
    "write_sidecar",
]
