"""Domain-smoothing network on feature vectors (C++ core)."""

from ._dsn import (
    DsnError,
    MemoryBank,
    ablate,
    ask_loss,
    average_precision,
    cls_loss,
    cmcm_loss,
    default_metadata,
    itq_encode,
    itq_fit,
    memory_loss,
    precision_at_k,
    synth,
)

__all__ = [
    "DsnError",
    "MemoryBank",
    "ablate",
    "ask_loss",
    "average_precision",
    "cls_loss",
    "cmcm_loss",
    "default_metadata",
    "itq_encode",
    "itq_fit",
    "memory_loss",
    "precision_at_k",
    "synth",
]
