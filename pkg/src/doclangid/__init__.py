"""Few-shot language identification for historical document images.

The package covers the full experiment pipeline: synthetic corpus
generation, image preprocessing, patch-based prediction, two-stage model
training (joint meta-training followed by frozen-backbone cosine-head
adaptation), evaluation and sweeps, and an OCR + character-trigram
baseline. Everything is seeded and deterministic on a single platform.
"""

__version__ = "0.1.0"

from doclangid.errors import DataError, EngineError, UsageError

__all__ = ["DataError", "EngineError", "UsageError", "__version__"]
