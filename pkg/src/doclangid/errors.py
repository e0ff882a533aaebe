"""Exception types shared across the package.

The CLI maps these onto exit codes: usage errors exit 1, data errors
exit 2, external-engine errors exit 3.
"""


class UsageError(Exception):
    """Bad invocation: unknown flags, invalid config values."""


class DataError(Exception):
    """Invalid or inconsistent data: manifests, images, label spaces."""


class EngineError(Exception):
    """External OCR engine missing, failing, or timing out."""
