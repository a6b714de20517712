"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 2, data/layout
problems exit 3, numeric failures exit 4.
"""


class DatasetError(RuntimeError):
    """A sequence directory is missing, incomplete, or malformed."""


class BehindCameraError(ValueError):
    """A point projects to camera-frame depth z <= 0.

    This is a reported condition, not a crash: sweep and fusion code
    catches it (or uses the array API, which returns validity masks).
    """
