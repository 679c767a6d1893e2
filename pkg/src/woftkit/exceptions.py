"""Error types raised across the toolkit.

Each condition gets its own class so callers can react to the failure mode
rather than parse messages.
"""

from __future__ import annotations


class WoftkitError(Exception):
    """Base class for all toolkit errors."""


class PointAtInfinityError(WoftkitError):
    """A projected point's homogeneous scale vanished."""


class DegenerateResultError(WoftkitError):
    """A homography is singular or cannot be brought to canonical form."""


class TooFewCorrespondencesError(WoftkitError):
    """Fewer point pairs than the operation needs."""


class DegenerateConfigurationError(WoftkitError):
    """The correspondence configuration does not determine a homography."""


class InsufficientSupportError(WoftkitError):
    """Fewer than four pairs carry non-negligible weight."""


class NoValidHypothesisError(WoftkitError):
    """Every sampled minimal set was degenerate."""


class ImageSizeMismatchError(WoftkitError):
    """Two images that must share a size do not."""


class FrameSizeMismatchError(ImageSizeMismatchError):
    """A frame does not match the template size the tracker was built with."""


class EmptyMaskError(WoftkitError):
    """A mask selects no usable pixels."""


class GenerationFailedError(WoftkitError):
    """Random generation exhausted its resampling budget."""


class EmptyInputError(WoftkitError):
    """A reduction was asked for on an empty collection."""


class LengthMismatchError(WoftkitError):
    """Two sequences that must align have different lengths."""
