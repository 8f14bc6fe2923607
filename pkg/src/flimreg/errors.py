"""Exception hierarchy shared by all engine modules.

Every error raised by the package derives from :class:`FlimregError`, so
callers (CLI, HTTP service) can map failures to exit codes / status codes
uniformly.  The ``code`` attribute is a stable machine-readable identifier.
"""


class FlimregError(Exception):
    """Base class for all package errors."""

    code = "error"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


# --- file / format -------------------------------------------------------

class MissingFile(FlimregError):
    code = "missing_file"


class IoFailure(FlimregError):
    code = "io_failure"


class CorruptHeader(FlimregError):
    code = "corrupt_header"


class DimensionMismatch(FlimregError):
    code = "dimension_mismatch"


class NegativeCount(FlimregError):
    code = "negative_count"


class PersistFailure(FlimregError):
    code = "persist_failure"


# --- reconstruction ------------------------------------------------------

class WindowTooLarge(FlimregError):
    code = "window_too_large"


class InsufficientSignal(FlimregError):
    code = "insufficient_signal"


class BandOutOfRange(FlimregError):
    code = "band_out_of_range"


class EmptyPlane(FlimregError):
    code = "empty_plane"


class EmptyGroup(FlimregError):
    code = "empty_group"


# --- imaging -------------------------------------------------------------

class DegenerateHistogram(FlimregError):
    code = "degenerate_histogram"


class MissingIntensity(FlimregError):
    code = "missing_intensity"


# --- translation ---------------------------------------------------------

class MissingExternalImage(FlimregError):
    code = "missing_external_image"


class EmptyForeground(FlimregError):
    code = "empty_foreground"


# --- registration --------------------------------------------------------

class SingularHomography(FlimregError):
    code = "singular_homography"


class NonFiniteLoss(FlimregError):
    code = "non_finite_loss"


class EmptyOverlap(FlimregError):
    code = "empty_overlap"


# --- stitching -----------------------------------------------------------

class CanvasTooSmall(FlimregError):
    code = "canvas_too_small"


class KindMismatch(FlimregError):
    code = "kind_mismatch"


class PointNotCovered(FlimregError):
    code = "point_not_covered"


class InvalidWindow(FlimregError):
    code = "invalid_window"


# --- service -------------------------------------------------------------

class ValidationError(FlimregError):
    code = "validation_error"


class UnknownProject(FlimregError):
    code = "unknown_project"


class UnknownWsi(FlimregError):
    code = "unknown_wsi"


class UnknownTile(FlimregError):
    code = "unknown_tile"


class UnknownJob(FlimregError):
    code = "unknown_job"


class JobNotDone(FlimregError):
    code = "job_not_done"


class RectOutOfBounds(FlimregError):
    code = "rect_out_of_bounds"
