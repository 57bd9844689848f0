"""Exception types raised by the explanation engine.

Three broad families exist so the command line tool can map failures to
distinct exit codes: configuration problems, file/IO problems, and
classifier-side problems. Everything derives from PixelCauseError.
"""


class PixelCauseError(Exception):
    """Base class for all engine errors."""


class ConfigError(PixelCauseError):
    """Invalid or contradictory run configuration."""


class InputError(PixelCauseError):
    """Missing or malformed input files / artifacts."""


class ClassifierError(PixelCauseError):
    """Classifier construction, training, or invocation failed."""


# --- imaging ---------------------------------------------------------------

class DimensionMismatch(PixelCauseError):
    """Two images / masks that must share a shape do not."""


class DegenerateHistogram(PixelCauseError):
    """Histogram has fewer distinct populated bins than requested classes."""


class UnknownSegmentId(PixelCauseError):
    """A segment id was referenced that the segment map does not contain."""


# --- synthetic domain ------------------------------------------------------

class InvalidSpec(PixelCauseError):
    """A scene specification violates a structural constraint."""


# --- classifier gateway ----------------------------------------------------

class SingleClassTraining(ClassifierError):
    """Training data contains only one class."""


class OverlappingRegions(ClassifierError):
    """Planted classifier regions overlap."""


class SubprocessFailure(ClassifierError):
    """External classifier process died, timed out, or spoke garbage."""


# --- segmentation ----------------------------------------------------------

class NoSegmentsFound(PixelCauseError):
    """Segmentation produced no usable segments in either pass."""


# --- perturbation ----------------------------------------------------------

class LengthMismatch(PixelCauseError):
    """Perturbation vector length differs from the segment count."""


class IncompleteEnumeration(PixelCauseError):
    """A minimality check needed a perturbation record that is missing."""


# --- regression / explanation ---------------------------------------------

class NoConvergence(PixelCauseError):
    """Iterative fit did not converge within the iteration budget."""


class NotPositiveClass(PixelCauseError):
    """explain() was asked to explain an image the model does not assign
    to the positive class."""


# --- evaluation ------------------------------------------------------------

class EmptyTargets(PixelCauseError):
    """Evaluation metric invoked with no annotated target regions."""


class ZeroSaliency(PixelCauseError):
    """Saliency map has no positive mass to threshold."""


class InsufficientData(PixelCauseError):
    """Aggregate statistics need at least two observations."""
