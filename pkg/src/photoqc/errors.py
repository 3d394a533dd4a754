"""Exception taxonomy shared across the toolkit.

Every error raised by photoqc derives from PhotoqcError so callers can
catch the whole family; service/CLI layers map subclasses onto HTTP
status codes and exit codes.
"""


class PhotoqcError(Exception):
    """Base class for all photoqc errors."""


# --- image decoding / geometry ---------------------------------------------

class ImageError(PhotoqcError):
    """Base for image decode and geometry failures."""


class UnsupportedFormat(ImageError):
    """Byte stream is not a PNG or JPEG."""


class CorruptStream(ImageError):
    """Byte stream claims a supported format but cannot be decoded."""


class DegenerateCrop(ImageError):
    """Requested crop would have a side below one pixel."""


class ImageTooSmall(ImageError):
    """Image does not meet an operation's minimum-size precondition."""


# --- datasets / parsing -----------------------------------------------------

class DataError(PhotoqcError):
    """Base for dataset and manifest problems (CLI exit code 2)."""


class ParseError(DataError):
    """A data file line could not be parsed; message carries the line number."""


class EmptyDataset(DataError):
    pass


class SchemaError(DataError):
    """Manifest violates the documented column/value contract."""


class InconsistentDemographics(DataError):
    """One patient carries conflicting age/sex/skin-type values."""


class TooFewPatients(DataError):
    pass


class NoCommonImages(DataError):
    """Two raters share no annotated images."""


class UnlabeledAttempt(DataError):
    """A pilot session references an image with no quality label."""


# --- model training ---------------------------------------------------------

class TrainingError(PhotoqcError):
    pass


class InsufficientSamples(TrainingError):
    pass


class MissingClass(TrainingError):
    """Skin training data lacks one of the two pixel classes."""


class SingleClassTraining(TrainingError):
    """Binary trainer received labels from one class only."""


class DimensionMismatch(TrainingError):
    pass


# --- statistics -------------------------------------------------------------

class StatsError(PhotoqcError):
    pass


class SingleClassScores(StatsError):
    pass


class TooFewPerClass(StatsError):
    pass


class GroupSingleClass(StatsError):
    """A demographic subgroup has only one label class; it is skipped."""


class InvalidSpec(StatsError):
    """Power calculation inputs outside their valid ranges."""


# --- model artifact ---------------------------------------------------------

class ArtifactError(PhotoqcError):
    pass


class IncompatibleArtifactVersion(ArtifactError):
    pass


class SchemaValidationError(ArtifactError):
    """Artifact JSON is structurally invalid."""


class UnknownExternalChannel(ArtifactError):
    """External scores do not match the channels the artifact declares."""


# --- capture service --------------------------------------------------------

class ServiceError(PhotoqcError):
    pass


class ServiceNotReady(ServiceError):
    """No quality model has been loaded yet."""


class SessionNotFound(ServiceError):
    pass


class SessionTerminal(ServiceError):
    """Submission to a session that already accepted or exhausted."""
