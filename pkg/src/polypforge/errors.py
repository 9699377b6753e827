"""Exception hierarchy shared across the pipeline.

Every error raised by this package derives from :class:`PolypforgeError`.
The CLI maps the three broad families onto process exit codes: config
problems exit 2, missing upstream artifacts exit 3, everything else 1.
"""


class PolypforgeError(Exception):
    """Base class for all errors raised by polypforge."""


class ConfigError(PolypforgeError):
    """A config file or parameter failed validation.

    The message names the offending field so the caller can fix the
    config without reading a traceback.
    """

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class MissingArtifactError(PolypforgeError):
    """A required upstream artifact (checkpoint, manifest, ranking) is absent."""


class ManifestError(PolypforgeError):
    """Base class for dataset manifest problems."""


class ManifestParseError(ManifestError):
    """A manifest line is not valid JSON or misses required keys."""

    def __init__(self, path, line_no: int, message: str):
        self.path = path
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


class UnknownLabelError(ManifestError):
    """An entry carries a label outside the configured label set."""


class DanglingReferenceError(ManifestError):
    """A manifest entry points at an image file that does not exist."""


class EmptyManifestError(ManifestError):
    """An operation that needs data was handed an empty manifest."""


class SplitUnderflowError(ManifestError):
    """Requested split fractions leave some split without a single entry."""


class ToySpecError(ConfigError):
    """The toy dataset spec is unsatisfiable or malformed."""


class EmptyClassError(PolypforgeError):
    """A class required by the operation has no examples."""


class TrainingDivergedError(PolypforgeError):
    """Training produced a non-finite loss and was aborted."""

    def __init__(self, message: str, epoch: int | None = None, step: int | None = None):
        self.epoch = epoch
        self.step = step
        super().__init__(message)


class NotFittedError(PolypforgeError):
    """Estimator used before ``fit`` (or ``initialize``) was called."""


class CheckpointError(MissingArtifactError):
    """A checkpoint file is missing, truncated, or of the wrong format."""


class LeakageError(PolypforgeError):
    """Evaluation tiles overlap the training or generation lineage."""

    def __init__(self, offending_ids):
        self.offending_ids = sorted(offending_ids)
        shown = ", ".join(self.offending_ids[:5])
        more = "" if len(self.offending_ids) <= 5 else f" (+{len(self.offending_ids) - 5} more)"
        super().__init__(f"evaluation tiles leak into training lineage: {shown}{more}")


class SessionError(PolypforgeError):
    """Base class for blind review session errors."""


class UnknownSessionError(SessionError):
    """No session with the given id."""


class UnknownItemError(SessionError):
    """No item with the given id in this session."""


class DuplicateLabelError(SessionError):
    """The item was already labeled."""


class SessionOrderError(SessionError):
    """A label arrived for an item that has not been served yet."""


class IncompleteSessionError(SessionError):
    """The report was requested before every item was labeled."""


class DegenerateNullError(PolypforgeError):
    """Null accuracy of 0 or 1 makes the z statistic undefined."""
