"""Exception types shared across the package."""


class ScribelabError(Exception):
    """Base class for package-level errors."""


class UsageError(ScribelabError):
    """Bad flags, bad config keys, or an impossible request (CLI exit code 1)."""


class DataValidationError(ScribelabError):
    """A record or file failed schema validation (CLI exit code 2)."""


class CheckpointError(ScribelabError):
    """A checkpoint file is missing, corrupt, or has an unsupported version."""


class TrainingDivergedError(ScribelabError):
    """Training produced a non-finite loss."""


class StudyError(ScribelabError):
    """A hyperparameter study could not complete any trial."""
