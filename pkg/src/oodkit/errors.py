"""Exception hierarchy shared across the toolkit."""


class OodkitError(Exception):
    """Base class for all toolkit errors."""


class FormatError(OodkitError):
    """A serialized artifact failed to parse.

    ``code`` is a stable machine-readable identifier:
    ``bad_magic``, ``bad_version``, ``bad_dtype``, ``truncated``,
    ``nonfinite``, ``flag_mismatch``, ``bad_index``.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class DimensionMismatch(OodkitError):
    """Array shapes disagree with what an operation requires."""


class MissingArtifact(OodkitError):
    """A score function needs a fitted artifact that was never fitted."""


class MissingChannel(OodkitError):
    """A score function needs an input channel (logits, dropout stack,
    perturbed logits) absent from the evaluated dump."""


class DegenerateData(OodkitError):
    """Input data makes the requested quantity undefined (zero residual,
    identical weight rows, zero activation mass, ...)."""


class FitFailure(OodkitError):
    """A statistics fit could not be completed (missing class, zero-norm
    feature, non-convergent MLE)."""


class ConfigError(OodkitError):
    """A hyperparameter key or value is invalid for the method."""


class GuardViolation(OodkitError):
    """A file was opened in a phase that forbids it (test dumps during
    hyperparameter sweeps)."""
