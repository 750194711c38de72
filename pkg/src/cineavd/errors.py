"""Shared exception hierarchy; the CLI maps these to exit code 2."""


class CineAvdError(Exception):
    """Base class for all package errors."""


class VolumeError(CineAvdError):
    """Invalid cine volume or .ctv file."""


class ManifestError(CineAvdError):
    """Invalid manifest file or entry."""


class ExtractionError(CineAvdError):
    """Heart extraction failed."""


class NnError(CineAvdError):
    """Tensor-engine failure: bad shape, non-finite value, unknown op."""


class ModelError(CineAvdError):
    """Inconsistent architecture config or checkpoint."""


class TrainError(CineAvdError):
    """Training-loop failure."""


class EvalError(CineAvdError):
    """Evaluation failure."""


class PhantomError(CineAvdError):
    """Invalid phantom configuration."""
