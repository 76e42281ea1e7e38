"""Exception taxonomy shared across the toolkit."""


class SepkitError(Exception):
    """Base class for all toolkit errors."""


class InvalidConfig(SepkitError):
    """A configuration value is out of range or malformed."""


class InputTooShort(SepkitError):
    """Audio shorter than a single analysis window."""


class ShapeMismatch(SepkitError):
    """Inconsistent array shapes between related inputs."""


class DegenerateSource(SepkitError):
    """A source signal is silent where energy is required."""


class SplitViolation(SepkitError):
    """Train/dev and test speaker pools overlap."""


class ContractViolation(SepkitError):
    """A value violates an interface contract (e.g. negative estimated mask)."""


class UnsupportedSourceCount(SepkitError):
    """Exhaustive permutation search is limited to small source counts."""


class InvalidGraph(SepkitError):
    """Backward pass requested on an unusable computation graph."""


class NumericGuardTripped(SepkitError):
    """A NaN or Inf appeared where only finite values are allowed."""


class IncompatibleCheckpoint(SepkitError):
    """Checkpoint file is corrupted or does not match the model."""


class StageOrderViolation(SepkitError):
    """Training stages must progress dc -> joint -> dl."""


class UnsupportedStage(SepkitError):
    """Operation not defined for a checkpoint of this training stage."""


class DegenerateReference(SepkitError):
    """A reference signal has no energy, so projections are undefined."""


class ManifestError(SepkitError):
    """Corpus manifest is missing, malformed, or references missing files."""
