"""Exception hierarchy shared by all epnn modules."""


class EPError(Exception):
    """Base class for all epnn errors."""


class NotPositiveDefinite(EPError):
    """A precision or covariance matrix lost positive definiteness.

    Usually a symptom of diverged site parameters; callers should damp the
    updates or roll back to the last valid state.
    """


class DowndateViolation(EPError):
    """A rank-one downdate would make the precision indefinite."""


class CavityCollapse(EPError):
    """Removing a site fraction left a non-positive cavity precision."""


class DegenerateMass(EPError):
    """A tilted distribution's normalizer underflowed the configured floor."""


class SkippedUpdate(EPError):
    """A site update precondition failed; the old site is kept."""


class Diverged(EPError):
    """The posterior became non-finite despite automatic damping backoff."""


class ConfigError(EPError):
    """Inconsistent or unknown configuration values."""


class DimensionMismatch(EPError):
    """Data dimensions are inconsistent with the model."""


class DataError(EPError):
    """Base class for dataset ingestion failures."""


class ParseError(DataError):
    """A CSV cell failed to parse; message carries row/column location."""


class NonFiniteError(DataError):
    """A dataset contains NaN or infinite entries."""


class ConstantColumnError(DataError):
    """A feature column has zero variance and cannot be normalized."""
