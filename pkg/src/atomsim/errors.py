"""Exception types raised by the simulation modules and the benchmark CLI."""


class AtomsimError(Exception):
    """Base class for all errors raised by this package."""


class DomainTooSmall(AtomsimError):
    """A domain extent component is smaller than the requested cell cutoff."""


class NonPositiveDistance(AtomsimError):
    """A pair interaction was requested at distance <= 0 (overlapping particles)."""


class NonCubicDomain(AtomsimError):
    """The multipole solver requires a cubic domain."""


class NotWellSeparated(AtomsimError):
    """A multipole-to-local translation was requested between adjacent cells."""


class CoincidentParticles(AtomsimError):
    """Two distinct charges occupy the same point."""


class NoMovesAvailable(AtomsimError):
    """The kinetic Monte Carlo system has no executable move (frozen state)."""


class DestinationOccupied(AtomsimError):
    """A hop was applied whose destination site is no longer empty."""


class ConfigError(AtomsimError):
    """Base class for benchmark configuration errors."""


class UnknownKey(ConfigError):
    """A config file contains a key the benchmark does not define."""


class MalformedValue(ConfigError):
    """A config value could not be parsed into its declared type."""


class MissingBenchmark(ConfigError):
    """No (or no valid) benchmark name was supplied."""


class IoFailure(AtomsimError):
    """A result file could not be written."""
