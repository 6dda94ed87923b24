"""Exception hierarchy shared by every stbcp module."""


class StbcpError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(StbcpError):
    """A score or feature file could not be parsed."""


class ValidationError(StbcpError):
    """Input data violates a documented invariant."""


class InsufficientData(StbcpError):
    """Not enough samples for the requested calibration size."""


class MissingFeatures(StbcpError):
    """A size rule needs feature vectors that were not supplied."""


class DegenerateRange(StbcpError):
    """Entropy binning was given an empty or inverted range."""


class RankDeficient(StbcpError):
    """PCA found fewer positive eigenvalues than requested components."""


class InvalidBudget(StbcpError):
    """A size budget or volume budget is outside its valid range."""


class InfiniteThreshold(StbcpError):
    """A step transform was asked for h(w) at an infinite threshold."""


class MissingOracle(StbcpError):
    """The oracle transform was used without exact label probabilities."""


class ZeroDenominator(StbcpError):
    """h(w) vanished on a draw used by the objective functional."""


class NonpositiveDenominator(StbcpError):
    """The closed-form miscoverage level has h(w) <= 0."""


class ZeroMass(StbcpError):
    """Every transformed score entering an e-variable is zero."""


class ConfigError(StbcpError):
    """Experiment configuration is invalid."""
