"""Exception types raised across the package."""


class DosemergeError(Exception):
    """Base class for all package errors."""


class DomainError(DosemergeError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class DegenerateSampleError(DosemergeError, ValueError):
    """A sample or distribution has no spread where one is required."""


class DegenerateDistributionError(DegenerateSampleError):
    pass


class GridError(DosemergeError, ValueError):
    """Grid densities are malformed or live on different grids."""


class NoSolutionError(DosemergeError):
    """A root or dose search found no bracketing interval."""


class InitializationError(DosemergeError):
    """The sampler could not find a finite starting point."""


class OptimizationError(DosemergeError):
    """Mode finding or curvature estimation failed."""


class MappingError(DosemergeError, KeyError):
    """A required parameter is missing from a draw table."""

    def __str__(self):
        return Exception.__str__(self)


class SamplingError(DosemergeError):
    """Not enough posterior draws to build the requested subsample."""


class IncommensurableSupportError(DosemergeError):
    """Densities share (numerically) no support, so their product vanishes."""


class UnsupportedCardinalityError(DosemergeError, ValueError):
    """The selection rule only handles three studies."""


class ConfigError(DosemergeError, ValueError):
    """Invalid run configuration or scenario file."""


class CampaignError(DosemergeError):
    """Too many replications of a campaign failed."""


class ConvergenceWarning(UserWarning):
    """MCMC diagnostics exceed the convergence threshold."""
