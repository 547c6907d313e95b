"""Exception types shared across the package."""


class GlrFusionError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(GlrFusionError, ValueError):
    """Array shapes are inconsistent with the requested operation."""


class RankDeficiencyError(GlrFusionError):
    """A matrix that must have full column rank does not."""


class DegenerateDataError(GlrFusionError):
    """Data carries no energy where the statistic requires some."""


class ConfigError(GlrFusionError, ValueError):
    """A configuration or model specification is invalid."""


class ProtocolError(GlrFusionError):
    """A fusion message is missing required fields."""
