"""Exception types shared across the package."""


class HetfunnelError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(HetfunnelError):
    """Schema file or schema/data mismatch problems."""


class LoadError(HetfunnelError):
    """Unparseable or missing values in an input file."""


class FoldError(HetfunnelError):
    """A cross-fitting fold cannot be fit (e.g. an arm is missing)."""


class PositivityError(HetfunnelError):
    """Propensity scores too close to 0 or 1 for pseudo-outcome weighting."""


class DegenerateScaleError(HetfunnelError):
    """All pseudo-outcomes identical; no scale to standardize against."""


class CalibrationError(HetfunnelError):
    """Effect-size calibration failed to bracket the target power."""


class MvnLimitError(HetfunnelError):
    """Too many subgroups for the numerical-integration reference method."""


class ConfigError(HetfunnelError):
    """Invalid run or study configuration."""
