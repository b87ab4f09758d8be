"""Exception hierarchy shared by all skysplat modules."""


class SkySplatError(Exception):
    """Base class for all errors raised by this package."""


# --- camera model ---

class DenominatorNearZero(SkySplatError):
    """A rational-polynomial denominator fell below the safe magnitude."""


class NonFinite(SkySplatError):
    """NaN or Inf encountered in an input that must be finite."""


class NoConvergence(SkySplatError):
    def __init__(self, residual):
        super().__init__(f"iterative localization did not converge (residual {residual:.3e} px)")
        self.residual = residual


class SingularJacobian(SkySplatError):
    """The 2x2 localization Jacobian is numerically singular."""


class DegenerateFit(SkySplatError):
    """Sample points for a camera fit are coplanar or otherwise rank-deficient."""


class SchemaError(SkySplatError):
    def __init__(self, field):
        super().__init__(f"missing or malformed field: {field}")
        self.field = field


class CoefficientCountError(SkySplatError):
    """An RPC coefficient vector does not contain exactly 20 entries."""


# --- rasters / features ---

class BadChannelCount(SkySplatError):
    pass


class ShapeMismatch(SkySplatError):
    pass


class MagicMismatch(SkySplatError):
    pass


class TruncatedFile(SkySplatError):
    pass


class UnsupportedPng(SkySplatError):
    pass


# --- cost volume ---

class BadRange(SkySplatError):
    pass


class EmptySourceSet(SkySplatError):
    pass


# --- cscm ---

class NoOverlap(SkySplatError):
    pass


# --- losses ---

class TooFewPixels(SkySplatError):
    pass


class EmptyMask(SkySplatError):
    pass


# --- gaussians ---

class EmptyHeightMap(SkySplatError):
    pass


class EmptyGaussianSet(SkySplatError):
    pass


# --- aggregation ---

class OutOfFootprint(SkySplatError):
    pass


class ViewCountTooSmall(SkySplatError):
    pass


class EmptyPointSet(SkySplatError):
    pass


# --- metrics ---

class NoComparableCells(SkySplatError):
    pass


class GridMismatch(SkySplatError):
    pass


# --- synthetic ---

class BadSpec(SkySplatError):
    pass


class FitResidualTooLarge(SkySplatError):
    def __init__(self, max_err):
        super().__init__(f"RPC fit validation residual too large: {max_err:.3e} px")
        self.max_err = max_err


# --- cli ---

class ConfigError(SkySplatError):
    pass
