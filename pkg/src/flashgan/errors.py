"""Exception hierarchy. CLI exit codes hang off ``exit_code``."""


class FlashGANError(Exception):
    exit_code = 3


class SchemaError(FlashGANError, ValueError):
    exit_code = 2


class DimensionError(FlashGANError, ValueError):
    exit_code = 2


class ConfigError(FlashGANError, ValueError):
    exit_code = 2


class ParseError(FlashGANError, ValueError):
    exit_code = 2


class EmptySubgraphError(FlashGANError):
    pass


class IsolatedCenterError(FlashGANError):
    pass


class UndefinedRatioError(FlashGANError):
    pass


class UndefinedMetricError(FlashGANError, ValueError):
    pass


class NothingToAddError(FlashGANError):
    pass


class DegenerateSmoteError(FlashGANError):
    pass


class ContractError(FlashGANError, ValueError):
    pass


class NonFiniteGradientError(FlashGANError, FloatingPointError):
    pass


class CollectionStallError(FlashGANError):
    exit_code = 4


class AugmentationStallError(FlashGANError):
    exit_code = 4
