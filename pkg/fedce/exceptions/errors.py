class FedCEError(Exception):
    """Base exception for simulator errors"""

    exit_code: int = 3


class ConfigError(FedCEError, ValueError):
    """Raised when a configuration file is missing or violates the schema"""

    exit_code = 2


class FederationSpecError(ConfigError):
    """Raised when federation parameters are inconsistent"""
    pass


class SimulationError(FedCEError, ValueError):
    """Base exception for runtime and numeric failures"""

    exit_code = 3


class DimensionMismatchError(SimulationError):
    """Raised when vector or feature dimensions disagree"""
    pass


class EmptyDatasetError(SimulationError):
    """Raised when an operation needs samples but got none"""
    pass


class SplitError(SimulationError):
    """Raised when a train/val/test split request is invalid"""
    pass


class WeightSimplexError(SimulationError):
    """Raised when aggregation weights are negative or do not sum to 1"""
    pass


class ExclusionError(SimulationError):
    """Raised when a client cannot be excluded from an aggregate (weight >= 1)"""
    pass


class NegativeContributionError(SimulationError):
    """Raised when contribution terms are negative"""
    pass


class ShapleyCostError(SimulationError):
    """Raised when exact Shapley enumeration is requested for too many clients"""
    pass


class SubExperimentError(SimulationError):
    """Raised when a retraining run inside a valuation fails"""

    def __init__(self, subset, cause: Exception):
        self.subset = tuple(subset)
        self.cause = cause
        super().__init__(f"Sub-experiment on clients {list(self.subset)} failed: {cause}")


class MetricError(SimulationError):
    """Raised when a metric is undefined for the given input"""
    pass


class CheckpointFormatError(SimulationError):
    """Raised when a checkpoint or record file is malformed"""
    pass


class NonFiniteError(SimulationError):
    """Raised when parameters or statistics become NaN or infinite"""
    pass
