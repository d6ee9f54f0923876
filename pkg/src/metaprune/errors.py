"""Exception types shared across the package."""


class MetapruneError(Exception):
    """Base class for all errors raised by this package."""


class TemplateError(MetapruneError, ValueError):
    """Malformed architecture template or invalid NEV for a template."""


class RewardDomainError(MetapruneError, ValueError):
    """Reward coefficient evaluated outside its domain (miscalibrated baseline)."""


class WindowInfeasibleError(MetapruneError, RuntimeError):
    """Could not produce a gene inside the configured FLOPs window."""


class ShapeError(MetapruneError, ValueError):
    """Tensor shapes incompatible with the requested operation."""


class GraphError(MetapruneError, RuntimeError):
    """Autodiff graph misuse: backward without forward, reused or detached graph."""


class OptimizerError(MetapruneError, RuntimeError):
    """Optimizer step aborted (for example on non-finite gradients)."""


class CheckpointError(MetapruneError, ValueError):
    """Corrupt or incompatible checkpoint file."""


class DatasetError(MetapruneError, ValueError):
    """Unreadable or inconsistent dataset files."""


class ConfigError(MetapruneError, ValueError):
    """Invalid run configuration; ``problems`` lists every violated field."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))
