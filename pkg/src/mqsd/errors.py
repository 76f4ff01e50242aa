"""Exception types shared across the package."""


class SimulationError(RuntimeError):
    """Base class for runtime failures during trajectory integration."""


class IntegrationError(SimulationError):
    """The state became unusable (zero norm or non-finite amplitudes)."""


class CapacityError(SimulationError):
    """The adaptive basis needs more levels than the policy allows."""
