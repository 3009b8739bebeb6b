"""Exception types shared across the package."""


class VNSError(Exception):
    pass


class ConfigError(VNSError, ValueError):
    """Invalid run configuration; the message carries the offending field path."""


class StepRejected(VNSError):
    """A time step violated a stability constraint (CFL) and was not applied."""


class SimulationAborted(VNSError):
    """Non-finite values appeared in the state."""


class SchemaError(VNSError, ValueError):
    """A diagnostics file does not match the expected CSV schema."""
