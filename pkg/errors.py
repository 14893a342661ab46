# Exception hierarchy for the Rydberg Rabi-flopping simulator.
# Every error carries an exit_code so the CLI can report its category.


class SimulationError(Exception):
    exit_code = 1


class DomainError(SimulationError, ValueError):
    """Invalid physical input (negative intensity, nonpositive temperature, ...)."""
    exit_code = 2


class ConfigError(SimulationError):
    exit_code = 3


class ConfigFileNotFoundError(ConfigError):
    def __init__(self, path):
        super().__init__(f"Config file not found: {path}")
        self.path = path


class ConfigParseError(ConfigError):
    def __init__(self, message, line_number=None):
        where = f"line {line_number}: " if line_number is not None else ""
        super().__init__(f"{where}{message}")
        self.line_number = line_number


class UnitError(ConfigError):
    pass


class ConfigValidationError(ConfigError, DomainError):
    pass


class ShapeError(SimulationError):
    exit_code = 4


class RangeError(SimulationError):
    exit_code = 5


class ResolutionError(SimulationError):
    exit_code = 6


class FitError(SimulationError):
    exit_code = 7


class IntegrationError(SimulationError):
    exit_code = 8

    def __init__(self, message, time=None):
        super().__init__(message if time is None else f"{message} (t = {time:.6e} s)")
        self.time = time


class SingularSystemError(SimulationError):
    exit_code = 9

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class InvariantViolation(SimulationError):
    exit_code = 10


class OutputError(SimulationError):
    exit_code = 11

    def __init__(self, message, path=None):
        super().__init__(message if path is None else f"{message}: {path}")
        self.path = path
