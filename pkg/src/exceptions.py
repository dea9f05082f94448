"""
Error types raised by the FBNet library
Each carries the process exit code the command line uses for it
"""


class FBNetError(Exception):
    """Base class for all library errors"""

    exit_code = 1


class ArgumentError(FBNetError, ValueError):
    """An operation received arguments outside its contract"""

    exit_code = 2


class StateError(FBNetError, RuntimeError):
    """Inputs required at this point of the unroll are missing"""


class ConfigError(FBNetError):
    """Invalid or inconsistent configuration"""

    exit_code = 2


class DataError(FBNetError):
    """Unreadable or malformed data files and manifests"""

    exit_code = 3


class ParseError(DataError):
    """A point file line could not be parsed"""

    def __init__(self, path, line_number: int, message: str):
        self.path = str(path)
        self.line_number = line_number
        super().__init__(f"{self.path}: line {line_number}: {message}")


class CheckpointError(FBNetError):
    """Checkpoint missing, corrupt or of another version"""

    exit_code = 4
