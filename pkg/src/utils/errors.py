from enum import Enum
from typing import Optional


class ErrorCode(str, Enum):
    """Error categories surfaced by library calls and the CLI"""
    INVALID_ARGUMENT = "invalid-argument"
    ALREADY_EXISTS = "already-exists"
    NOT_FOUND = "not-found"
    IO_FAILURE = "io-failure"
    CONFIG_ERROR = "config-error"


class PairTuneError(Exception):
    """Base class for every error raised by the package"""

    code: ErrorCode = ErrorCode.INVALID_ARGUMENT

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message

    def to_dict(self) -> dict:
        return {"code": self.code.value, "message": self.message}


class InvalidArgumentError(PairTuneError, ValueError):
    code = ErrorCode.INVALID_ARGUMENT


class AlreadyExistsError(PairTuneError, ValueError):
    code = ErrorCode.ALREADY_EXISTS


class NotFoundError(PairTuneError, FileNotFoundError):
    code = ErrorCode.NOT_FOUND


class FileIOError(PairTuneError, OSError):
    """I/O failure while reading or writing a file; the message names the path"""
    code = ErrorCode.IO_FAILURE

    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class CheckpointError(FileIOError):
    """Checkpoint file that cannot be written, read or decoded"""


class ConfigError(InvalidArgumentError):
    """Invalid experiment configuration, carrying the offending key"""
    code = ErrorCode.CONFIG_ERROR

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key

    def to_dict(self) -> dict:
        data = super().to_dict()
        if self.key:
            data["key"] = self.key
        return data
