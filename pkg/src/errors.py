from typing import Optional


class QeiiError(Exception):
    """Base class for every error raised by the evaluation game."""


class KgFormatError(QeiiError, ValueError):
    def __init__(self, path: str, line_no: Optional[int], message: str):
        self.path = path
        self.line_no = line_no
        where = f"{path}:{line_no}" if line_no is not None else path
        super().__init__(f"{where}: {message}")


class EmptyGraphError(QeiiError, ValueError):
    pass


class SamplingError(QeiiError):
    pass


class TrainingDivergenceError(QeiiError, ArithmeticError):
    pass


class UnknownEntityError(QeiiError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown entity"


class EncodingError(QeiiError, ValueError):
    pass


class TunerError(QeiiError):
    pass


class ProtocolError(QeiiError, ValueError):
    pass


class DisclosureError(ProtocolError):
    """An outgoing payload contains a surface form of the sender's graph."""


class ConfigError(QeiiError):
    pass


class StageError(QeiiError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
