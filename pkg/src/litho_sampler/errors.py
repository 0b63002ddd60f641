from typing import Iterable, List, Optional


class LithoSamplerError(Exception):
    """Base error: carries where it happened and which clip ids are involved."""
    kind = "internal"

    def __init__(
        self,
        message: str,
        module: str = "",
        operation: str = "",
        ids: Optional[Iterable[int]] = None,
    ):
        super().__init__(message)
        self.message = message
        self.module = module
        self.operation = operation
        self.ids: List[int] = [int(i) for i in ids] if ids is not None else []

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "module": self.module,
            "operation": self.operation,
            "message": self.message,
            "ids": self.ids,
        }


class ConfigError(LithoSamplerError):
    kind = "config"


class DomainError(LithoSamplerError, ValueError):
    kind = "domain"


class TrainingError(LithoSamplerError):
    kind = "training"


class ConsistencyError(LithoSamplerError):
    """A certified invariant failed; points at a solver or eigenvalue bug."""
    kind = "consistency"


class GenerationError(LithoSamplerError):
    kind = "generation"


class OracleError(LithoSamplerError, KeyError):
    kind = "oracle"

    def __str__(self) -> str:
        return self.message


class ArtifactIOError(LithoSamplerError):
    kind = "io"


EXIT_CODES = {"io": 2, "config": 3}


def exit_code_for(kind: str) -> int:
    return EXIT_CODES.get(kind, 1)
