"""
Error types shared by the ledger services.

Every error carries a stable upper-case ``code`` so the CLI can report it
as JSON and map it onto an exit status.
"""

from typing import Any, Dict, List, Optional, Tuple


class BBCError(Exception):
    """Base class for all domain errors."""

    code = "BBC_ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)
        self.message = message or self.code

    def to_dict(self) -> Dict[str, Any]:
        return {"success": False, "code": self.code, "error": self.message}


class InvalidValueError(BBCError, ValueError):
    code = "INVALID_VALUE"


class ConfigError(BBCError):
    code = "CONFIG_ERROR"


# Biometric identity

class TemplateRangeError(InvalidValueError):
    code = "TEMPLATE_RANGE"


class ScrambleOverflowError(BBCError, ArithmeticError):
    code = "OVERFLOW"


class KeyMismatchError(BBCError):
    code = "KEY_MISMATCH"


class DuplicateActorError(BBCError):
    code = "DUPLICATE_ACTOR"


class UnknownActorError(BBCError, KeyError):
    code = "UNKNOWN_ACTOR"

    def __str__(self) -> str:
        return self.message


# Ledger

class UnattestedTransactionError(BBCError):
    code = "UNATTESTED_TX"


class EmptyBlockError(BBCError):
    code = "EMPTY_BLOCK"


class ChainFormatError(BBCError):
    """Stored chain bytes could not be decoded."""

    code = "BAD_FORMAT"

    def __init__(self, message: str, block_index: Optional[int] = None):
        super().__init__(message)
        self.block_index = block_index

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["block_index"] = self.block_index
        return data


class TruncatedChainError(ChainFormatError):
    """The data ends before the structure it declares."""

    code = "TRUNCATED"


# Consensus and simulation

class NotMyTurnError(BBCError):
    code = "NOT_MY_TURN"


class NoPendingTransactionsError(BBCError):
    code = "NO_TXS"


class BudgetExceededError(BBCError):
    code = "BUDGET_EXCEEDED"

    def __init__(self, message: str, final_tick: int):
        super().__init__(message)
        self.final_tick = final_tick


class ScenarioError(BBCError):
    code = "BAD_SCENARIO"


# Provenance

class InvalidChainError(BBCError):
    code = "INVALID_CHAIN"


class ItemStageNotFoundError(BBCError):
    code = "NOT_FOUND"


class AmbiguousStageError(BBCError):
    code = "AMBIGUOUS"

    def __init__(self, message: str, candidates: List[Tuple[int, int]]):
        super().__init__(message)
        self.candidates = candidates

    def to_dict(self) -> Dict[str, Any]:
        data = super().to_dict()
        data["candidates"] = [{"height": h, "tx_index": i} for h, i in self.candidates]
        return data


class NotRetailedError(BBCError):
    code = "NOT_RETAILED"
