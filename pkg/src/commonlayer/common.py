from collections import namedtuple
from enum import Enum, auto
import functools
import logging
import os

logging.basicConfig(format="%(asctime)s %(name)s %(levelname)s %(message)s")
logger = logging.getLogger("common")
logger.setLevel(os.environ.get("LOGGING", logging.DEBUG))


ENV_THREADS = "BIFOCUS_THREADS"

RaiseRecord = namedtuple(
    "RaiseRecord", ["k", "residual_pre", "residual_post", "index_n", "index_m"]
)


class Status(Enum):
    SUCCESS = auto()
    CONTRACT_VIOLATION = auto()
    NUMERIC_FAILURE = auto()


EXIT_CODES = {
    Status.SUCCESS: 0,
    Status.CONTRACT_VIOLATION: 2,
    Status.NUMERIC_FAILURE: 3,
}


class BifocusError(Exception):
    pass


class ContractViolationError(BifocusError):
    pass


class DomainError(ContractViolationError):
    pass


class NotATangencyError(ContractViolationError):
    pass


class NumericFailure(BifocusError):
    pass


class ConvergenceError(NumericFailure):
    pass


class DegenerateKError(NumericFailure):
    pass


class IllPosedError(NumericFailure):
    pass


class BranchFlipError(NumericFailure):
    pass


class DivergenceError(NumericFailure):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class SearchExhaustedError(NumericFailure):
    def __init__(self, message, near_miss=None):
        super().__init__(message)
        self.near_miss = near_miss


def status_of(error: Exception) -> Status:
    if isinstance(error, ContractViolationError):
        return Status.CONTRACT_VIOLATION
    return Status.NUMERIC_FAILURE


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(ENV_THREADS, "1")))
    except ValueError:
        logger.warning(f"Ignoring non-numeric {ENV_THREADS}")
        return 1


def notify_run(function):
    @functools.wraps(function)
    def wrapper(*args, **kwargs):
        logger.info(f"'{function.__name__}' - entry.\nArguments: '{args[1:]}'")
        result = function(*args, **kwargs)
        logger.info(f"'{function.__name__}' - exit.\n\nResult: '{result}'")
        return result

    return wrapper
