"""
Error types - one class per failure kind
Scripts catch CDTError at main() and print a single parseable line
"""

import sys
from typing import Any, Callable, Optional


class CDTError(Exception):
    """Base class for all errors raised by the common package"""


class ConfigError(CDTError, ValueError):
    """Invalid configuration value (bad class mix, lr <= 0, T < 1, variant mismatch)"""


class DatasetParseError(CDTError, ValueError):
    """A dataset/prediction line is not valid JSON"""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class DatasetSchemaError(CDTError, ValueError):
    """A dataset/prediction record is valid JSON but violates the schema"""

    def __init__(self, message: str, line_number: Optional[int] = None, field: Optional[str] = None):
        prefix = f"line {line_number}: " if line_number is not None else ""
        where = f"field '{field}': " if field else ""
        super().__init__(f"{prefix}{where}{message}")
        self.line_number = line_number
        self.field = field


class InputError(CDTError, ValueError):
    """Model input that cannot be encoded (empty agent list, degenerate polyline)"""


class DimensionError(CDTError, ValueError):
    """Shape mismatch inside a layer"""

    def __init__(self, layer: str, message: str):
        super().__init__(f"{layer}: {message}")
        self.layer = layer


class UsageError(CDTError, RuntimeError):
    """API called out of contract (non-scalar loss, double backward, t out of range)"""


class NumericError(CDTError, ArithmeticError):
    """NaN/Inf detected in a named component"""

    def __init__(self, component: str, message: str = "non-finite value"):
        super().__init__(f"{component}: {message}")
        self.component = component


class ModelStateError(CDTError, RuntimeError):
    """Weights missing, unloaded or incompatible with the checkpoint"""


class AssemblyError(CDTError, RuntimeError):
    """ConditionSet used before it was fully assembled"""


class MetricError(CDTError, ValueError):
    """Metric undefined for the given input (K < 2 for ASD, empty drivable area)"""


def format_cli_error(exc: BaseException) -> str:
    """One-line, machine-parsable error message for script exits"""
    text = " ".join(str(exc).split())
    return f"error: {type(exc).__name__}: {text}"


def run_cli(run: Callable[[Any], None], args: Any) -> int:
    """
    Run a script body and map the outcome to an exit code:
    0 on success, 2 for CDTError, 1 for anything unexpected
    """
    try:
        run(args)
    except CDTError as e:
        print(format_cli_error(e), file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        print("error: KeyboardInterrupt: interrupted", file=sys.stderr)
        return 1
    except Exception as e:
        print(format_cli_error(e), file=sys.stderr)
        return 1
    return 0
