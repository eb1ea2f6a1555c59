"""
Exception types raised by the simulation library.
The CLI maps each family to its own exit code.
"""
from typing import Optional


class QPMError(Exception):
    """Base class for every error raised by the qpm package"""

    exit_code = 1


class ConfigError(QPMError, ValueError):
    """Invalid or missing configuration value"""

    exit_code = 2

    def __init__(self, message: str, key_path: Optional[str] = None):
        self.key_path = key_path
        if key_path:
            message = f"{key_path}: {message}"
        super().__init__(message)


class PhysicsDomainError(QPMError, ValueError):
    """Inputs fall outside the regime the model is valid for"""

    exit_code = 3


class ConvergenceError(QPMError, RuntimeError):
    """A numerical solver did not converge or could not bracket a root"""

    exit_code = 4
