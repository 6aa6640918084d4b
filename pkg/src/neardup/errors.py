"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""

from __future__ import annotations


class NearDupError(Exception):
    exit_code = 1


class ConfigError(NearDupError, ValueError):
    """Invalid parameters, inconsistent configuration or an empty input set."""

    exit_code = 2


class IncompatibleRunError(ConfigError):
    """Artifacts produced under different configurations were mixed."""


class StorageError(NearDupError, OSError):
    """I/O failure with the offending path attached."""

    exit_code = 3

    def __init__(self, message: str, path: object = None):
        super().__init__(f"{path}: {message}" if path is not None else message)
        self.path = path


class CorruptFileError(StorageError):
    """A signature or pair file is truncated or has a bad header."""


class PrerequisiteError(NearDupError):
    """A pipeline stage was asked to run before the stage it depends on."""

    exit_code = 4


class ShortDocumentError(NearDupError, ValueError):
    """Document has fewer units than one shingle window."""


class OracleGuardError(ConfigError):
    """All-pairs oracle refused a corpus above its size guard."""
