"""Exception hierarchy shared by ingestion, simulation and the CLI."""
from __future__ import annotations

from typing import Any, Dict, Optional


class DogeError(Exception):
    """Base class for errors the CLI reports as machine-readable JSON."""

    def context(self) -> Dict[str, Any]:
        return {}


class ConfigError(DogeError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key

    def context(self) -> Dict[str, Any]:
        return {"key": self.key} if self.key else {}


class DatasetError(DogeError):
    """Malformed or missing dataset file, with optional line/column position."""

    def __init__(self, path: str, message: str, line: Optional[int] = None, column: Optional[int] = None):
        self.path = str(path)
        self.line = line
        self.column = column
        self.reason = message
        super().__init__(self._render())

    def _render(self) -> str:
        where = self.path
        if self.line is not None:
            where += f":{self.line}"
            if self.column is not None:
                where += f":{self.column}"
        return f"{where}: {self.reason}"

    def context(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {"path": self.path}
        if self.line is not None:
            out["line"] = self.line
        if self.column is not None:
            out["column"] = self.column
        return out


class SimulationError(DogeError):
    pass


class DegenerateWindowError(DogeError):
    """Fewer than two keyframe pairs with enough co-visible features."""


class ReportError(DogeError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = str(path)

    def context(self) -> Dict[str, Any]:
        return {"path": self.path}
