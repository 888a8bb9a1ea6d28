"""Error types shared by the simulation lab.

Every error carries a ``category``: ``"usage"`` for malformed input
(CLI exit code 2) or ``"numerical"`` for infeasible or singular geometry
(CLI exit code 3).
"""

from __future__ import annotations

from typing import Optional


class CslamError(Exception):
    category = "usage"


class DegenerateDirection(CslamError, ValueError):
    category = "numerical"


class InvalidPath(CslamError, ValueError):
    category = "numerical"


class NoPaths(CslamError, ValueError):
    category = "numerical"


class ShapeMismatch(CslamError, ValueError):
    pass


class EmptyDataset(CslamError, ValueError):
    pass


class InfeasibleDelay(CslamError, ValueError):
    category = "numerical"


class SingularGeometry(CslamError, ValueError):
    category = "numerical"


class DegenerateSegment(CslamError, ValueError):
    category = "numerical"


class NotApplicable(CslamError, ValueError):
    pass


class InvalidScenario(CslamError, ValueError):
    pass


class EmptyMap(CslamError, ValueError):
    pass


class FormatError(CslamError, ValueError):
    """Malformed file. ``line`` is 1-based when known."""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None) -> None:
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class IoError(CslamError, OSError):
    pass
