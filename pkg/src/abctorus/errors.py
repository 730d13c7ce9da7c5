"""Error type shared by every module, with the CLI exit-code mapping."""

from __future__ import annotations

# exit codes: 2 config error, 3 assertion failure, 4 numeric-mode error
_EXIT = {
    "CONFIG": 2,
    "USAGE": 2,
    "NON_COPRIME": 2,
    "BAD_SIGMA": 2,
    "MISSING_ESTIMATE": 2,
    "INCONSISTENT_PARAMS": 2,
    "NUMERIC_UNDERFLOW": 4,
    "SINGULAR_DERIV": 4,
    "QUADRATURE_UNCONVERGED": 4,
    "OVERFLOW": 4,
}


class AbcError(Exception):
    """An error carrying a stable machine-readable code."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code
        self.message = message

    @property
    def exit_code(self) -> int:
        return _EXIT.get(self.code, 3)
