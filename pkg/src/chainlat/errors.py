"""Exception types shared across the package."""

from __future__ import annotations


class ChainlatError(Exception):
    """Base class for every error raised by this package."""


class InvalidChain(ChainlatError):
    """A chain failed structural validation."""

    def __init__(self, violations):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations)
        super().__init__(f"invalid chain: {detail}")


class IncompleteAssignment(ChainlatError):
    """An assignment is missing (task, step) entries or points at unknown candidates."""

    def __init__(self, missing):
        self.missing = list(missing)
        pairs = ", ".join(f"({t}, {s})" for t, s in self.missing)
        super().__init__(f"incomplete assignment for pairs: {pairs}")


class InvalidProbabilities(ChainlatError):
    """Branch arm probabilities are outside (0, 1] or do not sum to one."""


class Unstable(ChainlatError):
    """A station's effective arrival rate reaches or exceeds its service rate.

    Carries the offending station label, the rates, and the utilization so
    callers never have to parse the message.
    """

    def __init__(self, station: str, lambda_eff: float, mu: float):
        self.station = station
        self.lambda_eff = lambda_eff
        self.mu = mu
        self.rho = lambda_eff / mu if mu > 0 else float("inf")
        super().__init__(
            f"unstable station {station}: lambda_eff={lambda_eff:.6g} >= "
            f"mu={mu:.6g} (rho={self.rho:.6g})"
        )


class UnstableModel(Unstable):
    """The simulator refuses to run a model with a saturated station."""


class InvalidConfig(ChainlatError):
    """A simulation configuration value is out of its allowed range."""


class ModelMismatch(ChainlatError):
    """Analytic and simulated results describe different task sets."""


class SearchSpaceTooLarge(ChainlatError):
    """The assignment space exceeds the enumeration cap."""

    def __init__(self, count: int, cap: int):
        self.count = count
        self.cap = cap
        super().__init__(f"search space holds {count} assignments, cap is {cap}")


class NoStableAssignment(ChainlatError):
    """No enumerated assignment keeps every station stable."""


class ParseError(ChainlatError):
    """A chain document is syntactically malformed."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class SemanticError(ChainlatError):
    """A chain document parses but violates model invariants."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("; ".join(str(d) for d in self.diagnostics))
