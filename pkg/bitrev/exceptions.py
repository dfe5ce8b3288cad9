# exceptions.py
"""Domain errors. The CLI maps every BitrevError to exit code 1."""

from __future__ import annotations


class BitrevError(Exception):
    """Root of all domain errors raised by the toolkit."""


class FabricError(BitrevError):
    """Invalid fabric parameters, unknown coordinates or unreadable fabric files."""


class NetlistSyntaxError(BitrevError):
    """Netlist text that does not follow the grammar."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class NetlistValidationError(BitrevError):
    """A netlist that parses but breaks a structural invariant."""


class ToolchainError(BitrevError):
    """The mock vendor toolchain rejected a design."""


class BitstreamFormatError(BitrevError):
    """Malformed, truncated or mismatched bitstream."""


class DatabaseFormatError(BitrevError):
    """Malformed, truncated or wrong-version encoding database file."""


class ReverseError(BitrevError):
    """Phase-1 reversing produced inconsistent observations."""


class ConversionError(BitrevError):
    """Phase-2 conversion hit a state no legal bitstream can produce."""


class ManipulationError(BitrevError):
    """A requested bitstream patch is not applicable."""


class RoutingError(BitrevError):
    """The router could not find a legal route for every net."""


class SimulationError(BitrevError):
    """The netlist cannot be simulated."""


class CombinationalLoopError(SimulationError):
    def __init__(self, cycle: list[str]):
        super().__init__("combinational loop: " + " -> ".join(cycle))
        self.cycle = cycle


class CorrelationError(BitrevError):
    """Key-bit correlation could not assign a chain or failed verification."""


class PayloadError(BitrevError):
    """Trojan payload insertion preconditions not met."""
