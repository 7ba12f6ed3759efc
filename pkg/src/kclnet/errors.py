"""Exception hierarchy shared across the package."""

from __future__ import annotations


class KclNetError(Exception):
    """Base class for every error raised by kclnet."""


# -- netlist ---------------------------------------------------------------

class NetlistSyntaxError(KclNetError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column}: {message}")


class ArityError(NetlistSyntaxError):
    pass


class DuplicateIdError(NetlistSyntaxError):
    pass


class UnitError(NetlistSyntaxError):
    pass


# -- graph -----------------------------------------------------------------

class InvalidCircuit(KclNetError):
    def __init__(self, report):
        self.report = report
        codes = ", ".join(i.code for i in report.errors)
        super().__init__(f"circuit failed validation: {codes}")


class NoSource(KclNetError):
    pass


class Disconnected(KclNetError):
    def __init__(self, nodes):
        self.nodes = list(nodes)
        super().__init__(f"nodes unreachable from every voltage source: {self.nodes}")


class CycleDetected(KclNetError):
    pass


class UnknownNode(KclNetError):
    pass


# -- numerics --------------------------------------------------------------

class ShapeMismatch(KclNetError, ValueError):
    pass


class NonFiniteGradient(KclNetError, ArithmeticError):
    pass


class UnassignedDepth(KclNetError):
    pass


class EmptyGraph(KclNetError):
    pass


class TooFewDepths(KclNetError):
    pass


class BatchTooSmall(KclNetError):
    pass


class DimensionError(KclNetError, ValueError):
    pass


class NoWitness(KclNetError):
    pass


class NotNormalized(KclNetError, ValueError):
    pass


class TooManyPairs(KclNetError):
    pass


# -- data / tasks ----------------------------------------------------------

class InvalidTemplateParams(KclNetError, ValueError):
    pass


class NoSpliceSite(KclNetError):
    pass


class ExhaustedEdits(KclNetError):
    pass


class TooFewSamples(KclNetError):
    pass


class LabelOutOfRange(KclNetError, ValueError):
    pass


class EmptyEvaluation(KclNetError):
    pass


class TaskMismatch(KclNetError):
    pass
