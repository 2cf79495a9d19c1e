"""Expression trees: the carrier for model terms that are not plain
polynomials or lookup tables.

Nodes are immutable. Evaluation is vectorized over an (N, K) matrix of
points and guards the partial operations (division, log, pow) so a bad
input raises `EvaluationError` instead of propagating NaN/inf.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy.special import expit

from .errors import EvaluationError


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Unary:
    op: str  # neg | exp | log | logistic
    arg: "Node"


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / ^ min max
    left: "Node"
    right: "Node"


Node = Union[Const, Var, Unary, Binary]

UNARY_FUNCTIONS = ("exp", "log", "logistic")
BINARY_FUNCTIONS = ("min", "max")


def variables(node: Node) -> frozenset[str]:
    """Set of feature names the expression depends on."""
    if isinstance(node, Const):
        return frozenset()
    if isinstance(node, Var):
        return frozenset((node.name,))
    if isinstance(node, Unary):
        return variables(node.arg)
    return variables(node.left) | variables(node.right)


def evaluate(node: Node, X: np.ndarray, index_of: dict[str, int]) -> np.ndarray:
    """Evaluate over a batch of rows; returns an (N,) array."""
    if isinstance(node, Const):
        return np.full(X.shape[0], node.value, dtype=np.float64)
    if isinstance(node, Var):
        return X[:, index_of[node.name]]
    if isinstance(node, Unary):
        a = evaluate(node.arg, X, index_of)
        if node.op == "neg":
            return -a
        if node.op == "exp":
            with np.errstate(over="ignore"):
                out = np.exp(a)
            if not np.all(np.isfinite(out)):
                raise EvaluationError("exp overflowed to a non-finite value")
            return out
        if node.op == "log":
            if np.any(a <= 0.0):
                raise EvaluationError("log of a non-positive value")
            return np.log(a)
        if node.op == "logistic":
            return expit(a)
        raise EvaluationError(f"unknown unary operator {node.op!r}")
    a = evaluate(node.left, X, index_of)
    b = evaluate(node.right, X, index_of)
    if node.op == "+":
        return a + b
    if node.op == "-":
        return a - b
    if node.op == "*":
        return a * b
    if node.op == "/":
        if np.any(b == 0.0):
            raise EvaluationError("division by zero")
        return a / b
    if node.op == "^":
        with np.errstate(invalid="ignore", over="ignore", divide="ignore"):
            out = np.power(a, b)
        if not np.all(np.isfinite(out)):
            raise EvaluationError(
                "power produced a non-finite value (negative base with a "
                "fractional exponent, or overflow)"
            )
        return out
    if node.op == "min":
        return np.minimum(a, b)
    if node.op == "max":
        return np.maximum(a, b)
    raise EvaluationError(f"unknown binary operator {node.op!r}")


# Precedence levels used when printing; must agree with the parser.
_PREC_ADD = 1
_PREC_MUL = 2
_PREC_NEG = 3
_PREC_POW = 4
_PREC_ATOM = 5


def _prec(node: Node) -> int:
    if isinstance(node, (Const, Var)):
        if isinstance(node, Const) and node.value < 0:
            return _PREC_NEG
        return _PREC_ATOM
    if isinstance(node, Unary):
        return _PREC_NEG if node.op == "neg" else _PREC_ATOM
    return {"+": _PREC_ADD, "-": _PREC_ADD, "*": _PREC_MUL, "/": _PREC_MUL,
            "^": _PREC_POW}.get(node.op, _PREC_ATOM)


def _wrap(text: str, node_prec: int, needed: int) -> str:
    return f"({text})" if node_prec < needed else text


def to_text(node: Node) -> str:
    """Render back to model-spec syntax (used by the serializer)."""
    if isinstance(node, Const):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Unary):
        if node.op == "neg":
            inner = _wrap(to_text(node.arg), _prec(node.arg), _PREC_NEG)
            return f"-{inner}"
        return f"{node.op}({to_text(node.arg)})"
    if node.op in BINARY_FUNCTIONS:
        return f"{node.op}({to_text(node.left)}, {to_text(node.right)})"
    p = _prec(node)
    left = _wrap(to_text(node.left), _prec(node.left), p + (1 if node.op == "^" else 0))
    # - and / do not associate on the right; ^ associates only on the right
    right_needed = p if node.op == "^" else p + 1
    right = _wrap(to_text(node.right), _prec(node.right), right_needed)
    return f"{left} {node.op} {right}" if node.op in "+-" else f"{left}{node.op}{right}"
