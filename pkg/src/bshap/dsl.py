"""The model-specification language.

Grammar::

    model  := link ':' expr
    link   := 'logit' | 'identity'
    expr   := literals, feature names, parentheses, + - * / ^,
              exp(a) log(a) logistic(a) min(a,b) max(a,b)

Precedence: ^ binds tighter than unary minus, which binds tighter than
* and /, which bind tighter than + and -. ^ is right-associative, the
rest associate left. Whitespace is insignificant and `#` starts a
comment that runs to the end of the line.

Parsing is total: any input produces either a model or a `ParseError`
carrying a 1-based line and column. The parser is stateless and
reentrant; parsed trees are immutable.

Top-level summands become one component each: a summand that is a
constant times a product of integer feature powers lowers to a
`Polynomial`, anything else stays an `Expression`. This syntactic split
is what the closed-form attribution paths dispatch on.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from . import expr as ex
from .errors import ParseError
from .features import FeatureSpace
from .models import (
    IDENTITY,
    LOGIT,
    MAX_POLY_POWER,
    Component,
    Expression,
    ModelSpec,
    Polynomial,
    Tabulated,
    model_to_json_text,
)

_TOKEN_RE = re.compile(
    r"""
      (?P<skip>[ \t\r]+|\#[^\n]*)
    | (?P<newline>\n)
    | (?P<number>(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?)
    | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
    | (?P<op>[+\-*/^(),:])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | eof
    text: str
    line: int
    column: int  # 1-based start column

    @property
    def end_column(self) -> int:
        return self.column + max(len(self.text), 1) - 1


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(
                f"unexpected character {text[pos]!r}", line, pos - line_start + 1
            )
        kind = m.lastgroup
        if kind == "newline":
            line += 1
            line_start = m.end()
        elif kind != "skip":
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    end_col = len(text) - line_start + 1
    tokens.append(Token("eof", "", line, end_col))
    return tokens


class _Parser:
    """Pratt parser over the token stream."""

    _LBP = {"+": 10, "-": 10, "*": 20, "/": 20, "^": 30}
    _UNARY_MINUS_BP = 25  # between * / and ^

    def __init__(self, tokens: list[Token], space: FeatureSpace | None):
        self.tokens = tokens
        self.pos = 0
        self.space = space

    @property
    def current(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        if tok.kind != "eof":
            self.pos += 1
        return tok

    def _fail(self, message: str, tok: Token | None = None):
        tok = tok or self.current
        if tok.kind == "eof" and self.pos > 0:
            # report EOF errors at the end of the last real token
            prev = self.tokens[self.pos - 1]
            raise ParseError(message, prev.line, prev.end_column)
        raise ParseError(message, tok.line, tok.column)

    def expect_op(self, op: str, message: str):
        tok = self.current
        if tok.kind != "op" or tok.text != op:
            self._fail(message, tok)
        return self.advance()

    def parse_link(self) -> str:
        tok = self.current
        if tok.kind != "ident" or tok.text not in (LOGIT, IDENTITY):
            self._fail("expected link 'logit' or 'identity'", tok)
        self.advance()
        self.expect_op(":", "expected ':' after the link")
        return tok.text

    def parse_expression(self, rbp: int = 0) -> ex.Node:
        left = self._nud()
        while True:
            tok = self.current
            lbp = self._LBP.get(tok.text, 0) if tok.kind == "op" else 0
            if lbp <= rbp:
                return left
            self.advance()
            # ^ is right-associative: parse its right side at lbp - 1
            right = self.parse_expression(lbp - 1 if tok.text == "^" else lbp)
            left = ex.Binary(tok.text, left, right)

    def _nud(self) -> ex.Node:
        tok = self.advance()
        if tok.kind == "number":
            return ex.Const(float(tok.text))
        if tok.kind == "ident":
            return self._ident(tok)
        if tok.kind == "op" and tok.text == "-":
            return ex.Unary("neg", self.parse_expression(self._UNARY_MINUS_BP))
        if tok.kind == "op" and tok.text == "(":
            inner = self.parse_expression(0)
            if self.current.kind != "op" or self.current.text != ")":
                self._fail("unbalanced parenthesis: expected ')'")
            self.advance()
            return inner
        if tok.kind == "eof":
            self._fail("unexpected end of input", tok)
        self._fail(f"unexpected token {tok.text!r}", tok)

    def _ident(self, tok: Token) -> ex.Node:
        name = tok.text
        is_call = self.current.kind == "op" and self.current.text == "("
        if name in ex.UNARY_FUNCTIONS or name in ex.BINARY_FUNCTIONS:
            if not is_call:
                self._fail(f"function {name!r} must be called with '('", tok)
            args = self._call_args(name)
            if name in ex.UNARY_FUNCTIONS:
                if len(args) != 1:
                    self._fail(
                        f"{name} expects 1 argument, got {len(args)}", tok
                    )
                return ex.Unary(name, args[0])
            if len(args) != 2:
                self._fail(f"{name} expects 2 arguments, got {len(args)}", tok)
            return ex.Binary(name, args[0], args[1])
        if is_call:
            self._fail(f"unknown function {name!r}", tok)
        if self.space is not None and name not in self.space.names:
            self._fail(f"unknown identifier {name!r}", tok)
        return ex.Var(name)

    def _call_args(self, name: str) -> list[ex.Node]:
        self.expect_op("(", f"expected '(' after {name}")
        args = [self.parse_expression(0)]
        while self.current.kind == "op" and self.current.text == ",":
            self.advance()
            args.append(self.parse_expression(0))
        if self.current.kind != "op" or self.current.text != ")":
            self._fail("unbalanced parenthesis: expected ')'")
        self.advance()
        return args


def _split_summands(node: ex.Node, negate: bool = False) -> list[tuple[bool, ex.Node]]:
    """Flatten the additive spine into (negated, subtree) summands."""
    if isinstance(node, ex.Binary) and node.op in ("+", "-"):
        left = _split_summands(node.left, negate)
        right = _split_summands(node.right, negate ^ (node.op == "-"))
        return left + right
    if isinstance(node, ex.Unary) and node.op == "neg":
        return _split_summands(node.arg, not negate)
    return [(negate, node)]


def _fold_constant(node: ex.Node) -> float | None:
    """Numeric value of a constant arithmetic subtree, else None."""
    if isinstance(node, ex.Const):
        return node.value
    if isinstance(node, ex.Unary) and node.op == "neg":
        v = _fold_constant(node.arg)
        return None if v is None else -v
    if isinstance(node, ex.Binary) and node.op in ("+", "-", "*", "/", "^"):
        a = _fold_constant(node.left)
        b = _fold_constant(node.right)
        if a is None or b is None:
            return None
        try:
            if node.op == "+":
                return a + b
            if node.op == "-":
                return a - b
            if node.op == "*":
                return a * b
            if node.op == "/":
                return a / b
            return float(a**b)
        except (ZeroDivisionError, OverflowError, ValueError, TypeError):
            return None  # e.g. (-2)^0.5 yields a complex value; keep symbolic
    return None


def _lower_product(node: ex.Node) -> tuple[float, dict[str, int]] | None:
    """(coefficient, powers) if the subtree is a monomial, else None."""
    const = _fold_constant(node)
    if const is not None:
        return const, {}
    if isinstance(node, ex.Var):
        return 1.0, {node.name: 1}
    if isinstance(node, ex.Unary) and node.op == "neg":
        lowered = _lower_product(node.arg)
        if lowered is None:
            return None
        coef, powers = lowered
        return -coef, powers
    if isinstance(node, ex.Binary):
        if node.op == "*":
            left = _lower_product(node.left)
            right = _lower_product(node.right)
            if left is None or right is None:
                return None
            coef = left[0] * right[0]
            powers = dict(left[1])
            for name, p in right[1].items():
                powers[name] = powers.get(name, 0) + p
            return coef, powers
        if node.op == "/":
            left = _lower_product(node.left)
            denom = _fold_constant(node.right)
            if left is None or denom is None or denom == 0.0:
                return None
            return left[0] / denom, left[1]
        if node.op == "^" and isinstance(node.left, ex.Var):
            p = _fold_constant(node.right)
            if p is None or p != int(p) or not 0 <= int(p) <= MAX_POLY_POWER:
                return None
            p = int(p)
            return (1.0, {}) if p == 0 else (1.0, {node.left.name: p})
    return None


def _lower_summand(node: ex.Node, negated: bool) -> Component:
    lowered = _lower_product(node)
    if lowered is not None:
        coef, powers = lowered
        if all(p <= MAX_POLY_POWER for p in powers.values()):
            return Polynomial(
                coefficient=-coef if negated else coef,
                factors=tuple(sorted(powers.items())),
            )
    tree = ex.Unary("neg", node) if negated else node
    return Expression(tree=tree)


def _infer_space(tree: ex.Node) -> FeatureSpace:
    seen: list[str] = []

    def walk(node: ex.Node):
        if isinstance(node, ex.Var):
            if node.name not in seen:
                seen.append(node.name)
        elif isinstance(node, ex.Unary):
            walk(node.arg)
        elif isinstance(node, ex.Binary):
            walk(node.left)
            walk(node.right)

    walk(tree)
    if not seen:
        seen = ["x1"]  # a constant model still needs a schema to live in
    return FeatureSpace(names=tuple(seen))


def parse_expression(text: str, space: FeatureSpace | None = None) -> ex.Node:
    """Parse a bare expression (no link prefix) into a tree."""
    parser = _Parser(_tokenize(text), space)
    tree = parser.parse_expression(0)
    if parser.current.kind != "eof":
        parser._fail(f"unexpected token {parser.current.text!r}")
    return tree


def parse_model_spec(text: str, space: FeatureSpace | None = None) -> ModelSpec:
    """Parse `link ':' expr` into a model.

    When `space` is omitted, the feature space is inferred from the
    identifiers in order of first appearance; when given, unknown
    identifiers are positioned parse errors.
    """
    if not text or not text.strip():
        raise ParseError("empty model specification", 1, 1)
    parser = _Parser(_tokenize(text), space)
    link = parser.parse_link()
    tree = parser.parse_expression(0)
    if parser.current.kind != "eof":
        parser._fail(f"unexpected token {parser.current.text!r}")
    if space is None:
        space = _infer_space(tree)
    components = tuple(
        _lower_summand(node, negated) for negated, node in _split_summands(tree)
    )
    return ModelSpec(link=link, components=components, space=space)


@dataclass(frozen=True)
class InteractionStructure:
    """Which feature subsets the model's additive terms couple."""

    terms: tuple[frozenset[str], ...]
    max_order: int

    def distinct(self) -> tuple[frozenset[str], ...]:
        seen: list[frozenset[str]] = []
        for t in self.terms:
            if t not in seen:
                seen.append(t)
        return tuple(seen)


def term_structure(model: ModelSpec) -> InteractionStructure:
    """One variable subset per additive component (constants dropped).

    `max_order` is the size of the largest subset; 0 for a constant model.
    Features outside every subset are guaranteed inert: no component reads
    them, so perturbing them cannot change the score.
    """
    terms = tuple(c.variables for c in model.components if c.variables)
    max_order = max((len(t) for t in terms), default=0)
    return InteractionStructure(terms=terms, max_order=max_order)


def _polynomial_text(c: Polynomial) -> str:
    parts = [f"{name}^{power}" if power > 1 else name for name, power in c.factors]
    if not parts:
        return repr(c.coefficient)
    if c.coefficient == 1.0:
        return "*".join(parts)
    if c.coefficient == -1.0:
        return "-" + "*".join(parts)
    return "*".join([repr(c.coefficient)] + parts)


def serialize_model_spec(model: ModelSpec) -> str:
    """Render a model back to its textual form.

    Models containing tabulated components cannot be written in the
    expression language; those (and any mix) serialize to the JSON
    document form instead.
    """
    if any(isinstance(c, Tabulated) for c in model.components):
        return model_to_json_text(model)
    parts: list[str] = []
    for c in model.components:
        text = (
            _polynomial_text(c)
            if isinstance(c, Polynomial)
            else ex.to_text(c.tree)
        )
        if not parts:
            parts.append(text)
        elif text.startswith("-"):
            parts.append(f"- {text[1:]}")
        else:
            parts.append(f"+ {text}")
    return f"{model.link}: " + " ".join(parts)


def load_model_text(text: str, space: FeatureSpace | None = None) -> ModelSpec:
    """Load a model from either syntax: JSON documents or DSL text."""
    if text.lstrip().startswith("{"):
        from .models import model_from_json

        return model_from_json(text)
    return parse_model_spec(text, space)
