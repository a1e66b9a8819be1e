"""Filter predicates and arithmetic expressions: tokenizer, parsers, evaluators, printers.

Filter grammar (``not`` binds tighter than ``and``, which binds tighter than ``or``)::

    expr    := or
    or      := and ('or' and)*
    and     := not ('and' not)*
    not     := 'not' not | cmp | '(' expr ')'
    cmp     := ident op literal
    op      := '=' | '!=' | '<>' | '<' | '<=' | '>' | '>=' | '≠' | '≤' | '≥'
    literal := quoted text | ['-'] number | 'true' | 'false'

Quoted text of the form ``'YYYY-MM-DD'`` is a date literal.

Arithmetic grammar (used by derive steps and derived dimensions)::

    expr    := term (('+' | '-') term)*
    term    := unary (('*' | '/') unary)*
    unary   := '-' unary | primary
    primary := number | quoted text | ident | ident '(' expr ')' | '(' expr ')'

``date(x)`` is the only function. Aggregate names are rejected outside group-by steps.
"""

from __future__ import annotations

import re
from collections.abc import Mapping
from dataclasses import dataclass
from datetime import date, datetime
from decimal import Decimal
from typing import Any, Optional, Union

from .errors import ExecutionError, ParseError, TypeMismatch
from .values import parse_date, parse_timestamp, quantize, to_decimal

AGGREGATES = ("sum", "count", "min", "max", "avg")
FUNCTIONS = ("date",)
KEYWORDS = ("and", "or", "not", "true", "false")

_OP_ALIASES = {"≠": "!=", "<>": "!=", "≤": "<=", "≥": ">="}
COMPARISON_OPS = ("=", "!=", "<", "<=", ">", ">=")

_DATE_TEXT_RE = re.compile(r"^\d{4}-\d{2}-\d{2}$")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d+)?)
  | (?P<text>'(?:[^'\\]|\\.)*')
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|≠|≤|≥|[=<>])
  | (?P<punct>[()+\-*/,])
    """,
    re.VERBOSE,
)


# --------------------------------------------------------------------------- #
# Tokens
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Token:
    kind: str  # number, text, ident, keyword, op, punct, end
    value: str
    position: int


def tokenize(text: str) -> list[Token]:
    """Split ``text`` into tokens, ending with an ``end`` token at ``len(text)``.

    Raises
    ------
    ParseError
        On a character that starts no token, or an unterminated quote.
    """
    tokens = []
    position = 0
    while position < len(text):
        match = _TOKEN_RE.match(text, position)
        if match is None:
            if text[position] == "'":
                raise ParseError("unterminated quoted text", position, {"closing quote"})
            raise ParseError(f"unexpected character {text[position]!r}", position)
        kind = match.lastgroup or ""
        value = match.group()
        if kind == "ident" and value.lower() in KEYWORDS:
            tokens.append(Token("keyword", value.lower(), position))
        elif kind == "op":
            tokens.append(Token("op", _OP_ALIASES.get(value, value), position))
        elif kind == "text":
            tokens.append(Token("text", re.sub(r"\\(.)", r"\1", value[1:-1]), position))
        elif kind != "ws":
            tokens.append(Token(kind, value, position))
        position = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


# --------------------------------------------------------------------------- #
# Nodes
# --------------------------------------------------------------------------- #
@dataclass(frozen=True)
class Literal:
    """A typed literal; ``kind`` is text, number, date or boolean."""

    kind: str
    value: Any


@dataclass(frozen=True)
class Comparison:
    field: str
    op: str
    literal: Literal


@dataclass(frozen=True)
class And:
    left: FilterExpr
    right: FilterExpr


@dataclass(frozen=True)
class Or:
    left: FilterExpr
    right: FilterExpr


@dataclass(frozen=True)
class Not:
    operand: FilterExpr


FilterExpr = Union[Comparison, And, Or, Not]


@dataclass(frozen=True)
class Number:
    value: Decimal


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class FieldRef:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: Expression


@dataclass(frozen=True)
class BinOp:
    op: str
    left: Expression
    right: Expression


@dataclass(frozen=True)
class Call:
    function: str
    argument: Expression


Expression = Union[Number, Text, FieldRef, Neg, BinOp, Call]


# --------------------------------------------------------------------------- #
# Parser
# --------------------------------------------------------------------------- #
class _Parser:
    """Recursive descent over a token list with one token of look-ahead."""

    def __init__(self, text: str) -> None:
        self.text = text
        self.tokens = tokenize(text)
        self.index = 0

    @property
    def current(self) -> Token:
        return self.tokens[self.index]

    def advance(self) -> Token:
        token = self.current
        if token.kind != "end":
            self.index += 1
        return token

    def at(self, kind: str, value: Optional[str] = None) -> bool:
        token = self.current
        return token.kind == kind and (value is None or token.value == value)

    def fail(self, expected: set[str]) -> ParseError:
        token = self.current
        found = "end of input" if token.kind == "end" else repr(token.value)
        return ParseError(f"unexpected {found}", token.position, expected)

    def expect(self, kind: str, value: Optional[str] = None) -> Token:
        if not self.at(kind, value):
            raise self.fail({value or kind})
        return self.advance()

    def finish(self) -> None:
        if not self.at("end"):
            raise self.fail({"end of input"})

    # Filter grammar ---------------------------------------------------- #
    def filter_or(self) -> FilterExpr:
        node = self.filter_and()
        while self.at("keyword", "or"):
            self.advance()
            node = Or(node, self.filter_and())
        return node

    def filter_and(self) -> FilterExpr:
        node = self.filter_not()
        while self.at("keyword", "and"):
            self.advance()
            node = And(node, self.filter_not())
        return node

    def filter_not(self) -> FilterExpr:
        if self.at("keyword", "not"):
            self.advance()
            return Not(self.filter_not())
        if self.at("punct", "("):
            self.advance()
            node = self.filter_or()
            self.expect("punct", ")")
            return node
        if self.at("ident"):
            name = self.advance().value
            if not self.at("op"):
                raise self.fail(set(COMPARISON_OPS))
            op = self.advance().value
            return Comparison(name, op, self.literal())
        raise self.fail({"identifier", "not", "("})

    def literal(self) -> Literal:
        token = self.current
        if token.kind == "text":
            self.advance()
            if _DATE_TEXT_RE.match(token.value):
                try:
                    return Literal("date", parse_date(token.value))
                except TypeMismatch:
                    pass
            return Literal("text", token.value)
        if token.kind == "number":
            self.advance()
            return Literal("number", Decimal(token.value))
        if token.kind == "punct" and token.value == "-" and self.tokens[self.index + 1].kind == "number":
            self.advance()
            return Literal("number", -Decimal(self.advance().value))
        if token.kind == "keyword" and token.value in ("true", "false"):
            self.advance()
            return Literal("boolean", token.value == "true")
        raise self.fail({"number", "quoted text", "true", "false"})

    # Arithmetic grammar ------------------------------------------------ #
    def expr(self) -> Expression:
        node = self.term()
        while self.at("punct", "+") or self.at("punct", "-"):
            op = self.advance().value
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Expression:
        node = self.unary()
        while self.at("punct", "*") or self.at("punct", "/"):
            op = self.advance().value
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Expression:
        if self.at("punct", "-"):
            self.advance()
            return Neg(self.unary())
        return self.primary()

    def primary(self) -> Expression:
        token = self.current
        if token.kind == "number":
            self.advance()
            return Number(Decimal(token.value))
        if token.kind == "text":
            self.advance()
            return Text(token.value)
        if token.kind == "punct" and token.value == "(":
            self.advance()
            node = self.expr()
            self.expect("punct", ")")
            return node
        if token.kind == "ident":
            self.advance()
            if not self.at("punct", "("):
                return FieldRef(token.value)
            name = token.value.lower()
            if name in AGGREGATES:
                raise ParseError(f"aggregate {name}() is only allowed in group_by steps", token.position)
            if name not in FUNCTIONS:
                raise ParseError(f"unknown function {token.value}()", token.position, set(FUNCTIONS))
            self.advance()
            argument = self.expr()
            self.expect("punct", ")")
            return Call(name, argument)
        raise self.fail({"number", "quoted text", "identifier", "(", "-"})


def parse_filter(text: str) -> FilterExpr:
    """Parse a filter predicate.

    Examples
    --------
    >>> parse_filter("amount >= 0 and region = 'EU'")  # doctest: +ELLIPSIS
    And(left=Comparison(field='amount', op='>=', ...), right=Comparison(field='region', op='=', ...))

    Raises
    ------
    ParseError
        With the failing position and the set of expected tokens.
    """
    parser = _Parser(text)
    node = parser.filter_or()
    parser.finish()
    return node


def parse_expression(text: str) -> Expression:
    """Parse an arithmetic expression such as ``amount * 2`` or ``date(ts)``."""
    parser = _Parser(text)
    node = parser.expr()
    parser.finish()
    return node


# --------------------------------------------------------------------------- #
# Field references
# --------------------------------------------------------------------------- #
def filter_fields(node: FilterExpr) -> set[str]:
    if isinstance(node, Comparison):
        return {node.field}
    if isinstance(node, Not):
        return filter_fields(node.operand)
    return filter_fields(node.left) | filter_fields(node.right)


def expression_fields(node: Expression) -> set[str]:
    if isinstance(node, FieldRef):
        return {node.name}
    if isinstance(node, (Neg, Call)):
        return expression_fields(node.operand if isinstance(node, Neg) else node.argument)
    if isinstance(node, BinOp):
        return expression_fields(node.left) | expression_fields(node.right)
    return set()


def expression_datatype(node: Expression, schema: Mapping[str, str]) -> str:
    """Datatype an expression produces given field datatypes."""
    if isinstance(node, FieldRef):
        return schema[node.name]
    if isinstance(node, Text):
        return "text"
    if isinstance(node, Call):
        return "date"
    return "decimal"


# --------------------------------------------------------------------------- #
# Evaluation
# --------------------------------------------------------------------------- #
def _comparable(value: Any, literal: Literal) -> Optional[tuple[Any, Any]]:
    """Bring a row value and a literal to a common type, or None when incomparable."""
    if literal.kind == "number":
        if isinstance(value, bool):
            return None
        try:
            return to_decimal(value), literal.value
        except TypeMismatch:
            return None
    if literal.kind == "boolean":
        return (value, literal.value) if isinstance(value, bool) else None
    if literal.kind == "date":
        if isinstance(value, datetime):
            return parse_timestamp(value), parse_timestamp(literal.value)
        if isinstance(value, date):
            return value, literal.value
        if isinstance(value, str):
            try:
                if _DATE_TEXT_RE.match(value):
                    return parse_date(value), literal.value
                return parse_timestamp(value), parse_timestamp(literal.value)
            except TypeMismatch:
                return None
        return None
    return (value, literal.value) if isinstance(value, str) else None


def _compare(op: str, left: Any, right: Any) -> bool:
    if op == "=":
        return bool(left == right)
    if op == "!=":
        return bool(left != right)
    if op == "<":
        return bool(left < right)
    if op == "<=":
        return bool(left <= right)
    if op == ">":
        return bool(left > right)
    return bool(left >= right)


def evaluate_filter(node: FilterExpr, row: Mapping[str, Any]) -> Optional[bool]:
    """Three-valued evaluation: True, False, or None (unknown) for missing operands."""
    if isinstance(node, Comparison):
        value = row.get(node.field)
        if value is None:
            return None
        pair = _comparable(value, node.literal)
        if pair is None:
            return None
        return _compare(node.op, pair[0], pair[1])
    if isinstance(node, Not):
        inner = evaluate_filter(node.operand, row)
        return None if inner is None else not inner
    left = evaluate_filter(node.left, row)
    right = evaluate_filter(node.right, row)
    if isinstance(node, And):
        if left is False or right is False:
            return False
        return None if left is None or right is None else True
    if left is True or right is True:
        return True
    return None if left is None or right is None else False


def matches(node: FilterExpr, row: Mapping[str, Any]) -> bool:
    """A row passes a filter only when the predicate is true (unknown rejects)."""
    return evaluate_filter(node, row) is True


def evaluate_expression(node: Expression, row: Mapping[str, Any]) -> Any:
    """Evaluate arithmetic with fixed-point decimals; missing operands yield missing.

    Raises
    ------
    ExecutionError
        On division by zero or arithmetic over non-numeric values.
    """
    if isinstance(node, Number):
        return quantize(node.value)
    if isinstance(node, Text):
        return node.value
    if isinstance(node, FieldRef):
        return row.get(node.name)
    if isinstance(node, Call):
        argument = evaluate_expression(node.argument, row)
        if argument is None:
            return None
        try:
            return parse_timestamp(argument).date()
        except TypeMismatch as exc:
            raise ExecutionError(f"date() of {argument!r}: {exc}") from exc
    if isinstance(node, Neg):
        operand = evaluate_expression(node.operand, row)
        return None if operand is None else -_number(operand)
    left = evaluate_expression(node.left, row)
    right = evaluate_expression(node.right, row)
    if left is None or right is None:
        return None
    a, b = _number(left), _number(right)
    if node.op == "+":
        return quantize(a + b)
    if node.op == "-":
        return quantize(a - b)
    if node.op == "*":
        return quantize(a * b)
    if b == 0:
        raise ExecutionError("division by zero")
    return quantize(a / b)


def _number(value: Any) -> Decimal:
    if isinstance(value, bool):
        raise ExecutionError(f"arithmetic on non-numeric value {value!r}")
    try:
        return to_decimal(value)
    except TypeMismatch as exc:
        raise ExecutionError(f"arithmetic on non-numeric value {value!r}") from exc


# --------------------------------------------------------------------------- #
# Printing
# --------------------------------------------------------------------------- #
def format_literal(literal: Literal) -> str:
    if literal.kind == "text":
        return "'" + str(literal.value).replace("\\", "\\\\").replace("'", "\\'") + "'"
    if literal.kind == "date":
        return f"'{literal.value.isoformat()}'"
    if literal.kind == "boolean":
        return "true" if literal.value else "false"
    return str(literal.value)


def format_filter(node: FilterExpr) -> str:
    """Render a filter with minimal parentheses; ``parse_filter`` reads it back unchanged."""
    if isinstance(node, Comparison):
        return f"{node.field} {node.op} {format_literal(node.literal)}"
    if isinstance(node, Not):
        inner = format_filter(node.operand)
        if isinstance(node.operand, (And, Or)):
            inner = f"({inner})"
        return f"not {inner}"
    keyword = "and" if isinstance(node, And) else "or"
    left = format_filter(node.left)
    right = format_filter(node.right)
    if isinstance(node, And) and isinstance(node.left, Or):
        left = f"({left})"
    if isinstance(node.right, Or) or (isinstance(node, And) and isinstance(node.right, And)):
        right = f"({right})"
    return f"{left} {keyword} {right}"


_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_expression(node: Expression) -> str:
    """Render an arithmetic expression with minimal parentheses (left-associative)."""
    if isinstance(node, Number):
        return str(node.value)
    if isinstance(node, Text):
        return "'" + node.value.replace("\\", "\\\\").replace("'", "\\'") + "'"
    if isinstance(node, FieldRef):
        return node.name
    if isinstance(node, Call):
        return f"{node.function}({format_expression(node.argument)})"
    if isinstance(node, Neg):
        inner = format_expression(node.operand)
        return f"-({inner})" if isinstance(node.operand, BinOp) else f"-{inner}"
    level = _PRECEDENCE[node.op]
    left = format_expression(node.left)
    right = format_expression(node.right)
    if isinstance(node.left, BinOp) and _PRECEDENCE[node.left.op] < level:
        left = f"({left})"
    if isinstance(node.right, BinOp) and _PRECEDENCE[node.right.op] <= level:
        right = f"({right})"
    return f"{left} {node.op} {right}"
