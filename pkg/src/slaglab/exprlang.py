"""Tiny arithmetic expression language for twist and boundary fields.

Grammar (standard precedence, ^ binds tightest and right-associative):

    expr    := term (("+" | "-") term)*
    term    := factor (("*" | "/") factor)*
    factor  := "-" factor | power
    power   := atom ("^" factor)?
    atom    := NUMBER | "pi" | IDENT "(" expr ")" | VARIABLE | "(" expr ")"

Variables are x1..xn; functions are exp, sin, cos, sqrt, abs, tanh.  Parsing
is total: any input either yields an AST or a SyntaxError carrying the byte
offset and the expected-token set.  Evaluation is deterministic and
vectorised over numpy coordinate arrays.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

FUNCTIONS = {
    "exp": np.exp,
    "sin": np.sin,
    "cos": np.cos,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "tanh": np.tanh,
}

_TOKEN_RE = re.compile(
    r"\s*(?:(?P<number>\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?"
    r"|\d+(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<op>[-+*/^()]))"
)


class ExprSyntaxError(ValueError):
    """Parse failure with the byte offset and what was expected there."""

    def __init__(self, offset: int, expected: str, found: str):
        self.offset = offset
        self.expected = expected
        self.found = found
        super().__init__(
            f"syntax error at offset {offset}: expected {expected}, found {found}"
        )


@dataclass(frozen=True)
class Token:
    kind: str  # number | ident | op | end
    text: str
    offset: int


def tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            bad_at = len(text) - len(stripped)
            raise ExprSyntaxError(bad_at, "a token", repr(text[bad_at]))
        kind = match.lastgroup
        tokens.append(Token(kind, match.group(kind), match.start(kind)))
        pos = match.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


# AST nodes are plain tuples: ("num", v) | ("var", k) | ("neg", a)
# | ("bin", op, a, b) | ("call", name, a)


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = tokenize(text)
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def advance(self) -> Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        tok = self.peek()
        if tok.kind != "op" or tok.text != op:
            raise ExprSyntaxError(tok.offset, repr(op), repr(tok.text or "end"))
        return self.advance()

    def parse(self):
        node = self.expr()
        tok = self.peek()
        if tok.kind != "end":
            raise ExprSyntaxError(
                tok.offset, "end of input", repr(tok.text)
            )
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.advance().text
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.advance().text
            node = ("bin", op, node, self.factor())
        return node

    def factor(self):
        tok = self.peek()
        if tok.kind == "op" and tok.text == "-":
            self.advance()
            return ("neg", self.factor())
        return self.power()

    def power(self):
        base = self.atom()
        tok = self.peek()
        if tok.kind == "op" and tok.text == "^":
            self.advance()
            return ("bin", "^", base, self.factor())  # right-associative
        return base

    def atom(self):
        tok = self.peek()
        if tok.kind == "number":
            self.advance()
            return ("num", float(tok.text))
        if tok.kind == "ident":
            self.advance()
            name = tok.text
            if name == "pi":
                return ("num", math.pi)
            if name in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")")
                return ("call", name, arg)
            var = re.fullmatch(r"x(\d+)", name)
            if var:
                return ("var", int(var.group(1)) - 1)
            raise ExprSyntaxError(
                tok.offset,
                "a variable x1..xn, 'pi' or a function name",
                repr(name),
            )
        if tok.kind == "op" and tok.text == "(":
            self.advance()
            node = self.expr()
            self.expect_op(")")
            return node
        raise ExprSyntaxError(
            tok.offset,
            "a number, variable, function call or '('",
            repr(tok.text or "end"),
        )


@dataclass(frozen=True)
class FExpression:
    """Parsed expression over x1..xn; evaluation broadcasts over coordinate
    arrays of shape (..., n)."""

    text: str
    ast: tuple

    @property
    def max_variable(self) -> int:
        def walk(node):
            tag = node[0]
            if tag == "var":
                return node[1] + 1
            if tag == "num":
                return 0
            if tag == "neg":
                return walk(node[1])
            if tag == "call":
                return walk(node[2])
            return max(walk(node[2]), walk(node[3]))

        return walk(self.ast)

    def __call__(self, coords: np.ndarray):
        coords = np.asarray(coords, dtype=float)
        n = coords.shape[-1]
        if self.max_variable > n:
            raise ValueError(
                f"expression uses x{self.max_variable} but coords have n={n}"
            )

        def ev(node):
            tag = node[0]
            if tag == "num":
                return node[1]
            if tag == "var":
                return coords[..., node[1]]
            if tag == "neg":
                return -ev(node[1])
            if tag == "call":
                return FUNCTIONS[node[1]](ev(node[2]))
            _, op, a, b = node
            va, vb = ev(a), ev(b)
            if op == "+":
                return va + vb
            if op == "-":
                return va - vb
            if op == "*":
                return va * vb
            if op == "/":
                return va / vb
            return np.power(va, vb)

        out = ev(self.ast)
        return np.broadcast_to(np.asarray(out, dtype=float), coords.shape[:-1]).copy()


def parse_expression(text: str) -> FExpression:
    """Parse ``text`` into an FExpression or raise ExprSyntaxError."""
    return FExpression(text=text, ast=_Parser(text).parse())
