"""Compact text form of kernel expressions.

Grammar (whitespace-insensitive)::

    expr   := term ("+" term)*
    term   := factor (("×" | "*") factor)*
    factor := BASE | ("CP" | "CW") "(" expr "," expr ")" | "(" expr ")"
    BASE   := WN | C | CONST | LIN | SE | PER | SM<q>

``describe`` writes constants as ``CONST`` and products with ``×``.  Nested
sums (or products) are parenthesised so that parsing reproduces the exact
tree shape.
"""

from __future__ import annotations

import re

from .kernels import (
    ChangePoint, ChangeWindow, Constant, Kernel, Linear, Periodic, Product,
    SpectralMixture, SquaredExp, Sum, WhiteNoise,
)

__all__ = ["describe", "parse_kernel", "KernelSyntaxError"]

_NAMES = {
    WhiteNoise: "WN", Constant: "CONST", Linear: "LIN",
    SquaredExp: "SE", Periodic: "PER",
}
_BASES = {"WN": WhiteNoise, "C": Constant, "CONST": Constant, "LIN": Linear,
          "SE": SquaredExp, "PER": Periodic}


class KernelSyntaxError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at offset {offset}")
        self.offset = offset


def describe(expr: Kernel) -> str:
    if isinstance(expr, SpectralMixture):
        return f"SM{expr.q}"
    if type(expr) in _NAMES:
        return _NAMES[type(expr)]
    if isinstance(expr, Sum):
        return " + ".join(f"({describe(c)})" if isinstance(c, Sum) else describe(c) for c in expr.terms)
    if isinstance(expr, Product):
        return " × ".join(
            f"({describe(c)})" if isinstance(c, (Sum, Product)) else describe(c) for c in expr.factors
        )
    if isinstance(expr, ChangePoint):
        return f"CP({describe(expr.left)}, {describe(expr.right)})"
    if isinstance(expr, ChangeWindow):
        return f"CW({describe(expr.inner)}, {describe(expr.outer)})"
    raise TypeError(f"not a kernel expression: {expr!r}")


_TOKEN = re.compile(r"\s*(?:(?P<name>[A-Za-z]+\d*)|(?P<op>[+*×(),]))")


def _tokenize(text: str):
    pos, out = 0, []
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if not m:
            start = len(text) - len(text[pos:].lstrip())
            raise KernelSyntaxError(f"unexpected character {text[start]!r}", start)
        kind = "name" if m.group("name") else "op"
        value = m.group(kind)
        out.append((kind, "×" if value == "*" else value, m.start(kind)))
        pos = m.end()
    out.append(("end", "", len(text)))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            what = "end of input" if tok[0] == "end" else repr(tok[1])
            raise KernelSyntaxError(f"expected {value!r}, found {what}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        terms = [self.term()]
        while self.peek()[1] == "+":
            self.take()
            terms.append(self.term())
        return terms[0] if len(terms) == 1 else Sum(tuple(terms))

    def term(self):
        factors = [self.factor()]
        while self.peek()[1] == "×":
            self.take()
            factors.append(self.factor())
        return factors[0] if len(factors) == 1 else Product(tuple(factors))

    def factor(self):
        kind, value, pos = self.take()
        if kind == "op" and value == "(":
            inner = self.expr()
            self.take(")")
            return inner
        if kind != "name":
            what = "end of input" if kind == "end" else repr(value)
            raise KernelSyntaxError(f"expected a kernel, found {what}", pos)
        name = value.upper()
        if name in ("CP", "CW"):
            self.take("(")
            a = self.expr()
            self.take(",")
            b = self.expr()
            self.take(")")
            return ChangePoint(a, b) if name == "CP" else ChangeWindow(a, b)
        if name in _BASES:
            return _BASES[name]()
        m = re.fullmatch(r"SM(\d+)", name)
        if m and int(m.group(1)) >= 1:
            return SpectralMixture(int(m.group(1)))
        raise KernelSyntaxError(f"unknown kernel {value!r}", pos)


def parse_kernel(text: str) -> Kernel:
    p = _Parser(text)
    out = p.expr()
    kind, value, pos = p.peek()
    if kind != "end":
        raise KernelSyntaxError(f"unexpected {value!r}", pos)
    return out
