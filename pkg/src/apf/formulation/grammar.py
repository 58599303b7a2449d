"""Text form of the formulation IR.

One item per line::

    [name:] objective (maximize|minimize) <expr>
    [name:] constraint <agg> (>=|<=) <real>
    [name:] constraint <expr> < 0

where ``<agg>`` is ``min|max|mean(<metric> in [<lo>, <hi>])`` and ``<expr>``
additionally allows ``-<expr>``, ``(<expr> - <expr>)`` and real literals.
Blank lines and ``#`` comments are skipped.

The sugar forms compile at parse time: ``maximize e`` becomes ``Neg(e)``,
``agg >= t`` becomes ``Sub(Const(t), agg)`` and ``agg <= t`` becomes
``Sub(agg, Const(t))``. The printer emits the sugar whenever the tree has
that shape, so ``parse(print(f)) == f`` for every valid formulation.
"""

from __future__ import annotations

import re

from apf.errors import FormulationSyntaxError, InvariantError
from apf.formulation.types import (
    Agg,
    Band,
    Const,
    Expr,
    Formulation,
    FormulationItem,
    ItemKind,
    Neg,
    Sub,
    default_item_name,
    format_real,
)

_NUMBER_RE = re.compile(r"-?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?")
_IDENT_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_AGG_OPS = ("min", "max", "mean")


class _LineParser:
    def __init__(self, text: str, lineno: int):
        self.text = text
        self.lineno = lineno
        self.pos = 0

    def error(self, message: str, pos: int | None = None) -> FormulationSyntaxError:
        col = (self.pos if pos is None else pos) + 1
        return FormulationSyntaxError(message, self.lineno, col)

    def skip_ws(self):
        while self.pos < len(self.text) and self.text[self.pos] in " \t":
            self.pos += 1

    def peek(self) -> str:
        self.skip_ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def at_end(self) -> bool:
        return self.peek() == ""

    def expect(self, token: str):
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            found = self.text[self.pos:self.pos + 12] or "end of line"
            raise self.error(f"expected {token!r}, found {found!r}")
        self.pos += len(token)

    def ident(self) -> str:
        self.skip_ws()
        m = _IDENT_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected an identifier")
        self.pos = m.end()
        return m.group()

    def keyword(self, *options: str) -> str:
        self.skip_ws()
        start = self.pos
        word = self.ident()
        if word not in options:
            raise self.error(f"expected one of {', '.join(options)}, found {word!r}", start)
        return word

    def number(self) -> float:
        self.skip_ws()
        m = _NUMBER_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a real number")
        self.pos = m.end()
        return float(m.group())

    def agg(self) -> Agg:
        self.skip_ws()
        start = self.pos
        op = self.keyword(*_AGG_OPS)
        self.expect("(")
        self.skip_ws()
        metric_pos = self.pos
        metric = self.ident()
        if metric == "in":
            raise self.error("missing metric name", metric_pos)
        self.keyword("in")
        self.expect("[")
        lo = self.number()
        self.expect(",")
        hi = self.number()
        self.expect("]")
        self.expect(")")
        try:
            return Agg(op, metric, Band(lo, hi))
        except InvariantError as exc:
            raise InvariantError(f"line {self.lineno}, column {start + 1}: {exc}") from None

    def expr(self) -> Expr:
        c = self.peek()
        nxt = self.text[self.pos + 1:self.pos + 2]
        if c == "-" and (nxt.isdigit() or nxt == "."):
            return Const(self.number())
        if c.isdigit() or c == ".":
            return Const(self.number())
        if c == "-":
            self.pos += 1
            return Neg(self.expr())
        if c == "(":
            self.pos += 1
            left = self.expr()
            if self.peek() == ")":
                self.pos += 1
                return left
            self.expect("-")
            right = self.expr()
            self.expect(")")
            return Sub(left, right)
        if c == "":
            raise self.error("unexpected end of line")
        return self.agg()

    def item(self, counts: dict) -> FormulationItem:
        self.skip_ws()
        name = None
        m = _IDENT_RE.match(self.text, self.pos)
        if m and self.text[m.end():].lstrip().startswith(":"):
            name = m.group()
            self.pos = m.end()
            self.expect(":")
        kind = ItemKind(self.keyword("objective", "constraint"))
        if kind is ItemKind.OBJECTIVE:
            direction = self.keyword("maximize", "minimize")
            body = self.expr()
            expr: Expr = Neg(body) if direction == "maximize" else body
        else:
            body_pos = self.pos
            body = self.expr()
            self.skip_ws()
            rest = self.text[self.pos:]
            if rest.startswith(">=") or rest.startswith("<="):
                cmp = rest[:2]
                if not isinstance(body, Agg):
                    raise self.error(f"{cmp!r} form needs a bare aggregate on the left", body_pos)
                self.pos += 2
                limit = Const(self.number())
                expr = Sub(limit, body) if cmp == ">=" else Sub(body, limit)
            elif rest.startswith("<"):
                self.pos += 1
                zero_pos = self.pos
                if self.number() != 0.0:
                    raise self.error("residual form must compare against 0", zero_pos)
                expr = body
            else:
                raise self.error("expected '>=', '<=' or '< 0'")
        if not self.at_end():
            raise self.error("unexpected trailing text")
        counts[kind] += 1
        if name is None:
            name = default_item_name(kind, counts[kind])
        try:
            return FormulationItem(kind, name, expr)
        except InvariantError as exc:
            raise InvariantError(f"line {self.lineno}: {exc}") from None


def parse_formulation(text: str, id: str = "formulation") -> Formulation:
    """Parse IR text into a :class:`Formulation`.

    Raises :class:`FormulationSyntaxError` (with line and column) on bad
    syntax and :class:`InvariantError` when the text is well-formed but
    violates an IR invariant such as ``lo < hi``.
    """
    counts = {ItemKind.OBJECTIVE: 0, ItemKind.CONSTRAINT: 0}
    items = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        items.append(_LineParser(line, lineno).item(counts))
    if not items:
        raise FormulationSyntaxError("no formulation items", 1, 1)
    return Formulation(id, tuple(items))


def parse_item(line: str, kind_ordinal: int = 1) -> FormulationItem:
    """Parse a single item line; unnamed items get the default name for ``kind_ordinal``."""
    if "\n" in line.strip():
        raise FormulationSyntaxError("expected a single item line", 1, 1)
    counts = {ItemKind.OBJECTIVE: kind_ordinal - 1, ItemKind.CONSTRAINT: kind_ordinal - 1}
    return _LineParser(line.split("#", 1)[0], 1).item(counts)


def print_expr(expr: Expr) -> str:
    if isinstance(expr, Const):
        return format_real(expr.value)
    if isinstance(expr, Agg):
        return f"{expr.op.value}({expr.metric} in [{format_real(expr.band.lo)}, {format_real(expr.band.hi)}])"
    if isinstance(expr, Neg):
        if isinstance(expr.child, Const):
            return f"-({print_expr(expr.child)})"
        return "-" + print_expr(expr.child)
    if isinstance(expr, Sub):
        return f"({print_expr(expr.left)} - {print_expr(expr.right)})"
    raise TypeError(f"not an IR node: {expr!r}")


def print_item_body(item: FormulationItem) -> str:
    """The item line without its name prefix."""
    e = item.expr
    if item.kind is ItemKind.OBJECTIVE:
        if isinstance(e, Neg):
            return f"objective maximize {print_expr(e.child)}"
        return f"objective minimize {print_expr(e)}"
    if isinstance(e, Sub):
        if isinstance(e.left, Const) and isinstance(e.right, Agg):
            return f"constraint {print_expr(e.right)} >= {format_real(e.left.value)}"
        if isinstance(e.left, Agg) and isinstance(e.right, Const):
            return f"constraint {print_expr(e.left)} <= {format_real(e.right.value)}"
    return f"constraint {print_expr(e)} < 0"


def print_formulation(f: Formulation) -> str:
    """Canonical text: one line per item, in order, names only where non-default."""
    counts = {ItemKind.OBJECTIVE: 0, ItemKind.CONSTRAINT: 0}
    lines = []
    for item in f.items:
        counts[item.kind] += 1
        body = print_item_body(item)
        if item.name != default_item_name(item.kind, counts[item.kind]):
            body = f"{item.name}: {body}"
        lines.append(body)
    return "\n".join(lines) + "\n"
