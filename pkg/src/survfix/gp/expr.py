"""Symbolic expressions: fixed-depth template trees, evaluation, printing, parsing.

A template of depth ``d`` has one slot per position of a complete ternary
tree (``(3**(d+1) - 1) / 2`` slots, children of slot ``i`` at ``3i+1 .. 3i+3``).
Slots below a terminal, and child slots an operator does not use, are inert.
Booleans are encoded as 1.0 / 0.0; any nonzero value counts as true.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from survfix.errors import SurvfixError, UnknownVariableError

DIV_EPS = 1e-6
MAX_ARITY = 3


def _protect(den):
    if np.ndim(den) == 0:
        den = float(den)
        if abs(den) < DIV_EPS:
            return -DIV_EPS if den < 0 else DIV_EPS
        return den
    return np.where(np.abs(den) < DIV_EPS, np.where(den < 0, -DIV_EPS, DIV_EPS), den)


def _as_float(mask):
    if np.ndim(mask) == 0:
        return 1.0 if mask else 0.0
    return mask.astype(float)


def _ite(c, a, b):
    if np.ndim(c) == 0:
        return a if c != 0 else b
    return np.where(c != 0, a, b)


@dataclass(frozen=True)
class Operator:
    name: str
    arity: int
    fn: object
    symbol: str
    precedence: int
    boolean: bool = False


OPERATORS: dict[str, Operator] = {
    op.name: op
    for op in [
        Operator("add", 2, lambda a, b: a + b, "+", 5),
        Operator("sub", 2, lambda a, b: a - b, "-", 5),
        Operator("mul", 2, lambda a, b: a * b, "*", 6),
        Operator("div", 2, lambda a, b: a / _protect(b), "/", 6),
        Operator("lt", 2, lambda a, b: _as_float(a < b), "<", 4, True),
        Operator("ge", 2, lambda a, b: _as_float(a >= b), ">=", 4, True),
        Operator("and", 2, lambda a, b: _as_float((a != 0) & (b != 0)), "and", 2, True),
        Operator("or", 2, lambda a, b: _as_float((a != 0) | (b != 0)), "or", 1, True),
        Operator("not", 1, lambda a: _as_float(a == 0), "not", 3, True),
        Operator("ite", 3, _ite, "If", 10),
    ]
}
OP_NAMES: tuple[str, ...] = tuple(OPERATORS)
N_OPS = len(OP_NAMES)
OP_INDEX = {name: i for i, name in enumerate(OP_NAMES)}
CONST = -1


def template_size(depth: int) -> int:
    return (MAX_ARITY ** (depth + 1) - 1) // (MAX_ARITY - 1)


def slot_level(slot: int) -> int:
    level = 0
    while slot > 0:
        slot = (slot - 1) // MAX_ARITY
        level += 1
    return level


# --------------------------------------------------------------------------- nodes


@dataclass(frozen=True)
class Node:
    """Plain expression tree used for printing, parsing and simplification."""

    kind: str  # "op", "var" or "const"
    op: str | None = None
    children: tuple["Node", ...] = ()
    name: str | None = None
    value: float = 0.0

    @property
    def depth(self) -> int:
        return 1 + max(c.depth for c in self.children) if self.children else 0


def const(value: float) -> Node:
    return Node("const", value=float(value))


def var(name: str) -> Node:
    return Node("var", name=name)


def op(name: str, *children: Node) -> Node:
    if name not in OPERATORS:
        raise SurvfixError(f"unknown operator {name!r}")
    if len(children) != OPERATORS[name].arity:
        raise SurvfixError(f"{name} takes {OPERATORS[name].arity} arguments")
    return Node("op", op=name, children=tuple(children))


# --------------------------------------------------------------------------- template trees


@dataclass
class ExprTree:
    """Heap-layout template genotype.

    ``symbols[i]`` is an operator index (``0 .. N_OPS-1``), ``N_OPS + v`` for
    variable ``variables[v]``, or ``CONST`` with the value in ``constants[i]``.
    """

    depth: int
    symbols: list[int]
    constants: list[float]
    variables: tuple[str, ...] = ()

    def __post_init__(self):
        size = template_size(self.depth)
        if len(self.symbols) != size or len(self.constants) != size:
            raise SurvfixError(f"depth-{self.depth} template needs {size} slots")
        self.variables = tuple(self.variables)

    def copy(self) -> "ExprTree":
        return ExprTree(self.depth, list(self.symbols), list(self.constants), self.variables)

    def active_slots(self) -> list[int]:
        """Slots reachable from the root, in pre-order."""
        out = []
        stack = [0]
        sym = self.symbols
        while stack:
            s = stack.pop()
            out.append(s)
            code = sym[s]
            if 0 <= code < N_OPS:
                arity = OPERATORS[OP_NAMES[code]].arity
                base = MAX_ARITY * s
                stack.extend(range(base + arity, base, -1))
        return out

    def referenced_variables(self) -> list[str]:
        seen = []
        for s in self.active_slots():
            code = self.symbols[s]
            if code >= N_OPS:
                name = self.variables[code - N_OPS]
                if name not in seen:
                    seen.append(name)
        return seen

    def to_node(self, slot: int = 0) -> Node:
        code = self.symbols[slot]
        if code == CONST:
            return const(self.constants[slot])
        if code >= N_OPS:
            return var(self.variables[code - N_OPS])
        name = OP_NAMES[code]
        base = MAX_ARITY * slot
        return op(name, *(self.to_node(base + k + 1) for k in range(OPERATORS[name].arity)))

    @classmethod
    def from_node(cls, node: Node, variables: Sequence[str] | None = None, depth: int | None = None) -> "ExprTree":
        if variables is None:
            variables = _collect_vars(node)
        variables = tuple(variables)
        vindex = {v: i for i, v in enumerate(variables)}
        need = node.depth
        depth = need if depth is None else depth
        if depth < need:
            raise SurvfixError(f"expression of depth {need} does not fit a depth-{depth} template")
        size = template_size(depth)
        symbols = [CONST] * size
        constants = [0.0] * size

        def place(n: Node, slot: int):
            if n.kind == "const":
                symbols[slot] = CONST
                constants[slot] = float(n.value)
            elif n.kind == "var":
                if n.name not in vindex:
                    raise UnknownVariableError(f"unknown variable {n.name!r}")
                symbols[slot] = N_OPS + vindex[n.name]
            else:
                symbols[slot] = OP_INDEX[n.op]
                for k, child in enumerate(n.children):
                    place(child, MAX_ARITY * slot + k + 1)

        place(node, 0)
        return cls(depth, symbols, constants, variables)


def _collect_vars(node: Node) -> list[str]:
    out: list[str] = []

    def walk(n: Node):
        if n.kind == "var" and n.name not in out:
            out.append(n.name)
        for c in n.children:
            walk(c)

    walk(node)
    return out


# --------------------------------------------------------------------------- evaluation


def eval_template(symbols: list[int], constants: list[float], columns: Sequence, slot: int = 0):
    """Evaluate a template against per-variable columns (arrays or scalars)."""
    code = symbols[slot]
    if code == CONST:
        return constants[slot]
    if code >= N_OPS:
        return columns[code - N_OPS]
    operator = OPERATORS[OP_NAMES[code]]
    base = MAX_ARITY * slot + 1
    if operator.arity == 2:
        return operator.fn(
            eval_template(symbols, constants, columns, base),
            eval_template(symbols, constants, columns, base + 1),
        )
    if operator.arity == 1:
        return operator.fn(eval_template(symbols, constants, columns, base))
    return operator.fn(
        eval_template(symbols, constants, columns, base),
        eval_template(symbols, constants, columns, base + 1),
        eval_template(symbols, constants, columns, base + 2),
    )


def _resolve(tree: ExprTree | Node) -> ExprTree:
    return tree if isinstance(tree, ExprTree) else ExprTree.from_node(tree)


def evaluate(tree: ExprTree | Node, data) -> np.ndarray:
    """Vectorized evaluation over a DataFrame or a mapping of column arrays."""
    tree = _resolve(tree)
    if hasattr(data, "columns"):
        n = len(data)
    else:
        n = len(next(iter(data.values()))) if len(data) else 1
    columns = []
    used = set(tree.referenced_variables())
    for name in tree.variables:
        if name in used:
            if name not in data:
                raise UnknownVariableError(f"unknown variable {name!r}")
            columns.append(np.asarray(data[name], dtype=float))
        else:
            columns.append(0.0)
    with np.errstate(all="ignore"):
        out = eval_template(tree.symbols, tree.constants, columns)
    return np.broadcast_to(np.asarray(out, dtype=float), (n,)).copy()


def eval_expr(tree: ExprTree | Node, row: Mapping[str, float]) -> float:
    """Evaluate on a single row given as ``{variable: value}``."""
    tree = _resolve(tree)
    used = set(tree.referenced_variables())
    columns = []
    for name in tree.variables:
        if name in used:
            if name not in row:
                raise UnknownVariableError(f"unknown variable {name!r}")
            columns.append(float(row[name]))
        else:
            columns.append(0.0)
    with np.errstate(all="ignore"):
        return float(eval_template(tree.symbols, tree.constants, columns))


def expr_mse(tree: ExprTree | Node, data, target) -> float:
    target = np.asarray(target, dtype=float)
    if target.size == 0:
        raise SurvfixError("empty data")
    pred = evaluate(tree, data)
    with np.errstate(all="ignore"):
        return float(np.mean((pred - target) ** 2))


# --------------------------------------------------------------------------- simplification


def _fold(name: str, values: list[float]) -> float:
    with np.errstate(all="ignore"):
        return float(OPERATORS[name].fn(*values))


def _is_const(n: Node, value: float | None = None) -> bool:
    return n.kind == "const" and (value is None or n.value == value)


def _const_branches(n: Node) -> bool:
    return n.kind == "op" and n.op == "ite" and _is_const(n.children[1]) and _is_const(n.children[2])


def simplify(node: Node) -> Node:
    """Constant folding, identity pruning, ``x - x`` style cancellation and
    constant-branch If pushing.

    Every rewrite is exact under the protected-operator semantics for finite
    inputs, so the simplified tree evaluates to the same values.
    """
    if node.kind != "op":
        return node
    kids = [simplify(c) for c in node.children]
    name = node.op
    if all(_is_const(k) for k in kids):
        return const(_fold(name, [k.value for k in kids]))
    if name == "ite" and _is_const(kids[0]):
        return kids[1] if kids[0].value != 0 else kids[2]
    if len(kids) == 2:
        a, b = kids
        if name in ("sub", "lt", "ge") and node_equal(a, b):
            return const(1.0 if name == "ge" else 0.0)
        if name == "add":
            if _is_const(b, 0.0):
                return a
            if _is_const(a, 0.0):
                return b
        elif name == "sub" and _is_const(b, 0.0):
            return a
        elif name == "mul":
            if _is_const(b, 1.0):
                return a
            if _is_const(a, 1.0):
                return b
            if _is_const(a, 0.0) or _is_const(b, 0.0):
                return const(0.0)
        elif name == "div" and _is_const(b, 1.0):
            return a
        if name in ("add", "sub", "mul", "div"):
            # k (op) If(c, u, v)  ->  If(c, k op u, k op v) for constant u, v
            if _is_const(a) and _const_branches(b):
                c, u, v = b.children
                return op("ite", c, const(_fold(name, [a.value, u.value])), const(_fold(name, [a.value, v.value])))
            if _is_const(b) and _const_branches(a):
                c, u, v = a.children
                return op("ite", c, const(_fold(name, [u.value, b.value])), const(_fold(name, [v.value, b.value])))
    return op(name, *kids)


# --------------------------------------------------------------------------- printing


def _fmt_number(value: float, precision: int | None) -> str:
    if precision is None:
        text = repr(float(value))
    else:
        text = f"{value:.{precision}g}"
    return text


def _prec(n: Node) -> int:
    if n.kind == "op":
        return OPERATORS[n.op].precedence
    return 10


def _render(n: Node, precision: int | None, top: bool = False) -> str:
    if n.kind == "const":
        text = _fmt_number(n.value, precision)
        if text.startswith("-") and not top:
            return f"({text})"
        return text
    if n.kind == "var":
        return n.name
    operator = OPERATORS[n.op]
    if n.op == "ite":
        c, a, b = (_render(k, precision, top=True) for k in n.children)
        return f"If({c}) Then({a}) Else({b})"
    if n.op == "not":
        (child,) = n.children
        inner = _render(child, precision)
        if _prec(child) < operator.precedence:
            inner = f"({inner})"
        return f"not {inner}"
    left, right = n.children
    p = operator.precedence
    ltext = _render(left, precision)
    rtext = _render(right, precision)
    if _prec(left) < p or (operator.boolean and p == 4 and _prec(left) == p):
        ltext = f"({ltext})"
    if _prec(right) <= p:
        rtext = f"({rtext})"
    return f"{ltext} {operator.symbol} {rtext}"


def format_expr(tree: ExprTree | Node, precision: int | None = 3, simplified: bool = True) -> str:
    """Infix rendering with minimal parentheses.

    ``precision`` is the number of significant figures for constants; pass
    ``None`` for a lossless rendering that :func:`parse_expr` inverts exactly.
    """
    node = tree.to_node() if isinstance(tree, ExprTree) else tree
    if simplified:
        node = simplify(node)
    return _render(node, precision, top=True)


# --------------------------------------------------------------------------- parsing

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z0-9_]*)|(?P<sym>>=|<=|[-+*/<>()]))"
)
_KEYWORDS = {"if", "then", "else", "and", "or", "not"}


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m or m.end() == pos:
            raise SurvfixError(f"cannot parse expression at {text[pos:pos + 10]!r}")
        pos = m.end()
        if m.group("num") is not None:
            tokens.append(("num", m.group("num")))
        elif m.group("name") is not None:
            word = m.group("name")
            tokens.append(("kw", word.lower()) if word.lower() in _KEYWORDS else ("name", word))
        else:
            tokens.append(("sym", m.group("sym")))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else ("eof", "")

    def take(self, kind=None, value=None):
        tok = self.peek()
        if (kind and tok[0] != kind) or (value and tok[1] != value):
            raise SurvfixError(f"expected {value or kind}, found {tok[1] or 'end of input'!r}")
        self.pos += 1
        return tok

    def parse(self) -> Node:
        node = self.or_()
        if self.peek()[0] != "eof":
            raise SurvfixError(f"unexpected trailing token {self.peek()[1]!r}")
        return node

    def or_(self):
        node = self.and_()
        while self.peek() == ("kw", "or"):
            self.take()
            node = op("or", node, self.and_())
        return node

    def and_(self):
        node = self.not_()
        while self.peek() == ("kw", "and"):
            self.take()
            node = op("and", node, self.not_())
        return node

    def not_(self):
        if self.peek() == ("kw", "not"):
            self.take()
            return op("not", self.not_())
        return self.cmp()

    def cmp(self):
        node = self.add()
        tok = self.peek()
        if tok[0] == "sym" and tok[1] in ("<", ">=", ">", "<="):
            self.take()
            right = self.add()
            node = {
                "<": lambda: op("lt", node, right),
                ">=": lambda: op("ge", node, right),
                ">": lambda: op("lt", right, node),
                "<=": lambda: op("ge", right, node),
            }[tok[1]]()
        return node

    def add(self):
        node = self.mul()
        while self.peek() in (("sym", "+"), ("sym", "-")):
            _, s = self.take()
            node = op("add" if s == "+" else "sub", node, self.mul())
        return node

    def mul(self):
        node = self.unary()
        while self.peek() in (("sym", "*"), ("sym", "/")):
            _, s = self.take()
            node = op("mul" if s == "*" else "div", node, self.unary())
        return node

    def unary(self):
        if self.peek() == ("sym", "-"):
            self.take()
            inner = self.unary()
            if inner.kind == "const":
                return const(-inner.value)
            return op("sub", const(0.0), inner)
        return self.primary()

    def primary(self):
        kind, value = self.peek()
        if kind == "num":
            self.take()
            return const(float(value))
        if kind == "name":
            self.take()
            return var(value)
        if (kind, value) == ("sym", "("):
            self.take()
            node = self.or_()
            self.take("sym", ")")
            return node
        if (kind, value) == ("kw", "if"):
            parts = []
            for word in ("if", "then", "else"):
                self.take("kw", word)
                self.take("sym", "(")
                parts.append(self.or_())
                self.take("sym", ")")
            return op("ite", *parts)
        raise SurvfixError(f"unexpected token {value or 'end of input'!r}")


def parse_node(text: str) -> Node:
    return _Parser(text).parse()


def parse_expr(text: str, variables: Sequence[str] | None = None, depth: int | None = None) -> ExprTree:
    """Parse an infix expression (the :func:`format_expr` syntax) into a template tree."""
    return ExprTree.from_node(parse_node(text), variables=variables, depth=depth)


def node_equal(a: Node, b: Node) -> bool:
    if a.kind != b.kind:
        return False
    if a.kind == "const":
        return a.value == b.value or (math.isnan(a.value) and math.isnan(b.value))
    if a.kind == "var":
        return a.name == b.name
    return a.op == b.op and all(node_equal(x, y) for x, y in zip(a.children, b.children))
