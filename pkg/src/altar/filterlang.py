"""Text filter language for run queries.

Grammar (lowest precedence first):

    or    := and ("or" and)*
    and   := unary ("and" unary)*
    unary := "not" unary | "(" or ")" | cmp
    cmp   := path OP literal | path "exists" | path "in" "[" literals "]"

with OP one of `= != < <= > >= ~` (`~` is substring). Paths are dotted
identifiers addressing document fields; literals are numbers, double
quoted strings, `true`, `false`, or `null`. Keywords are matched case
insensitively; reserved words (`and or not in exists true false
null`) cannot start a path.

`parse` builds an AST, `print_filter` renders it back in canonical
form, `evaluate` applies it to a document, and `compile_filter` lowers
the expressible subset to a store-side filter map, falling back to a
client-side `ResidualPredicate` for `or` / `not` / duplicate
conditions.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .docstore import resolve_path, scalar_eq

CMP_OPS = ("=", "!=", "<", "<=", ">", ">=", "~")

RESERVED = frozenset({"and", "or", "not", "in", "exists", "true", "false", "null"})

_OP_TO_FILTER = {
    "=": "$eq",
    "!=": "$ne",
    "<": "$lt",
    "<=": "$lte",
    ">": "$gt",
    ">=": "$gte",
    "~": "$contains",
}

_INT_RE = re.compile(r"-?\d+\Z")
_FLOAT_RE = re.compile(r"-?\d+(\.\d+)?([eE]-?\d+)?\Z")


class FilterSyntaxError(ValueError):
    """Parse failure at a 1-based byte offset, with the token kinds
    that would have been accepted there."""

    def __init__(self, offset: int, expected: list[str], found: str):
        self.offset = offset
        self.expected = sorted(expected)
        self.found = found
        super().__init__(
            f"offset {offset}: expected {' | '.join(self.expected)}, found {found}"
        )


@dataclass(frozen=True)
class Cmp:
    path: str
    op: str  # one of CMP_OPS, "in", "exists"
    value: object


@dataclass(frozen=True)
class Not:
    expr: object


@dataclass(frozen=True)
class And:
    items: tuple


@dataclass(frozen=True)
class Or:
    items: tuple


@dataclass
class ResidualPredicate:
    """Filter that the store cannot run; evaluate it on fetched docs."""

    ast: object

    def __call__(self, doc) -> bool:
        return evaluate(self.ast, doc)


# ---------------------------------------------------------------------------
# Tokenizer

_WORD_RE = re.compile(r"[A-Za-z0-9_-]+")
_SYMBOLS = ("!=", "<=", ">=", "=", "<", ">", "~", "(", ")", "[", "]", ",", ".")


@dataclass(frozen=True)
class _Token:
    kind: str  # "word" | "string" | symbol text | "end"
    text: str
    offset: int  # 1-based byte offset


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos = 0
    byte_offset = 1
    while pos < len(text):
        ch = text[pos]
        if ch in (" ", "\t", "\n", "\r"):
            pos += 1
            byte_offset += 1
            continue
        if ch == '"':
            end = pos + 1
            while end < len(text):
                if text[end] == "\\":
                    end += 2
                    continue
                if text[end] == '"':
                    break
                end += 1
            if end >= len(text):
                raise FilterSyntaxError(byte_offset, ["closing quote"], "end of input")
            raw = text[pos : end + 1]
            try:
                value = json.loads(raw)
            except ValueError:
                raise FilterSyntaxError(byte_offset, ["string literal"], raw) from None
            tokens.append(_Token("string", value, byte_offset))
            byte_offset += len(raw.encode("utf-8"))
            pos = end + 1
            continue
        word = _WORD_RE.match(text, pos)
        if word:
            tokens.append(_Token("word", word.group(), byte_offset))
            byte_offset += len(word.group().encode("utf-8"))
            pos = word.end()
            continue
        for sym in _SYMBOLS:
            if text.startswith(sym, pos):
                tokens.append(_Token(sym, sym, byte_offset))
                byte_offset += len(sym)
                pos += len(sym)
                break
        else:
            raise FilterSyntaxError(byte_offset, ["token"], repr(ch))
    tokens.append(_Token("end", "", byte_offset))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def at_keyword(self, keyword: str) -> bool:
        token = self.peek()
        return token.kind == "word" and token.text.lower() == keyword

    def advance(self) -> _Token:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def fail(self, expected: list[str]):
        token = self.peek()
        found = token.text if token.kind != "end" else "end of input"
        raise FilterSyntaxError(token.offset, expected, found)

    def expect(self, kind: str) -> _Token:
        if self.peek().kind != kind:
            self.fail([f"'{kind}'"])
        return self.advance()

    # -- rules ---------------------------------------------------------------

    def parse_or(self):
        items = [self.parse_and()]
        while self.at_keyword("or"):
            self.advance()
            items.append(self.parse_and())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def parse_and(self):
        items = [self.parse_unary()]
        while self.at_keyword("and"):
            self.advance()
            items.append(self.parse_unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def parse_unary(self):
        if self.at_keyword("not"):
            self.advance()
            return Not(self.parse_unary())
        if self.peek().kind == "(":
            self.advance()
            inner = self.parse_or()
            self.expect(")")
            return inner
        return self.parse_cmp()

    def parse_cmp(self):
        path = self.parse_path()
        token = self.peek()
        if self.at_keyword("exists"):
            self.advance()
            return Cmp(path, "exists", True)
        if self.at_keyword("in"):
            self.advance()
            self.expect("[")
            values = [self.parse_literal()]
            while self.peek().kind == ",":
                self.advance()
                values.append(self.parse_literal())
            self.expect("]")
            return Cmp(path, "in", tuple(values))
        if token.kind in CMP_OPS:
            self.advance()
            return Cmp(path, token.kind, self.parse_literal())
        self.fail(["comparison operator", "'exists'", "'in'"])

    def parse_path(self) -> str:
        token = self.peek()
        if token.kind != "word" or token.text.lower() in RESERVED:
            self.fail(["path"])
        segments = [self.advance().text]
        while self.peek().kind == ".":
            self.advance()
            nxt = self.peek()
            if nxt.kind != "word":
                self.fail(["path segment"])
            segments.append(self.advance().text)
        return ".".join(segments)

    def parse_literal(self):
        token = self.peek()
        if token.kind == "string":
            return self.advance().text
        if token.kind == "word":
            lowered = token.text.lower()
            if lowered == "true":
                self.advance()
                return True
            if lowered == "false":
                self.advance()
                return False
            if lowered == "null":
                self.advance()
                return None
            # Numbers may span tokens: "3" "." "14e-2" is 3.14e-2.
            text = token.text
            if self.tokens[self.pos + 1].kind == ".":
                frac = self.tokens[self.pos + 2]
                if frac.kind == "word":
                    text = f"{token.text}.{frac.text}"
                    if _FLOAT_RE.match(text):
                        self.advance()
                        self.advance()
                        self.advance()
                        return float(text)
            if _INT_RE.match(text):
                self.advance()
                return int(text)
            if _FLOAT_RE.match(text):
                self.advance()
                return float(text)
        self.fail(["literal"])


def parse(text: str):
    """Parse filter text to an AST; raises FilterSyntaxError."""
    parser = _Parser(text)
    ast = parser.parse_or()
    if parser.peek().kind != "end":
        parser.fail(["'and'", "'or'", "end of input"])
    return ast


# ---------------------------------------------------------------------------
# Printer


def _print_literal(value) -> str:
    if value is None:
        return "null"
    if value is True:
        return "true"
    if value is False:
        return "false"
    if isinstance(value, str):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, float):
        # The tokenizer has no "+", so normalize exponents like 1e+22.
        return repr(value).replace("e+", "e")
    return str(value)


def print_filter(ast) -> str:
    """Render an AST back to canonical filter text; parse() inverts it.

    Children that the parser would otherwise flatten or rebind (an Or
    under an And, same-type nesting) are parenthesized, so the printed
    text reparses to the identical tree."""
    if isinstance(ast, Or):
        parts = []
        for item in ast.items:
            text = print_filter(item)
            parts.append(f"({text})" if isinstance(item, Or) else text)
        return " or ".join(parts)
    if isinstance(ast, And):
        parts = []
        for item in ast.items:
            text = print_filter(item)
            parts.append(f"({text})" if isinstance(item, (And, Or)) else text)
        return " and ".join(parts)
    if isinstance(ast, Not):
        inner = print_filter(ast.expr)
        if isinstance(ast.expr, (And, Or)):
            inner = f"({inner})"
        return f"not {inner}"
    if isinstance(ast, Cmp):
        if ast.op == "exists":
            return f"{ast.path} exists"
        if ast.op == "in":
            body = ", ".join(_print_literal(v) for v in ast.value)
            return f"{ast.path} in [{body}]"
        return f"{ast.path} {ast.op} {_print_literal(ast.value)}"
    raise TypeError(f"not a filter node: {ast!r}")


# ---------------------------------------------------------------------------
# Evaluation


def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _cmp_matches(node: Cmp, doc) -> bool:
    found, value = resolve_path(doc, node.path)
    if node.op == "exists":
        return found
    if not found:
        return False
    if node.op == "=":
        return scalar_eq(value, node.value)
    if node.op == "!=":
        return not scalar_eq(value, node.value)
    if node.op == "~":
        return isinstance(value, str) and isinstance(node.value, str) and node.value in value
    if node.op == "in":
        return any(scalar_eq(value, item) for item in node.value)
    both_numbers = _is_number(value) and _is_number(node.value)
    both_strings = isinstance(value, str) and isinstance(node.value, str)
    if not (both_numbers or both_strings):
        return False
    if node.op == "<":
        return value < node.value
    if node.op == "<=":
        return value <= node.value
    if node.op == ">":
        return value > node.value
    if node.op == ">=":
        return value >= node.value
    raise ValueError(f"unknown comparison {node.op!r}")


def evaluate(ast, doc) -> bool:
    """Apply a parsed filter to one document."""
    if isinstance(ast, Or):
        return any(evaluate(item, doc) for item in ast.items)
    if isinstance(ast, And):
        return all(evaluate(item, doc) for item in ast.items)
    if isinstance(ast, Not):
        return not evaluate(ast.expr, doc)
    if isinstance(ast, Cmp):
        return _cmp_matches(ast, doc)
    raise TypeError(f"not a filter node: {ast!r}")


# ---------------------------------------------------------------------------
# Compilation to store-side filters


def compile_filter(ast):
    """Lower an AST to a store filter map when possible.

    A top-level conjunction of comparisons compiles to one map entry
    per path, merging distinct operators ({"$gt": 3, "$lt": 9}); a lone
    equality compiles to its scalar shorthand. Anything else (or, not,
    repeated operators on one path) returns a ResidualPredicate to run
    client-side.
    """
    comparisons = []
    stack = [ast]
    while stack:
        node = stack.pop()
        if isinstance(node, And):
            stack.extend(reversed(node.items))
        elif isinstance(node, Cmp):
            comparisons.append(node)
        else:
            return ResidualPredicate(ast)

    filt: dict[str, dict] = {}
    for node in comparisons:
        if node.op == "exists":
            op, operand = "$exists", True
        elif node.op == "in":
            op, operand = "$in", list(node.value)
        else:
            op, operand = _OP_TO_FILTER[node.op], node.value
        conditions = filt.setdefault(node.path, {})
        if op in conditions:
            return ResidualPredicate(ast)
        conditions[op] = operand

    return {
        path: cond["$eq"] if set(cond) == {"$eq"} else cond
        for path, cond in filt.items()
    }
