"""Modeling language: parser, validator, pretty-printer.

The language declares domain classes with plain attributes, relations,
derived formulas, and learned members (a profiling algorithm wired to
input selectors and one output).  Grammar:

    model      := classDecl*
    classDecl  := 'class' IDENT '{' withClause* member* '}'
    withClause := 'with' STRING | 'with' 'resolution' STRING
    member     := 'att' IDENT ':' TYPE
                | 'rel' IDENT ':' IDENT ('[]')?
                | 'dependency' IDENT ':' IDENT
                | 'input' STRING
                | 'output' IDENT ':' TYPE
                | 'derived' IDENT ':' TYPE '=' expr

Whitespace and newlines are insignificant; `//` starts a line comment.
An input string is `"<dependency> | =<expr>"`; the part after the
mandatory `=` is re-lexed with the ordinary expression grammar.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

PRIMITIVE_TYPES = ("Double", "Long", "Bool", "String")

TIME_FUNCTIONS = {"HOURS": 3_600_000, "DAYS": 86_400_000}
SCALAR_FUNCTIONS = ("HOURS", "DAYS", "ABS")
AGGREGATE_FUNCTIONS = ("SUM", "AVG", "MAX")

DURATION_UNIT_MS = {"hour": 3_600_000, "day": 86_400_000, "week": 604_800_000}

MS_PER_HOUR = 3_600_000
MS_PER_DAY = 86_400_000


class DslError(Exception):
    """Raised for misuse of DSL helpers (not for source diagnostics)."""


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    severity: str  # "error" | "warning"
    message: str

    def render(self, filename: str = "<input>") -> str:
        return f"{filename}:{self.line}:{self.col}: {self.severity}: {self.message}"


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class NumberLit:
    value: float
    is_float: bool
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class AttrRef:
    name: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class TimestampRef:
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class BinaryOp:
    op: str  # + - * /
    left: "Expr"
    right: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class FuncCall:
    func: str  # HOURS | DAYS | ABS
    arg: "Expr"
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Aggregate:
    func: str  # SUM | AVG | MAX
    relation: str
    attribute: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


Expr = Union[NumberLit, AttrRef, TimestampRef, BinaryOp, FuncCall, Aggregate]


def print_expr(e: Expr, parent_prec: int = 0) -> str:
    if isinstance(e, NumberLit):
        if e.is_float:
            return repr(e.value)
        return str(int(e.value))
    if isinstance(e, AttrRef):
        return e.name
    if isinstance(e, TimestampRef):
        return "timestamp"
    if isinstance(e, FuncCall):
        return f"{e.func}({print_expr(e.arg)})"
    if isinstance(e, Aggregate):
        return f"{e.func}({e.relation}.{e.attribute})"
    if isinstance(e, BinaryOp):
        prec = 1 if e.op in "+-" else 2
        left = print_expr(e.left, prec)
        # right operand of - and / needs parens at equal precedence
        right = print_expr(e.right, prec + 1)
        text = f"{left} {e.op} {right}"
        if prec < parent_prec:
            return f"({text})"
        return text
    raise DslError(f"unknown expression node {e!r}")


def expr_attr_refs(e: Expr) -> Iterator[AttrRef]:
    """All plain attribute references in an expression (not aggregate targets)."""
    if isinstance(e, AttrRef):
        yield e
    elif isinstance(e, BinaryOp):
        yield from expr_attr_refs(e.left)
        yield from expr_attr_refs(e.right)
    elif isinstance(e, FuncCall):
        yield from expr_attr_refs(e.arg)


def expr_aggregates(e: Expr) -> Iterator[Aggregate]:
    if isinstance(e, Aggregate):
        yield e
    elif isinstance(e, BinaryOp):
        yield from expr_aggregates(e.left)
        yield from expr_aggregates(e.right)
    elif isinstance(e, FuncCall):
        yield from expr_aggregates(e.arg)


def expr_uses_timestamp(e: Expr) -> bool:
    if isinstance(e, TimestampRef):
        return True
    if isinstance(e, BinaryOp):
        return expr_uses_timestamp(e.left) or expr_uses_timestamp(e.right)
    if isinstance(e, FuncCall):
        return expr_uses_timestamp(e.arg)
    return False


# ---------------------------------------------------------------------------
# Model AST


@dataclass(frozen=True)
class DurationLiteral:
    count: int
    unit: str  # hour | day | week

    @property
    def ms(self) -> int:
        return self.count * DURATION_UNIT_MS[self.unit]

    def __str__(self) -> str:
        return f"{self.count}{self.unit}"

    @staticmethod
    def parse(text: str) -> "DurationLiteral":
        i = 0
        while i < len(text) and text[i].isdigit():
            i += 1
        if i == 0:
            raise DslError(f"duration {text!r} must start with a count")
        count = int(text[:i])
        unit = text[i:].rstrip("s")
        if count <= 0 or unit not in DURATION_UNIT_MS:
            raise DslError(f"bad duration literal {text!r}")
        return DurationLiteral(count, unit)


@dataclass(frozen=True)
class Attribute:
    name: str
    type: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Relation:
    name: str
    target: str
    many: bool
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Dependency:
    """Read-only reference to another class, usable by input selectors."""

    name: str
    target: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class InputSelector:
    dependency: str
    expr: Expr

    def __str__(self) -> str:
        return f"{self.dependency} | ={print_expr(self.expr)}"


@dataclass(frozen=True)
class Input:
    selector: InputSelector
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    @property
    def name(self) -> str:  # inputs are anonymous; key by selector text
        return f"input({self.selector})"


@dataclass(frozen=True)
class Output:
    name: str
    type: str
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Derived:
    name: str
    type: str
    expr: Expr
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)


MemberDef = Union[Attribute, Relation, Dependency, Input, Output, Derived]


@dataclass(frozen=True)
class ClassDef:
    name: str
    algorithm: Optional[str]
    resolution: Optional[DurationLiteral]
    members: tuple
    line: int = field(default=0, compare=False)
    col: int = field(default=0, compare=False)

    def members_of(self, kind) -> list:
        return [m for m in self.members if isinstance(m, kind)]

    @property
    def attributes(self) -> list:
        return self.members_of(Attribute)

    @property
    def relations(self) -> list:
        return self.members_of(Relation)

    @property
    def dependencies(self) -> list:
        return self.members_of(Dependency)

    @property
    def inputs(self) -> list:
        return self.members_of(Input)

    @property
    def outputs(self) -> list:
        return self.members_of(Output)

    @property
    def deriveds(self) -> list:
        return self.members_of(Derived)

    def member_named(self, name: str):
        for m in self.members:
            if not isinstance(m, Input) and m.name == name:
                return m
        return None


@dataclass(frozen=True)
class MetaModel:
    classes: tuple

    def class_named(self, name: str) -> Optional[ClassDef]:
        for c in self.classes:
            if c.name == name:
                return c
        return None

    @property
    def class_names(self) -> list:
        return [c.name for c in self.classes]


# ---------------------------------------------------------------------------
# Lexer


_PUNCT = {"{", "}", ":", "=", "+", "-", "*", "/", "(", ")", ".", ",", "|"}


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT NUMBER STRING punct EOF
    text: str
    line: int
    col: int


class _LexError(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


def _lex(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "/" and i + 1 < n and text[i + 1] == "/":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch == '"':
            j = i + 1
            while j < n and text[j] != '"':
                if text[j] == "\n":
                    raise _LexError(Diagnostic(start_line, start_col, "error",
                                               "unterminated string literal"))
                j += 1
            if j >= n:
                raise _LexError(Diagnostic(start_line, start_col, "error",
                                           "unterminated string literal"))
            tokens.append(Token("STRING", text[i + 1:j], start_line, start_col))
            col += j + 1 - i
            i = j + 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot
                                                   and j + 1 < n and text[j + 1].isdigit())):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            tokens.append(Token("NUMBER", text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token("IDENT", text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if ch == "[" and i + 1 < n and text[i + 1] == "]":
            tokens.append(Token("[]", "[]", start_line, start_col))
            i += 2
            col += 2
            continue
        if ch in _PUNCT:
            tokens.append(Token(ch, ch, start_line, start_col))
            i += 1
            col += 1
            continue
        raise _LexError(Diagnostic(start_line, start_col, "error",
                                   f"unexpected character {ch!r}"))
    tokens.append(Token("EOF", "", line, col))
    return tokens


# ---------------------------------------------------------------------------
# Parser


class _ParseError(Exception):
    def __init__(self, diag: Diagnostic):
        self.diag = diag


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def fail(self, tok: Token, msg: str):
        raise _ParseError(Diagnostic(tok.line, tok.col, "error", msg))

    def expect(self, kind: str, what: str) -> Token:
        t = self.peek()
        if t.kind != kind:
            self.fail(t, f"expected {what}, found {t.text or 'end of input'!r}")
        return self.next()

    def expect_kw(self, word: str) -> Token:
        t = self.peek()
        if t.kind != "IDENT" or t.text != word:
            self.fail(t, f"expected {word!r}, found {t.text or 'end of input'!r}")
        return self.next()

    def at_kw(self, word: str) -> bool:
        t = self.peek()
        return t.kind == "IDENT" and t.text == word

    # -- model -------------------------------------------------------------

    def model(self) -> MetaModel:
        classes = []
        while not self.peek().kind == "EOF":
            classes.append(self.class_decl())
        return MetaModel(tuple(classes))

    def class_decl(self) -> ClassDef:
        kw = self.expect_kw("class")
        name = self.expect("IDENT", "class name")
        self.expect("{", "'{'")
        algorithm = None
        resolution = None
        while self.at_kw("with"):
            with_tok = self.next()
            if self.at_kw("resolution"):
                self.next()
                res_tok = self.expect("STRING", "duration string")
                try:
                    resolution = DurationLiteral.parse(res_tok.text)
                except DslError as exc:
                    self.fail(res_tok, str(exc))
            else:
                alg_tok = self.expect("STRING", "algorithm string")
                algorithm = alg_tok.text
            del with_tok
        members = []
        while not self.peek().kind == "}":
            members.append(self.member())
        self.expect("}", "'}'")
        return ClassDef(name.text, algorithm, resolution, tuple(members),
                        line=kw.line, col=kw.col)

    def member(self) -> MemberDef:
        t = self.peek()
        if self.at_kw("att"):
            self.next()
            name = self.expect("IDENT", "attribute name")
            self.expect(":", "':'")
            typ = self.expect("IDENT", "type name")
            return Attribute(name.text, typ.text, line=name.line, col=name.col)
        if self.at_kw("rel"):
            self.next()
            name = self.expect("IDENT", "relation name")
            self.expect(":", "':'")
            target = self.expect("IDENT", "class name")
            many = False
            if self.peek().kind == "[]":
                self.next()
                many = True
            return Relation(name.text, target.text, many, line=name.line, col=name.col)
        if self.at_kw("dependency"):
            self.next()
            name = self.expect("IDENT", "dependency name")
            self.expect(":", "':'")
            target = self.expect("IDENT", "class name")
            return Dependency(name.text, target.text, line=name.line, col=name.col)
        if self.at_kw("input"):
            self.next()
            sel_tok = self.expect("STRING", "input selector string")
            selector = self._parse_selector(sel_tok)
            return Input(selector, line=sel_tok.line, col=sel_tok.col)
        if self.at_kw("output"):
            self.next()
            name = self.expect("IDENT", "output name")
            self.expect(":", "':'")
            typ = self.expect("IDENT", "type name")
            return Output(name.text, typ.text, line=name.line, col=name.col)
        if self.at_kw("derived"):
            self.next()
            name = self.expect("IDENT", "derived member name")
            self.expect(":", "':'")
            typ = self.expect("IDENT", "type name")
            self.expect("=", "'='")
            expr = self.expr()
            return Derived(name.text, typ.text, expr, line=name.line, col=name.col)
        self.fail(t, f"expected a member declaration, found {t.text or 'end of input'!r}")

    def _parse_selector(self, tok: Token) -> InputSelector:
        raw = tok.text
        bar = raw.find("|")
        if bar < 0:
            self.fail(tok, "input selector must be \"<dependency> | =<expr>\"")
        dep = raw[:bar].strip()
        rest = raw[bar + 1:].strip()
        if not dep or not rest.startswith("="):
            self.fail(tok, "input selector must be \"<dependency> | =<expr>\"")
        body = rest[1:]
        try:
            sub_tokens = _lex(body)
        except _LexError as exc:
            self.fail(tok, f"bad selector expression: {exc.diag.message}")
        sub = _Parser(sub_tokens)
        # locations inside a selector string point at the holding string token
        try:
            expr = sub.expr()
        except _ParseError as exc:
            raise _ParseError(Diagnostic(tok.line, tok.col, "error",
                                         f"bad selector expression: {exc.diag.message}"))
        if sub.peek().kind != "EOF":
            self.fail(tok, "trailing input after selector expression")
        return InputSelector(dep, _relocate(expr, tok.line, tok.col))

    # -- expressions -------------------------------------------------------

    def expr(self) -> Expr:
        left = self.term()
        while self.peek().kind in ("+", "-"):
            op = self.next()
            right = self.term()
            left = BinaryOp(op.text, left, right, line=op.line, col=op.col)
        return left

    def term(self) -> Expr:
        left = self.factor()
        while self.peek().kind in ("*", "/"):
            op = self.next()
            right = self.factor()
            left = BinaryOp(op.text, left, right, line=op.line, col=op.col)
        return left

    def factor(self) -> Expr:
        t = self.peek()
        if t.kind == "NUMBER":
            self.next()
            return NumberLit(float(t.text), "." in t.text, line=t.line, col=t.col)
        if t.kind == "(":
            self.next()
            inner = self.expr()
            self.expect(")", "')'")
            return inner
        if t.kind == "-":
            # negative literals only; general unary minus is not in the grammar
            self.next()
            num = self.expect("NUMBER", "number")
            return NumberLit(-float(num.text), "." in num.text, line=t.line, col=t.col)
        if t.kind == "IDENT":
            self.next()
            if t.text == "timestamp":
                return TimestampRef(line=t.line, col=t.col)
            if self.peek().kind == "(":
                return self._call(t)
            return AttrRef(t.text, line=t.line, col=t.col)
        self.fail(t, f"expected an expression, found {t.text or 'end of input'!r}")

    def _call(self, name: Token) -> Expr:
        self.expect("(", "'('")
        if name.text in AGGREGATE_FUNCTIONS:
            rel = self.expect("IDENT", "relation name")
            self.expect(".", "'.'")
            attr = self.expect("IDENT", "attribute name")
            self.expect(")", "')'")
            return Aggregate(name.text, rel.text, attr.text, line=name.line, col=name.col)
        if name.text in SCALAR_FUNCTIONS:
            arg = self.expr()
            self.expect(")", "')'")
            return FuncCall(name.text, arg, line=name.line, col=name.col)
        self.fail(name, f"unknown function {name.text!r}")


def _relocate(e: Expr, line: int, col: int) -> Expr:
    """Re-anchor selector sub-expression locations at the selector string token."""
    kwargs = {"line": line, "col": col}
    if isinstance(e, BinaryOp):
        return BinaryOp(e.op, _relocate(e.left, line, col), _relocate(e.right, line, col), **kwargs)
    if isinstance(e, FuncCall):
        return FuncCall(e.func, _relocate(e.arg, line, col), **kwargs)
    if isinstance(e, NumberLit):
        return NumberLit(e.value, e.is_float, **kwargs)
    if isinstance(e, AttrRef):
        return AttrRef(e.name, **kwargs)
    if isinstance(e, TimestampRef):
        return TimestampRef(**kwargs)
    if isinstance(e, Aggregate):
        return Aggregate(e.func, e.relation, e.attribute, **kwargs)
    return e


def parse_model(text: str) -> tuple[Optional[MetaModel], list[Diagnostic]]:
    """Parse model source. Returns (model, []) or (None, diagnostics)."""
    try:
        tokens = _lex(text)
    except _LexError as exc:
        return None, [exc.diag]
    parser = _Parser(tokens)
    try:
        model = parser.model()
    except _ParseError as exc:
        return None, [exc.diag]
    return model, []


def parse_expr(text: str) -> Expr:
    """Parse a standalone expression (used for scenario metrics)."""
    tokens = _lex(text)
    parser = _Parser(tokens)
    expr = parser.expr()
    if parser.peek().kind != "EOF":
        t = parser.peek()
        raise DslError(f"trailing input in expression at {t.line}:{t.col}")
    return expr


# ---------------------------------------------------------------------------
# Validation


def _numeric(t: str) -> bool:
    return t in ("Double", "Long")


def _expr_type(e: Expr, attr_types: dict, diags: list[Diagnostic]) -> Optional[str]:
    """Type of an expression, or None after reporting a diagnostic."""
    if isinstance(e, NumberLit):
        return "Double" if e.is_float else "Long"
    if isinstance(e, TimestampRef):
        return "Long"
    if isinstance(e, AttrRef):
        t = attr_types.get(e.name)
        if t is None:
            diags.append(Diagnostic(e.line, e.col, "error",
                                    f"unknown attribute {e.name!r} in expression"))
            return None
        if not _numeric(t):
            diags.append(Diagnostic(e.line, e.col, "error",
                                    f"attribute {e.name!r} of type {t} is not numeric"))
            return None
        return t
    if isinstance(e, FuncCall):
        at = _expr_type(e.arg, attr_types, diags)
        if at is None:
            return None
        if e.func in ("HOURS", "DAYS"):
            return "Long"
        return at  # ABS
    if isinstance(e, BinaryOp):
        lt = _expr_type(e.left, attr_types, diags)
        rt = _expr_type(e.right, attr_types, diags)
        if lt is None or rt is None:
            return None
        if lt == "Long" and rt == "Long" and e.op != "/":
            return "Long"
        return "Double"
    if isinstance(e, Aggregate):
        return "Double"  # relation/attribute checked separately
    return None


def validate(model: MetaModel) -> list[Diagnostic]:
    """All semantic checks. Empty result means the model is usable."""
    diags: list[Diagnostic] = []
    seen_classes: dict[str, ClassDef] = {}
    for cls in model.classes:
        if cls.name in seen_classes:
            diags.append(Diagnostic(cls.line, cls.col, "error",
                                    f"duplicate class name {cls.name!r}"))
        else:
            seen_classes[cls.name] = cls

    for cls in model.classes:
        _validate_class(model, cls, diags)

    _check_acyclic(model, diags)
    return diags


def _validate_class(model: MetaModel, cls: ClassDef, diags: list[Diagnostic]):
    names: dict[str, MemberDef] = {}
    for m in cls.members:
        if isinstance(m, Input):
            continue
        if m.name in names:
            diags.append(Diagnostic(m.line, m.col, "error",
                                    f"duplicate member name {m.name!r} in class {cls.name!r}"))
        else:
            names[m.name] = m

    for m in cls.members:
        if isinstance(m, (Attribute, Output, Derived)) and m.type not in PRIMITIVE_TYPES:
            diags.append(Diagnostic(m.line, m.col, "error",
                                    f"unknown primitive type {m.type!r}"))
        if isinstance(m, (Relation, Dependency)) and model.class_named(m.target) is None:
            diags.append(Diagnostic(m.line, m.col, "error",
                                    f"unresolved class {m.target!r} referenced by {m.name!r}"))

    outputs = cls.outputs
    inputs = cls.inputs
    if cls.algorithm is not None:
        if len(outputs) != 1:
            diags.append(Diagnostic(cls.line, cls.col, "error",
                                    f"class {cls.name!r} declares algorithm "
                                    f"{cls.algorithm!r} and must have exactly one output "
                                    f"(found {len(outputs)})"))
        if not inputs:
            diags.append(Diagnostic(cls.line, cls.col, "error",
                                    f"class {cls.name!r} declares algorithm "
                                    f"{cls.algorithm!r} but has no input"))
    else:
        if inputs or outputs:
            diags.append(Diagnostic(cls.line, cls.col, "error",
                                    f"class {cls.name!r} has input/output members "
                                    "but no algorithm clause"))
    if cls.resolution is not None and cls.algorithm is None:
        diags.append(Diagnostic(cls.line, cls.col, "error",
                                f"class {cls.name!r} sets a resolution without an algorithm"))

    own_attr_types = {a.name: a.type for a in cls.attributes}
    own_attr_types.update({d.name: d.type for d in cls.deriveds})

    for inp in inputs:
        sel = inp.selector
        dep = names.get(sel.dependency)
        if not isinstance(dep, (Dependency, Relation)):
            diags.append(Diagnostic(inp.line, inp.col, "error",
                                    f"input selector references unknown dependency "
                                    f"{sel.dependency!r}"))
            continue
        target = model.class_named(dep.target)
        if target is None:
            continue  # unresolved target already reported
        if next(expr_aggregates(sel.expr), None) is not None:
            diags.append(Diagnostic(inp.line, inp.col, "error",
                                    "aggregates are not allowed in input selectors"))
            continue
        target_types = {a.name: a.type for a in target.attributes}
        target_types.update({d.name: d.type for d in target.deriveds})
        _expr_type(sel.expr, target_types, diags)

    for der in cls.deriveds:
        for agg in expr_aggregates(der.expr):
            rel = names.get(agg.relation)
            if not isinstance(rel, Relation) or not rel.many:
                diags.append(Diagnostic(agg.line, agg.col, "error",
                                        f"aggregate over {agg.relation!r} requires a "
                                        f"many-relation of class {cls.name!r}"))
                continue
            target = model.class_named(rel.target)
            if target is None:
                continue
            tm = target.member_named(agg.attribute)
            if not isinstance(tm, (Attribute, Derived, Output)) or not _numeric(tm.type):
                diags.append(Diagnostic(agg.line, agg.col, "error",
                                        f"aggregate target {rel.target}.{agg.attribute} "
                                        "is not a numeric member"))
        et = _expr_type(der.expr, own_attr_types, diags)
        if et is not None and et != der.type and not (et == "Long" and der.type == "Double"):
            diags.append(Diagnostic(der.line, der.col, "error",
                                    f"derived {der.name!r} declared {der.type} but "
                                    f"expression has type {et}"))


@dataclass(frozen=True)
class DependencyEdge:
    """Class-level edge from an input attribute to a derived/learned output.

    `path` is the relation/dependency on the destination class that reaches
    the source class, or None when source and destination are the same node.
    `src[1]` may be "timestamp" for input selectors using the write time.
    """

    src: tuple  # (className, attrName)
    dst: tuple  # (className, outputMemberName)
    path: Optional[str]
    via: MemberDef = field(compare=False)


def class_level_edges(model: MetaModel) -> list:
    edges = []
    for cls in model.classes:
        for der in cls.deriveds:
            for ref in expr_attr_refs(der.expr):
                edges.append(DependencyEdge((cls.name, ref.name), (cls.name, der.name),
                                            None, der))
            for agg in expr_aggregates(der.expr):
                rel = cls.member_named(agg.relation)
                if isinstance(rel, Relation):
                    edges.append(DependencyEdge((rel.target, agg.attribute),
                                                (cls.name, der.name), agg.relation, der))
        if cls.algorithm is not None and len(cls.outputs) == 1:
            out = cls.outputs[0]
            for inp in cls.inputs:
                dep = cls.member_named(inp.selector.dependency)
                if not isinstance(dep, (Dependency, Relation)):
                    continue
                for ref in expr_attr_refs(inp.selector.expr):
                    edges.append(DependencyEdge((dep.target, ref.name),
                                                (cls.name, out.name),
                                                inp.selector.dependency, inp))
                if expr_uses_timestamp(inp.selector.expr):
                    edges.append(DependencyEdge((dep.target, "timestamp"),
                                                (cls.name, out.name),
                                                inp.selector.dependency, inp))
    return edges


def _check_acyclic(model: MetaModel, diags: list[Diagnostic]):
    adj: dict[tuple, list[tuple]] = {}
    locs: dict[tuple, MemberDef] = {}
    for edge in class_level_edges(model):
        adj.setdefault(edge.src, []).append(edge.dst)
        locs[edge.dst] = edge.via
    state: dict[tuple, int] = {}  # 1 = on stack, 2 = done

    def visit(v, stack):
        state[v] = 1
        stack.append(v)
        for w in adj.get(v, ()):
            if state.get(w) == 1:
                cycle = stack[stack.index(w):] + [w]
                names = " -> ".join(f"{c}.{m}" for c, m in cycle)
                member = locs.get(w)
                line = member.line if member is not None else 0
                col = member.col if member is not None else 0
                diags.append(Diagnostic(line, col, "error",
                                        f"dependency cycle: {names}"))
                state[v] = 2
                stack.pop()
                return True
            if state.get(w) is None:
                if visit(w, stack):
                    state[v] = 2
                    stack.pop()
                    return True
        state[v] = 2
        stack.pop()
        return False

    for v in list(adj):
        if state.get(v) is None:
            if visit(v, []):
                break  # one cycle diagnostic is enough


# ---------------------------------------------------------------------------
# Printer


def print_model(model: MetaModel) -> str:
    parts = []
    for cls in model.classes:
        lines = [f"class {cls.name} {{"]
        if cls.algorithm is not None:
            lines.append(f'    with "{cls.algorithm}"')
        if cls.resolution is not None:
            lines.append(f'    with resolution "{cls.resolution}"')
        for m in cls.members:
            if isinstance(m, Attribute):
                lines.append(f"    att {m.name}: {m.type}")
            elif isinstance(m, Relation):
                suffix = "[]" if m.many else ""
                lines.append(f"    rel {m.name}: {m.target}{suffix}")
            elif isinstance(m, Dependency):
                lines.append(f"    dependency {m.name}: {m.target}")
            elif isinstance(m, Input):
                lines.append(f'    input "{m.selector}"')
            elif isinstance(m, Output):
                lines.append(f"    output {m.name}: {m.type}")
            elif isinstance(m, Derived):
                lines.append(f"    derived {m.name}: {m.type} = {print_expr(m.expr)}")
        lines.append("}")
        parts.append("\n".join(lines))
    if not parts:
        return ""
    return "\n\n".join(parts) + "\n"


# ---------------------------------------------------------------------------
# Slots


def context_granularity_ms(context_fn: str) -> int:
    if context_fn not in TIME_FUNCTIONS:
        raise DslError(f"context function must be HOURS or DAYS, got {context_fn!r}")
    return TIME_FUNCTIONS[context_fn]


def slot_count(resolution: DurationLiteral, context_fn: str) -> int:
    """Number of context slots per profile period (e.g. 1week x HOURS -> 168)."""
    gran = context_granularity_ms(context_fn)
    if resolution.ms % gran != 0:
        raise DslError(f"resolution {resolution} is not divisible by {context_fn} granularity")
    count = resolution.ms // gran
    if count < 1:
        raise DslError(f"context {context_fn} is coarser than resolution {resolution}")
    return count


def floor_div_ms(t: int, granularity_ms: int) -> int:
    # int floor division; avoids float precision loss on large timestamps
    return int(t) // granularity_ms
