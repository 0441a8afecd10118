"""Concrete syntax for .cpl files.

Grammar sketch: `srv { pat & pat :> body ... }`,
`spwn [local] e`, `e#x`, `e<args>`, `e || e`, `snap e`, `repl e1 e2`, derived
`let`/`letk`/`thunk`/lambdas, `def`/`type` items terminated by `;`, and `//`
line comments. Requests own the angle brackets, so there are no bare `<`/`>`
comparison operators; use `<=`, `>=`, `==`, `!=` or the named lt/gt base ops.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from . import core
from .builtins import is_builtin
from .core import (
    Addr,
    Address,
    AliasT,
    BaseLit,
    BaseOp,
    BaseT,
    Bot,
    DataT,
    Expr,
    ExternalRef,
    If,
    Image,
    ListV,
    MessageValue,
    Par,
    Placement,
    ServerTemplate,
    ServiceRef,
    Snap,
    Spwn,
    SrvBot,
    SrvT,
    SvcT,
    This,
    Top,
    TupleV,
    TypeAbs,
    TypeApp,
    TypeExpr,
    TypeVar,
    UnitT,
    Univ,
    Repl,
    Request,
    ReactionRule,
    JoinPattern,
    ZeroImage,
    is_value,
)
from .errors import Loc, ParseError

KEYWORDS = {
    "srv", "spwn", "local", "snap", "repl", "this", "par", "let", "letk",
    "thunk", "def", "type", "if", "then", "else", "in", "true", "false",
    "zero", "img", "inst", "forall",
}

_RESERVED_TYPE_NAMES = {"Top", "Unit", "Bot", "SrvBot", "Int", "Bool", "Float", "String"}


# ---------------------------------------------------------------------------
# Surface-only nodes
# ---------------------------------------------------------------------------


def _loc_field() -> Loc | None:
    return field(default=None, compare=False, repr=False)  # type: ignore[return-value]


@dataclass(frozen=True)
class SLet(Expr):
    name: str
    ann: Optional[TypeExpr]
    rhs: Expr
    body: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class SLetK(Expr):
    binders: tuple[tuple[str, TypeExpr], ...]  # one, or several (destructuring)
    rhs: Expr
    body: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class SLambda(Expr):
    params: tuple[tuple[str, TypeExpr], ...]
    ret: TypeExpr
    body: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class SApply(Expr):
    fn: Expr
    args: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class SThunk(Expr):
    ann: Optional[TypeExpr]
    body: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Definition:
    name: str
    ann: Optional[TypeExpr]
    rhs: Expr
    loc: Loc | None = None


@dataclass(frozen=True)
class TypeAliasDef:
    name: str
    params: tuple[str, ...]
    rhs: TypeExpr
    loc: Loc | None = None


@dataclass(frozen=True)
class Program:
    aliases: tuple[TypeAliasDef, ...]
    defs: tuple[Definition, ...]
    main: Optional[Expr]


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Token:
    kind: str  # IDENT, INT, FLOAT, STRING, PUNCT, EOF
    text: str
    loc: Loc


_PUNCT2 = (":>", "<=", ">=", "==", "!=", "::", "||", "/\\", "<:", "->")
_PUNCT1 = "{}()[]<>,;:#&+-*/%=.\\@~^!|"


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    i, line, col = 0, 1, 1
    n = len(src)
    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        loc = Loc(line, col)
        if c == '"':
            j = i + 1
            out = []
            while j < n and src[j] != '"':
                if src[j] == "\\" and j + 1 < n:
                    nxt = src[j + 1]
                    out.append({"n": "\n", "t": "\t", '"': '"', "\\": "\\"}.get(nxt, nxt))
                    j += 2
                else:
                    out.append(src[j])
                    j += 1
            if j >= n:
                raise ParseError("unterminated string literal", loc)
            toks.append(Token("STRING", "".join(out), loc))
            col += j + 1 - i
            i = j + 1
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            if j < n and src[j] == "." and j + 1 < n and src[j + 1].isdigit():
                j += 1
                while j < n and src[j].isdigit():
                    j += 1
                toks.append(Token("FLOAT", src[i:j], loc))
            else:
                toks.append(Token("INT", src[i:j], loc))
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] in "_%"):
                j += 1
            toks.append(Token("IDENT", src[i:j], loc))
            col += j - i
            i = j
            continue
        two = src[i : i + 2]
        if two in _PUNCT2:
            toks.append(Token("PUNCT", two, loc))
            i += 2
            col += 2
            continue
        if c in _PUNCT1:
            toks.append(Token("PUNCT", c, loc))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", loc)
    toks.append(Token("EOF", "", Loc(line, col)))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Parser:
    def __init__(self, src: str):
        self.toks = tokenize(src)
        self.pos = 0

    # token helpers --------------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def at(self, text: str, ahead: int = 0) -> bool:
        t = self.peek(ahead)
        return t.text == text and t.kind in ("PUNCT", "IDENT")

    def at_kind(self, kind: str) -> bool:
        return self.peek().kind == kind

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "EOF":
            self.pos += 1
        return t

    def expect(self, text: str) -> Token:
        t = self.peek()
        if t.text != text or t.kind == "EOF":
            raise ParseError(f"expected {text!r}, found {t.text!r}", t.loc)
        return self.next()

    def ident(self, what: str = "identifier") -> Token:
        t = self.peek()
        if t.kind != "IDENT" or t.text in KEYWORDS:
            raise ParseError(f"expected {what}, found {t.text!r}", t.loc)
        return self.next()

    def service_name(self) -> Token:
        # Service names live in their own namespace; keywords are permitted
        # (desugared wrappers use services named let/k).
        t = self.peek()
        if t.kind != "IDENT":
            raise ParseError(f"expected a service name, found {t.text!r}", t.loc)
        return self.next()

    # program --------------------------------------------------------------

    def program(self) -> Program:
        aliases: list[TypeAliasDef] = []
        defs: list[Definition] = []
        while True:
            if self.at("def"):
                loc = self.next().loc
                name = self.ident("definition name").text
                ann = None
                if self.at(":"):
                    self.next()
                    ann = self.type_expr()
                self.expect("=")
                rhs = self.expr()
                self.expect(";")
                defs.append(Definition(name, ann, rhs, loc))
            elif self.at("type"):
                loc = self.next().loc
                name = self.ident("type alias name").text
                params: list[str] = []
                if self.at("["):
                    self.next()
                    while not self.at("]"):
                        params.append(self.ident("type parameter").text)
                        if not self.at("]"):
                            self.expect(",")
                    self.expect("]")
                self.expect("=")
                rhs = self.type_expr()
                self.expect(";")
                aliases.append(TypeAliasDef(name, tuple(params), rhs, loc))
            else:
                break
        main: Optional[Expr] = None
        if not self.at_kind("EOF"):
            main = self.expr()
            t = self.peek()
            if t.kind != "EOF":
                raise ParseError(f"unexpected {t.text!r} after main expression", t.loc)
        return Program(tuple(aliases), tuple(defs), main)

    # expressions ----------------------------------------------------------

    def expr(self) -> Expr:
        return self.par_expr()

    def par_expr(self) -> Expr:
        first = self.cmp_expr()
        if not (self.at("||")):
            return first
        parts = [first]
        while self.at("||"):
            self.next()
            parts.append(self.cmp_expr())
        # No flattening here: `(a || b) || c` stays nested so parsing is the
        # exact inverse of pretty-printing. Rule Par flattens at run time.
        return Par(tuple(parts), loc=getattr(parts[0], "loc", None))

    _CMP = {"==": "eq", "!=": "neq", "<=": "le", ">=": "ge"}

    def cmp_expr(self) -> Expr:
        left = self.cons_expr()
        t = self.peek()
        if t.kind == "PUNCT" and t.text in self._CMP:
            self.next()
            right = self.cons_expr()
            return BaseOp(self._CMP[t.text], (left, right), loc=t.loc)
        return left

    def cons_expr(self) -> Expr:
        left = self.add_expr()
        if self.at("::"):
            loc = self.next().loc
            right = self.cons_expr()
            return BaseOp("cons", (left, right), loc=loc)
        return left

    def add_expr(self) -> Expr:
        left = self.mul_expr()
        while self.peek().kind == "PUNCT" and self.peek().text in ("+", "-"):
            op = self.next()
            right = self.mul_expr()
            left = BaseOp("add" if op.text == "+" else "sub", (left, right), loc=op.loc)
        return left

    def mul_expr(self) -> Expr:
        left = self.prefix_expr()
        while self.peek().kind == "PUNCT" and self.peek().text in ("*", "/", "%"):
            op = self.next()
            right = self.prefix_expr()
            name = {"*": "mul", "/": "div", "%": "mod"}[op.text]
            left = BaseOp(name, (left, right), loc=op.loc)
        return left

    def prefix_expr(self) -> Expr:
        t = self.peek()
        if self.at("spwn"):
            loc = self.next().loc
            placement = Placement.REMOTE
            if self.at("local"):
                self.next()
                placement = Placement.LOCAL
            return Spwn(self.prefix_expr(), placement, loc=loc)
        if self.at("snap"):
            loc = self.next().loc
            return Snap(self.prefix_expr(), loc=loc)
        if self.at("repl"):
            loc = self.next().loc
            target = self.postfix_expr()
            image = self.postfix_expr()
            return Repl(target, image, loc=loc)
        if self.at("thunk"):
            loc = self.next().loc
            ann = None
            if self.at("["):
                self.next()
                ann = self.type_expr()
                self.expect("]")
            body = self.cmp_expr()
            return SThunk(ann, body, loc=loc)
        if self.at("if"):
            loc = self.next().loc
            cond = self.par_expr()
            self.expect("then")
            then = self.par_expr()
            self.expect("else")
            orelse = self.cmp_expr()
            return If(cond, then, orelse, loc=loc)
        if self.at("let"):
            return self.let_expr()
        if self.at("letk"):
            return self.letk_expr()
        if self.at("\\"):
            return self.lambda_expr()
        if self.at("/\\"):
            loc = self.next().loc
            var = self.ident("type variable").text
            bound: TypeExpr = Top()
            if self.at("<:"):
                self.next()
                bound = self.type_expr()
            self.expect(".")
            body = self.par_expr()
            return TypeAbs(var, bound, body, loc=loc)
        if t.kind == "PUNCT" and t.text == "-":
            loc = self.next().loc
            operand = self.prefix_expr()
            if (
                isinstance(operand, BaseLit)
                and isinstance(operand.value, (int, float))
                and not isinstance(operand.value, bool)
            ):
                return BaseLit(-operand.value, loc=loc)
            return BaseOp("sub", (BaseLit(0, loc=loc), operand), loc=loc)
        return self.postfix_expr()

    def let_expr(self) -> Expr:
        loc = self.next().loc
        name = self.ident("binder").text
        ann = None
        if self.at(":"):
            self.next()
            ann = self.type_expr()
        self.expect("=")
        rhs = self.par_expr()
        self.expect("in")
        body = self.par_expr()
        return SLet(name, ann, rhs, body, loc=loc)

    def letk_expr(self) -> Expr:
        loc = self.next().loc
        binders: list[tuple[str, TypeExpr]] = []
        if self.at("("):
            self.next()
            while True:
                n = self.ident("binder").text
                self.expect(":")
                binders.append((n, self.type_expr()))
                if self.at(")"):
                    break
                self.expect(",")
            self.expect(")")
        else:
            n = self.ident("binder").text
            self.expect(":")
            binders.append((n, self.type_expr()))
        self.expect("=")
        rhs = self.par_expr()
        self.expect("in")
        body = self.par_expr()
        return SLetK(tuple(binders), rhs, body, loc=loc)

    def lambda_expr(self) -> Expr:
        loc = self.next().loc
        self.expect("(")
        params: list[tuple[str, TypeExpr]] = []
        while not self.at(")"):
            n = self.ident("parameter").text
            self.expect(":")
            params.append((n, self.type_expr()))
            if not self.at(")"):
                self.expect(",")
        self.expect(")")
        self.expect("->")
        ret = self.type_expr()
        self.expect(".")
        body = self.par_expr()
        return SLambda(tuple(params), ret, body, loc=loc)

    def postfix_expr(self) -> Expr:
        # Call syntax `f(args)` only attaches to unparenthesized variables
        # and call chains, so juxtaposed operands (repl e1 e2) never swallow
        # a parenthesized neighbour.
        grouped = self.at("(")
        e = self.atom()
        callable_head = isinstance(e, core.Var) and not grouped
        while True:
            t = self.peek()
            if t.kind != "PUNCT":
                break
            if t.text == "#":
                self.next()
                svc = self.service_name().text
                e = ServiceRef(e, svc, loc=t.loc)
                callable_head = False
            elif t.text == "<":
                self.next()
                args: list[Expr] = []
                while not self.at(">"):
                    args.append(self.par_expr())
                    if not self.at(">"):
                        self.expect(",")
                self.expect(">")
                e = Request(e, tuple(args), loc=t.loc)
                callable_head = False
            elif t.text == "[":
                self.next()
                ty = self.type_expr()
                self.expect("]")
                e = TypeApp(e, ty, loc=t.loc)
                callable_head = False
            elif t.text == "(" and callable_head:
                self.next()
                args = []
                while not self.at(")"):
                    args.append(self.par_expr())
                    if not self.at(")"):
                        self.expect(",")
                self.expect(")")
                if isinstance(e, core.Var) and is_builtin(e.name):
                    e = BaseOp(e.name, tuple(args), loc=t.loc)
                else:
                    e = SApply(e, tuple(args), loc=t.loc)
            else:
                break
        return e

    def atom(self) -> Expr:
        t = self.peek()
        if t.kind == "INT":
            self.next()
            return BaseLit(int(t.text), loc=t.loc)
        if t.kind == "FLOAT":
            self.next()
            return BaseLit(float(t.text), loc=t.loc)
        if t.kind == "STRING":
            self.next()
            return BaseLit(t.text, loc=t.loc)
        if self.at("true"):
            self.next()
            return BaseLit(True, loc=t.loc)
        if self.at("false"):
            self.next()
            return BaseLit(False, loc=t.loc)
        if self.at("this"):
            self.next()
            return This(loc=t.loc)
        if self.at("zero"):
            self.next()
            return ZeroImage(loc=t.loc)
        if self.at("par"):
            self.next()
            if self.at("("):
                self.next()
                items: list[Expr] = []
                while not self.at(")"):
                    items.append(self.par_expr())
                    if not self.at(")"):
                        self.expect(",")
                self.expect(")")
                return Par(tuple(items), loc=t.loc)
            return Par((), loc=t.loc)
        if self.at("srv"):
            return self.template()
        if self.at("img"):
            self.next()
            self.expect("(")
            tmpl = self.par_expr()
            self.expect(",")
            buf = self.message_list()
            self.expect(")")
            return Image(tmpl, buf, loc=t.loc)
        if self.at("^"):
            self.next()
            name = self.ident("external service name").text
            return ExternalRef(name, loc=t.loc)
        if self.at("@"):
            self.next()
            local = False
            if self.at("~"):
                self.next()
                local = True
            num = self.peek()
            if num.kind != "INT":
                raise ParseError("expected address number after @", num.loc)
            self.next()
            placement = Placement.LOCAL if local else Placement.REMOTE
            return Addr(Address(int(num.text), placement), loc=t.loc)
        if self.at("["):
            self.next()
            items = []
            while not self.at("]"):
                items.append(self.par_expr())
                if not self.at("]"):
                    self.expect(",")
            self.expect("]")
            return ListV(tuple(items), loc=t.loc)
        if self.at("("):
            self.next()
            if self.at(")"):
                raise ParseError("empty parentheses are not an expression", t.loc)
            first = self.par_expr()
            if self.at(","):
                items = [first]
                while self.at(","):
                    self.next()
                    items.append(self.par_expr())
                self.expect(")")
                return TupleV(tuple(items), loc=t.loc)
            self.expect(")")
            return first
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            self.next()
            return core.Var(t.text, loc=t.loc)
        raise ParseError(f"unexpected token {t.text!r}", t.loc)

    def message_list(self) -> tuple[MessageValue, ...]:
        self.expect("[")
        out: list[MessageValue] = []
        while not self.at("]"):
            name = self.service_name().text
            self.expect("<")
            args: list[Expr] = []
            while not self.at(">"):
                args.append(self.par_expr())
                if not self.at(">"):
                    self.expect(",")
            self.expect(">")
            for a in args:
                if not is_value(a):
                    raise ParseError("buffered message arguments must be values", self.peek().loc)
            out.append(MessageValue(name, tuple(args)))
            if not self.at("]"):
                self.expect(",")
        self.expect("]")
        return tuple(out)

    def template(self) -> Expr:
        start = self.expect("srv")
        transparent = False
        if self.at("*"):
            self.next()
            transparent = True
        self.expect("{")
        header: dict[str, SvcT] = {}
        # Header entries: `name: <T, ...>` separated by optional commas, until
        # the first pattern (`name<`), which starts the rules.
        while (
            self.peek().kind == "IDENT"
            and self.peek().text not in KEYWORDS
            and self.at(":", ahead=1)
        ):
            name = self.ident().text
            self.expect(":")
            ty = self.type_expr()
            if not isinstance(ty, SvcT):
                raise ParseError(f"service {name!r} must be declared at a service type", start.loc)
            if name in header:
                raise ParseError(f"duplicate service declaration {name!r}", start.loc)
            header[name] = ty
            if self.at(","):
                self.next()
        rules: list[ReactionRule] = []
        while not self.at("}"):
            rules.append(self.rule(header))
        self.expect("}")
        if not rules:
            raise ParseError("server template needs at least one rule", start.loc)
        return ServerTemplate(tuple(rules), transparent, loc=start.loc)

    def rule(self, header: dict[str, SvcT]) -> ReactionRule:
        patterns = [self.pattern(header)]
        while self.at("&"):
            self.next()
            patterns.append(self.pattern(header))
        self.expect(":>")
        body = self.par_expr()
        return ReactionRule(tuple(patterns), body)

    def pattern(self, header: dict[str, SvcT]) -> JoinPattern:
        name_tok = self.service_name()
        self.expect("<")
        params: list[tuple[str, Optional[TypeExpr]]] = []
        while not self.at(">"):
            p = self.ident("pattern parameter").text
            ann: Optional[TypeExpr] = None
            if self.at(":"):
                self.next()
                ann = self.type_expr()
            params.append((p, ann))
            if not self.at(">"):
                self.expect(",")
        self.expect(">")
        declared = header.get(name_tok.text)
        resolved: list[tuple[str, TypeExpr]] = []
        for idx, (p, ann) in enumerate(params):
            if ann is None:
                if declared is None or len(declared.args) != len(params):
                    raise ParseError(
                        f"parameter {p!r} of service {name_tok.text!r} needs a type "
                        "annotation (inline or via a header declaration)",
                        name_tok.loc,
                    )
                ann = declared.args[idx]
            resolved.append((p, ann))
        if declared is not None and len(declared.args) != len(params):
            raise ParseError(
                f"service {name_tok.text!r} declared with {len(declared.args)} "
                f"parameters but pattern has {len(params)}",
                name_tok.loc,
            )
        return JoinPattern(name_tok.text, tuple(resolved))

    # types ------------------------------------------------------------------

    def type_expr(self) -> TypeExpr:
        t = self.peek()
        if self.at("("):
            self.next()
            args: list[TypeExpr] = []
            if not self.at(")"):
                args.append(self.type_expr())
                while self.at(","):
                    self.next()
                    args.append(self.type_expr())
            self.expect(")")
            if self.at("->"):
                self.next()
                ret = self.type_expr()
                return SvcT(tuple(args) + (SvcT((ret,)),))
            if len(args) == 1:
                return args[0]
            if not args:
                raise ParseError("empty type parentheses", t.loc)
            return DataT("Tuple", tuple(args))
        return self.prefix_type()

    def prefix_type(self) -> TypeExpr:
        t = self.peek()
        if self.at("inst"):
            self.next()
            return core.InstT(self.prefix_type())
        if self.at("img"):
            self.next()
            return core.ImgT(self.prefix_type())
        if self.at("forall"):
            self.next()
            var = self.ident("type variable").text
            bound: TypeExpr = Top()
            if self.at("<:"):
                self.next()
                bound = self.type_expr()
            self.expect(".")
            return Univ(var, bound, self.type_expr())
        if self.at("<"):
            self.next()
            args: list[TypeExpr] = []
            while not self.at(">"):
                args.append(self.type_expr())
                if not self.at(">"):
                    self.expect(",")
            self.expect(">")
            return SvcT(tuple(args))
        if self.at("srv"):
            self.next()
            self.expect("{")
            entries: list[tuple[str, SvcT]] = []
            while not self.at("}"):
                name = self.ident("service name").text
                self.expect(":")
                ty = self.type_expr()
                if not isinstance(ty, SvcT):
                    raise ParseError(f"service {name!r} must have a service type", t.loc)
                entries.append((name, ty))
                if not self.at("}"):
                    self.expect(",")
            self.expect("}")
            return SrvT(tuple(entries))
        if self.at("("):
            return self.type_expr()
        if t.kind == "IDENT" and t.text not in KEYWORDS:
            self.next()
            name = t.text
            if name == "Top":
                return Top()
            if name == "Unit":
                return UnitT()
            if name == "Bot":
                return Bot()
            if name == "SrvBot":
                return SrvBot()
            if name in ("Int", "Bool", "Float", "String"):
                return BaseT(name)
            args = []
            if self.at("["):
                self.next()
                while not self.at("]"):
                    args.append(self.type_expr())
                    if not self.at("]"):
                        self.expect(",")
                self.expect("]")
            if name in ("List", "Map", "Tuple"):
                return DataT(name, tuple(args))
            if name[0].islower() and not args:
                return TypeVar(name)
            return AliasT(name, tuple(args))
        raise ParseError(f"expected a type, found {t.text!r}", t.loc)


def parse(text: str) -> Program:
    """Parse a .cpl source string into a surface program."""
    return _Parser(text).program()


def parse_expr(text: str) -> Expr:
    """Parse a single expression (no defs or aliases)."""
    p = _Parser(text)
    e = p.expr()
    t = p.peek()
    if t.kind != "EOF":
        raise ParseError(f"unexpected {t.text!r} after expression", t.loc)
    return e
