"""Core term and type language: expressions, types, routing tables, substitution.

Everything here is immutable; values can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Optional, Union

from .errors import LinearityError, Loc

# The self-reference is a distinguished token; it is stored under this key in
# substitutions and free-variable sets so shadowing rules stay explicit.
THIS = "this"


class Placement(Enum):
    LOCAL = "local"
    REMOTE = "remote"

    def __str__(self) -> str:
        return self.value


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


class TypeExpr:
    __slots__ = ()


@dataclass(frozen=True)
class Top(TypeExpr):
    pass


@dataclass(frozen=True)
class UnitT(TypeExpr):
    pass


@dataclass(frozen=True)
class Bot(TypeExpr):
    """Internal least type; the minimal type of empty collection literals."""


@dataclass(frozen=True)
class BaseT(TypeExpr):
    """Primitive data type: Int, Bool, Float or String."""

    name: str


@dataclass(frozen=True)
class TypeVar(TypeExpr):
    name: str


@dataclass(frozen=True)
class SvcT(TypeExpr):
    """Service type <T1, ..., Tn>."""

    args: tuple[TypeExpr, ...]


@dataclass(frozen=True)
class SrvT(TypeExpr):
    """Server-template type; a finite map from service names to service types.

    Entries are kept sorted by name so structural equality is order-independent.
    """

    services: tuple[tuple[str, SvcT], ...]

    def __post_init__(self) -> None:
        entries = tuple(sorted(self.services, key=lambda kv: kv[0]))
        names = [n for n, _ in entries]
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"duplicate service names in server type: {dupes}")
        object.__setattr__(self, "services", entries)

    def get(self, name: str) -> Optional[SvcT]:
        for n, t in self.services:
            if n == name:
                return t
        return None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.services)


@dataclass(frozen=True)
class SrvBot(TypeExpr):
    """The template type of inert servers; subtype of every server type."""


@dataclass(frozen=True)
class InstT(TypeExpr):
    inner: TypeExpr


@dataclass(frozen=True)
class ImgT(TypeExpr):
    inner: TypeExpr


@dataclass(frozen=True)
class Univ(TypeExpr):
    """Bounded universal; kernel variant (bounds compared for equality)."""

    var: str
    bound: TypeExpr
    body: TypeExpr


@dataclass(frozen=True)
class DataT(TypeExpr):
    """Built-in data constructor: List[T], Tuple[T...], Map[K, V]."""

    ctor: str
    args: tuple[TypeExpr, ...]


@dataclass(frozen=True)
class AliasT(TypeExpr):
    """Unexpanded type-alias application; eliminated by desugaring."""

    name: str
    args: tuple[TypeExpr, ...]


TOP = Top()
UNIT = UnitT()
BOT = Bot()
SRV_BOT = SrvBot()
INT = BaseT("Int")
BOOL = BaseT("Bool")
FLOAT = BaseT("Float")
STRING = BaseT("String")


def list_t(elem: TypeExpr) -> DataT:
    return DataT("List", (elem,))


def tuple_t(*items: TypeExpr) -> DataT:
    return DataT("Tuple", tuple(items))


def map_t(key: TypeExpr, val: TypeExpr) -> DataT:
    return DataT("Map", (key, val))


# ---------------------------------------------------------------------------
# Terms
# ---------------------------------------------------------------------------


class Expr:
    __slots__ = ()


def _loc_field() -> Loc | None:
    return field(default=None, compare=False, repr=False)  # type: ignore[return-value]


@dataclass(frozen=True)
class Var(Expr):
    name: str
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class This(Expr):
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class JoinPattern:
    service: str
    params: tuple[tuple[str, TypeExpr], ...]

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.params)


@dataclass(frozen=True)
class ReactionRule:
    patterns: tuple[JoinPattern, ...]
    body: Expr

    def __post_init__(self) -> None:
        if not self.patterns:
            raise ValueError("reaction rule needs at least one join pattern")
        seen: set[str] = set()
        for p in self.patterns:
            for n in p.param_names:
                if n in seen:
                    raise LinearityError(f"parameter {n!r} bound twice in one rule")
                seen.add(n)

    @property
    def bound_names(self) -> tuple[str, ...]:
        return tuple(n for p in self.patterns for n in p.param_names)


@dataclass(frozen=True)
class ServerTemplate(Expr):
    rules: tuple[ReactionRule, ...]
    # Derived forms that wrap a body containing a free `this` are marked
    # transparent: substitution for `this` descends into them and the
    # typechecker does not rebind `this` for their rule bodies.
    transparent_this: bool = False
    loc: Loc | None = _loc_field()

    def service_names(self) -> tuple[str, ...]:
        out: list[str] = []
        for r in self.rules:
            for p in r.patterns:
                if p.service not in out:
                    out.append(p.service)
        return tuple(out)


@dataclass(frozen=True)
class Spwn(Expr):
    expr: Expr
    placement: Placement = Placement.REMOTE
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class ServiceRef(Expr):
    target: Expr
    service: str
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Request(Expr):
    callee: Expr
    args: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Par(Expr):
    exprs: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Snap(Expr):
    expr: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Repl(Expr):
    target: Expr
    image: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class Address:
    id: int
    placement: Placement = Placement.REMOTE


@dataclass(frozen=True)
class Addr(Expr):
    address: Address
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class MessageValue:
    service: str
    args: tuple[Expr, ...]


@dataclass(frozen=True)
class Image(Expr):
    """Server image expression (template, buffer); a value once closed."""

    template: Expr
    buffer: tuple[MessageValue, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class ZeroImage(Expr):
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class TypeAbs(Expr):
    var: str
    bound: TypeExpr
    body: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class TypeApp(Expr):
    expr: Expr
    arg: TypeExpr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class BaseOp(Expr):
    op: str
    operands: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class BaseLit(Expr):
    value: Union[int, bool, float, str]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class If(Expr):
    """Built-in conditional; branches are not evaluation contexts."""

    cond: Expr
    then: Expr
    orelse: Expr
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class TupleV(Expr):
    items: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class ListV(Expr):
    items: tuple[Expr, ...]
    loc: Loc | None = _loc_field()


@dataclass(frozen=True)
class MapV(Expr):
    """Map value; entries kept sorted by key digest for canonical equality."""

    entries: tuple[tuple[Expr, Expr], ...]
    loc: Loc | None = _loc_field()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "entries", tuple(sorted(self.entries, key=lambda kv: repr(kv[0])))
        )


@dataclass(frozen=True)
class ExternalRef(Expr):
    """Engine-provided service endpoint (observer sink or timer); a value.

    Printed as ^name. `run` substitutes designated free continuation names
    with these; they are test and CLI plumbing, not semantics.
    """

    name: str
    loc: Loc | None = _loc_field()


# Routing tables ------------------------------------------------------------


class ServerImage:
    __slots__ = ()


@dataclass(frozen=True)
class Inert(ServerImage):
    pass


@dataclass(frozen=True)
class Live(ServerImage):
    template: ServerTemplate
    buffer: tuple[MessageValue, ...]


INERT = Inert()

RoutingTable = dict[Address, ServerImage]


def image_of(entry: ServerImage) -> Expr:
    """The image value a Snap of this table entry yields."""
    if isinstance(entry, Inert):
        return ZeroImage()
    assert isinstance(entry, Live)
    return Image(entry.template, entry.buffer)


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


def is_value(e: Expr) -> bool:
    cached = getattr(e, "_vcache", None)
    if cached is not None:
        return cached
    v: bool
    if isinstance(e, (ServerTemplate, Addr, ZeroImage, TypeAbs, BaseLit, ExternalRef)):
        v = True
    elif isinstance(e, ServiceRef):
        v = isinstance(e.target, (Addr, ExternalRef))
    elif isinstance(e, Par):
        v = len(e.exprs) == 0
    elif isinstance(e, Image):
        v = isinstance(e.template, ServerTemplate) and all(
            all(is_value(a) for a in m.args) for m in e.buffer
        )
    elif isinstance(e, TupleV):
        v = all(is_value(x) for x in e.items)
    elif isinstance(e, ListV):
        v = all(is_value(x) for x in e.items)
    elif isinstance(e, MapV):
        v = all(is_value(k) and is_value(x) for k, x in e.entries)
    else:
        v = False
    object.__setattr__(e, "_vcache", v)
    return v


# ---------------------------------------------------------------------------
# Free variables
# ---------------------------------------------------------------------------


def free_vars(e: Expr) -> frozenset[str]:
    """Free term variables of e; the self-reference appears as "this"."""
    cached = getattr(e, "_fvcache", None)
    if cached is not None:
        return cached
    fv = _free_vars(e)
    object.__setattr__(e, "_fvcache", fv)
    return fv


def _free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, This):
        return frozenset((THIS,))
    if isinstance(e, ServerTemplate):
        out: set[str] = set()
        for r in e.rules:
            body = free_vars(r.body) - set(r.bound_names)
            if not e.transparent_this:
                body = body - {THIS}
            out |= body
        return frozenset(out)
    if isinstance(e, Spwn):
        return free_vars(e.expr)
    if isinstance(e, ServiceRef):
        return free_vars(e.target)
    if isinstance(e, Request):
        out = set(free_vars(e.callee))
        for a in e.args:
            out |= free_vars(a)
        return frozenset(out)
    if isinstance(e, Par):
        return frozenset().union(*(free_vars(x) for x in e.exprs)) if e.exprs else frozenset()
    if isinstance(e, Snap):
        return free_vars(e.expr)
    if isinstance(e, Repl):
        return free_vars(e.target) | free_vars(e.image)
    if isinstance(e, Image):
        out = set(free_vars(e.template))
        for m in e.buffer:
            for a in m.args:
                out |= free_vars(a)
        return frozenset(out)
    if isinstance(e, TypeAbs):
        return free_vars(e.body)
    if isinstance(e, TypeApp):
        return free_vars(e.expr)
    if isinstance(e, BaseOp):
        return frozenset().union(*(free_vars(x) for x in e.operands)) if e.operands else frozenset()
    if isinstance(e, If):
        return free_vars(e.cond) | free_vars(e.then) | free_vars(e.orelse)
    if isinstance(e, TupleV):
        return frozenset().union(*(free_vars(x) for x in e.items)) if e.items else frozenset()
    if isinstance(e, ListV):
        return frozenset().union(*(free_vars(x) for x in e.items)) if e.items else frozenset()
    if isinstance(e, MapV):
        out = set()
        for k, v in e.entries:
            out |= free_vars(k) | free_vars(v)
        return frozenset(out)
    return frozenset()


def free_type_vars(t: TypeExpr) -> frozenset[str]:
    if isinstance(t, TypeVar):
        return frozenset((t.name,))
    if isinstance(t, SvcT):
        return frozenset().union(*(free_type_vars(a) for a in t.args)) if t.args else frozenset()
    if isinstance(t, SrvT):
        return frozenset().union(*(free_type_vars(s) for _, s in t.services)) if t.services else frozenset()
    if isinstance(t, (InstT, ImgT)):
        return free_type_vars(t.inner)
    if isinstance(t, Univ):
        return free_type_vars(t.bound) | (free_type_vars(t.body) - {t.var})
    if isinstance(t, (DataT, AliasT)):
        return frozenset().union(*(free_type_vars(a) for a in t.args)) if t.args else frozenset()
    return frozenset()


def expr_type_vars(e: Expr) -> frozenset[str]:
    """Type variables occurring free in annotations and type subterms of e."""
    cached = getattr(e, "_tvcache", None)
    if cached is not None:
        return cached
    out: set[str] = set()

    def walk(x: Expr) -> None:
        if isinstance(x, ServerTemplate):
            for r in x.rules:
                for p in r.patterns:
                    for _, t in p.params:
                        out.update(free_type_vars(t))
                walk(r.body)
        elif isinstance(x, TypeAbs):
            out.update(free_type_vars(x.bound))
            inner = expr_type_vars(x.body)
            out.update(inner - {x.var})
        elif isinstance(x, TypeApp):
            out.update(free_type_vars(x.arg))
            walk(x.expr)
        else:
            for c in _children(x):
                walk(c)

    walk(e)
    fv = frozenset(out)
    object.__setattr__(e, "_tvcache", fv)
    return fv


def _children(e: Expr) -> Iterable[Expr]:
    if isinstance(e, Spwn):
        return (e.expr,)
    if isinstance(e, ServiceRef):
        return (e.target,)
    if isinstance(e, Request):
        return (e.callee, *e.args)
    if isinstance(e, Par):
        return e.exprs
    if isinstance(e, Snap):
        return (e.expr,)
    if isinstance(e, Repl):
        return (e.target, e.image)
    if isinstance(e, Image):
        return (e.template, *(a for m in e.buffer for a in m.args))
    if isinstance(e, TypeApp):
        return (e.expr,)
    if isinstance(e, BaseOp):
        return e.operands
    if isinstance(e, If):
        return (e.cond, e.then, e.orelse)
    if isinstance(e, TupleV):
        return e.items
    if isinstance(e, ListV):
        return e.items
    if isinstance(e, MapV):
        return tuple(x for kv in e.entries for x in kv)
    return ()


# ---------------------------------------------------------------------------
# Substitution
# ---------------------------------------------------------------------------

def fresh_name(base: str, avoid: frozenset[str] | set[str]) -> str:
    """The first `stem%N` not occurring in `avoid`; deterministic, and uses %
    which the lexer accepts in identifiers but users never need to write."""
    stem = base.split("%", 1)[0] or "x"
    i = 1
    while f"{stem}%{i}" in avoid:
        i += 1
    return f"{stem}%{i}"


Substitution = Mapping[str, Expr]


def substitute(e: Expr, subst: Substitution) -> Expr:
    """Capture-avoiding simultaneous substitution of values for variables.

    `this` may be included under the key "this"; it is not substituted under
    server templates unless they are transparent derived forms.
    """
    if not subst:
        return e
    return _subst(e, dict(subst))


def _subst(e: Expr, s: dict[str, Expr]) -> Expr:
    if not s:
        return e
    # Identity-preserving: untouched subtrees are shared, which keeps the
    # per-node free-variable caches alive across firings.
    fv = free_vars(e)
    if not any(k in fv for k in s):
        return e
    if isinstance(e, Var):
        return s.get(e.name, e)
    if isinstance(e, This):
        return s.get(THIS, e)
    if isinstance(e, ServerTemplate):
        return _subst_template(e, s)
    if isinstance(e, Spwn):
        return Spwn(_subst(e.expr, s), e.placement, loc=e.loc)
    if isinstance(e, ServiceRef):
        return ServiceRef(_subst(e.target, s), e.service, loc=e.loc)
    if isinstance(e, Request):
        return Request(_subst(e.callee, s), tuple(_subst(a, s) for a in e.args), loc=e.loc)
    if isinstance(e, Par):
        return Par(tuple(_subst(x, s) for x in e.exprs), loc=e.loc)
    if isinstance(e, Snap):
        return Snap(_subst(e.expr, s), loc=e.loc)
    if isinstance(e, Repl):
        return Repl(_subst(e.target, s), _subst(e.image, s), loc=e.loc)
    if isinstance(e, Image):
        return Image(
            _subst(e.template, s),
            tuple(MessageValue(m.service, tuple(_subst(a, s) for a in m.args)) for m in e.buffer),
            loc=e.loc,
        )
    if isinstance(e, TypeAbs):
        return TypeAbs(e.var, e.bound, _subst(e.body, s), loc=e.loc)
    if isinstance(e, TypeApp):
        return TypeApp(_subst(e.expr, s), e.arg, loc=e.loc)
    if isinstance(e, BaseOp):
        return BaseOp(e.op, tuple(_subst(x, s) for x in e.operands), loc=e.loc)
    if isinstance(e, If):
        return If(_subst(e.cond, s), _subst(e.then, s), _subst(e.orelse, s), loc=e.loc)
    if isinstance(e, TupleV):
        return TupleV(tuple(_subst(x, s) for x in e.items), loc=e.loc)
    if isinstance(e, ListV):
        return ListV(tuple(_subst(x, s) for x in e.items), loc=e.loc)
    if isinstance(e, MapV):
        return MapV(tuple((_subst(k, s), _subst(v, s)) for k, v in e.entries), loc=e.loc)
    return e


def _subst_template(t: ServerTemplate, s: dict[str, Expr]) -> ServerTemplate:
    new_rules = []
    for rule in t.rules:
        bound = set(rule.bound_names)
        local = {k: v for k, v in s.items() if k not in bound}
        if not t.transparent_this:
            local.pop(THIS, None)
        if not local:
            new_rules.append(rule)
            continue
        # Rename any rule parameter that would capture a free variable of the
        # replacement values.
        range_free: set[str] = set()
        for v in local.values():
            range_free |= free_vars(v)
        clashes = bound & range_free
        patterns = rule.patterns
        body = rule.body
        if clashes:
            avoid = frozenset(
                range_free | bound | free_vars(body) | set(local.keys())
            )
            renaming: dict[str, Expr] = {}
            fresh_by_old: dict[str, str] = {}
            for old in sorted(clashes):
                nn = fresh_name(old, avoid | set(fresh_by_old.values()))
                fresh_by_old[old] = nn
                renaming[old] = Var(nn)
            patterns = tuple(
                JoinPattern(
                    p.service,
                    tuple((fresh_by_old.get(n, n), ty) for n, ty in p.params),
                )
                for p in patterns
            )
            body = _subst(body, renaming)
        new_rules.append(ReactionRule(patterns, _subst(body, local)))
    return ServerTemplate(tuple(new_rules), t.transparent_this, loc=t.loc)


# Type substitution ----------------------------------------------------------


def substitute_type_in_type(t: TypeExpr, subst: Mapping[str, TypeExpr]) -> TypeExpr:
    if not subst:
        return t
    if isinstance(t, TypeVar):
        return subst.get(t.name, t)
    if isinstance(t, SvcT):
        return SvcT(tuple(substitute_type_in_type(a, subst) for a in t.args))
    if isinstance(t, SrvT):
        return SrvT(
            tuple((n, substitute_type_in_type(s, subst)) for n, s in t.services)  # type: ignore[arg-type]
        )
    if isinstance(t, InstT):
        return InstT(substitute_type_in_type(t.inner, subst))
    if isinstance(t, ImgT):
        return ImgT(substitute_type_in_type(t.inner, subst))
    if isinstance(t, Univ):
        inner = {k: v for k, v in subst.items() if k != t.var}
        bound = substitute_type_in_type(t.bound, subst)
        if not inner:
            return Univ(t.var, bound, t.body)
        captured = frozenset().union(*(free_type_vars(v) for v in inner.values()))
        var, body = t.var, t.body
        if var in captured:
            nn = fresh_name(var, captured | free_type_vars(body) | set(inner))
            body = substitute_type_in_type(body, {var: TypeVar(nn)})
            var = nn
        return Univ(var, bound, substitute_type_in_type(body, inner))
    if isinstance(t, DataT):
        return DataT(t.ctor, tuple(substitute_type_in_type(a, subst) for a in t.args))
    if isinstance(t, AliasT):
        return AliasT(t.name, tuple(substitute_type_in_type(a, subst) for a in t.args))
    return t


def substitute_type_in_expr(e: Expr, subst: Mapping[str, TypeExpr]) -> Expr:
    if not subst:
        return e
    tv = expr_type_vars(e)
    if not any(k in tv for k in subst):
        return e
    if isinstance(e, ServerTemplate):
        rules = tuple(
            ReactionRule(
                tuple(
                    JoinPattern(
                        p.service,
                        tuple((n, substitute_type_in_type(t, subst)) for n, t in p.params),
                    )
                    for p in r.patterns
                ),
                substitute_type_in_expr(r.body, subst),
            )
            for r in e.rules
        )
        return ServerTemplate(rules, e.transparent_this, loc=e.loc)
    if isinstance(e, TypeAbs):
        inner = {k: v for k, v in subst.items() if k != e.var}
        bound = substitute_type_in_type(e.bound, subst)
        if not inner:
            return TypeAbs(e.var, bound, e.body, loc=e.loc)
        captured = frozenset().union(*(free_type_vars(v) for v in inner.values()))
        var, body = e.var, e.body
        if var in captured:
            nn = fresh_name(var, captured | expr_type_vars(body) | set(inner))
            body = substitute_type_in_expr(body, {var: TypeVar(nn)})
            var = nn
        return TypeAbs(var, bound, substitute_type_in_expr(body, inner), loc=e.loc)
    if isinstance(e, TypeApp):
        return TypeApp(
            substitute_type_in_expr(e.expr, subst),
            substitute_type_in_type(e.arg, subst),
            loc=e.loc,
        )
    if isinstance(e, Spwn):
        return Spwn(substitute_type_in_expr(e.expr, subst), e.placement, loc=e.loc)
    if isinstance(e, ServiceRef):
        return ServiceRef(substitute_type_in_expr(e.target, subst), e.service, loc=e.loc)
    if isinstance(e, Request):
        return Request(
            substitute_type_in_expr(e.callee, subst),
            tuple(substitute_type_in_expr(a, subst) for a in e.args),
            loc=e.loc,
        )
    if isinstance(e, Par):
        return Par(tuple(substitute_type_in_expr(x, subst) for x in e.exprs), loc=e.loc)
    if isinstance(e, Snap):
        return Snap(substitute_type_in_expr(e.expr, subst), loc=e.loc)
    if isinstance(e, Repl):
        return Repl(
            substitute_type_in_expr(e.target, subst),
            substitute_type_in_expr(e.image, subst),
            loc=e.loc,
        )
    if isinstance(e, Image):
        return Image(
            substitute_type_in_expr(e.template, subst),
            tuple(
                MessageValue(m.service, tuple(substitute_type_in_expr(a, subst) for a in m.args))
                for m in e.buffer
            ),
            loc=e.loc,
        )
    if isinstance(e, BaseOp):
        return BaseOp(e.op, tuple(substitute_type_in_expr(x, subst) for x in e.operands), loc=e.loc)
    if isinstance(e, If):
        return If(
            substitute_type_in_expr(e.cond, subst),
            substitute_type_in_expr(e.then, subst),
            substitute_type_in_expr(e.orelse, subst),
            loc=e.loc,
        )
    if isinstance(e, TupleV):
        return TupleV(tuple(substitute_type_in_expr(x, subst) for x in e.items), loc=e.loc)
    if isinstance(e, ListV):
        return ListV(tuple(substitute_type_in_expr(x, subst) for x in e.items), loc=e.loc)
    if isinstance(e, MapV):
        return MapV(
            tuple(
                (substitute_type_in_expr(k, subst), substitute_type_in_expr(v, subst))
                for k, v in e.entries
            ),
            loc=e.loc,
        )
    return e


def substitute_type(target: Union[Expr, TypeExpr], var: str, t: TypeExpr) -> Union[Expr, TypeExpr]:
    """Capture-avoiding substitution of a type variable in a term or a type."""
    if isinstance(target, TypeExpr):
        return substitute_type_in_type(target, {var: t})
    return substitute_type_in_expr(target, {var: t})


# ---------------------------------------------------------------------------
# Alpha equivalence
# ---------------------------------------------------------------------------


def type_alpha_eq(a: TypeExpr, b: TypeExpr, env: tuple[tuple[str, str], ...] = ()) -> bool:
    if isinstance(a, TypeVar) and isinstance(b, TypeVar):
        for x, y in reversed(env):
            if a.name == x or b.name == y:
                return a.name == x and b.name == y
        return a.name == b.name
    if type(a) is not type(b):
        return False
    if isinstance(a, (Top, UnitT, Bot, SrvBot)):
        return True
    if isinstance(a, BaseT):
        return a.name == b.name  # type: ignore[union-attr]
    if isinstance(a, SvcT):
        assert isinstance(b, SvcT)
        return len(a.args) == len(b.args) and all(
            type_alpha_eq(x, y, env) for x, y in zip(a.args, b.args)
        )
    if isinstance(a, SrvT):
        assert isinstance(b, SrvT)
        if a.names != b.names:
            return False
        return all(type_alpha_eq(x, y, env) for (_, x), (_, y) in zip(a.services, b.services))
    if isinstance(a, InstT):
        return type_alpha_eq(a.inner, b.inner, env)  # type: ignore[union-attr]
    if isinstance(a, ImgT):
        return type_alpha_eq(a.inner, b.inner, env)  # type: ignore[union-attr]
    if isinstance(a, Univ):
        assert isinstance(b, Univ)
        return type_alpha_eq(a.bound, b.bound, env) and type_alpha_eq(
            a.body, b.body, env + ((a.var, b.var),)
        )
    if isinstance(a, DataT):
        assert isinstance(b, DataT)
        return (
            a.ctor == b.ctor
            and len(a.args) == len(b.args)
            and all(type_alpha_eq(x, y, env) for x, y in zip(a.args, b.args))
        )
    if isinstance(a, AliasT):
        assert isinstance(b, AliasT)
        return a.name == b.name and all(
            type_alpha_eq(x, y, env) for x, y in zip(a.args, b.args)
        )
    return False


def alpha_eq(
    a: Expr,
    b: Expr,
    env: tuple[tuple[str, str], ...] = (),
    tenv: tuple[tuple[str, str], ...] = (),
) -> bool:
    """Structural equality modulo bound names (rule parameters and type binders)."""
    if isinstance(a, Var) and isinstance(b, Var):
        for x, y in reversed(env):
            if a.name == x or b.name == y:
                return a.name == x and b.name == y
        return a.name == b.name
    if type(a) is not type(b):
        return False
    if isinstance(a, This):
        return True
    if isinstance(a, ServerTemplate):
        assert isinstance(b, ServerTemplate)
        if a.transparent_this != b.transparent_this or len(a.rules) != len(b.rules):
            return False
        for ra, rb in zip(a.rules, b.rules):
            if len(ra.patterns) != len(rb.patterns):
                return False
            ext = env
            for pa, pb in zip(ra.patterns, rb.patterns):
                if pa.service != pb.service or len(pa.params) != len(pb.params):
                    return False
                for (na, ta), (nb, tb) in zip(pa.params, pb.params):
                    if not type_alpha_eq(ta, tb, tenv):
                        return False
                    ext = ext + ((na, nb),)
            if not alpha_eq(ra.body, rb.body, ext, tenv):
                return False
        return True
    if isinstance(a, Spwn):
        assert isinstance(b, Spwn)
        return a.placement == b.placement and alpha_eq(a.expr, b.expr, env, tenv)
    if isinstance(a, ServiceRef):
        assert isinstance(b, ServiceRef)
        return a.service == b.service and alpha_eq(a.target, b.target, env, tenv)
    if isinstance(a, Request):
        assert isinstance(b, Request)
        return (
            len(a.args) == len(b.args)
            and alpha_eq(a.callee, b.callee, env, tenv)
            and all(alpha_eq(x, y, env, tenv) for x, y in zip(a.args, b.args))
        )
    if isinstance(a, Par):
        assert isinstance(b, Par)
        return len(a.exprs) == len(b.exprs) and all(
            alpha_eq(x, y, env, tenv) for x, y in zip(a.exprs, b.exprs)
        )
    if isinstance(a, Snap):
        return alpha_eq(a.expr, b.expr, env, tenv)  # type: ignore[union-attr]
    if isinstance(a, Repl):
        assert isinstance(b, Repl)
        return alpha_eq(a.target, b.target, env, tenv) and alpha_eq(a.image, b.image, env, tenv)
    if isinstance(a, Addr):
        return a.address == b.address  # type: ignore[union-attr]
    if isinstance(a, Image):
        assert isinstance(b, Image)
        if len(a.buffer) != len(b.buffer) or not alpha_eq(a.template, b.template, env, tenv):
            return False
        for ma, mb in zip(a.buffer, b.buffer):
            if ma.service != mb.service or len(ma.args) != len(mb.args):
                return False
            if not all(alpha_eq(x, y, env, tenv) for x, y in zip(ma.args, mb.args)):
                return False
        return True
    if isinstance(a, ZeroImage):
        return True
    if isinstance(a, TypeAbs):
        assert isinstance(b, TypeAbs)
        return type_alpha_eq(a.bound, b.bound, tenv) and alpha_eq(
            a.body, b.body, env, tenv + ((a.var, b.var),)
        )
    if isinstance(a, TypeApp):
        assert isinstance(b, TypeApp)
        return type_alpha_eq(a.arg, b.arg, tenv) and alpha_eq(a.expr, b.expr, env, tenv)
    if isinstance(a, BaseOp):
        assert isinstance(b, BaseOp)
        return (
            a.op == b.op
            and len(a.operands) == len(b.operands)
            and all(alpha_eq(x, y, env, tenv) for x, y in zip(a.operands, b.operands))
        )
    if isinstance(a, BaseLit):
        assert isinstance(b, BaseLit)
        return type(a.value) is type(b.value) and a.value == b.value
    if isinstance(a, If):
        assert isinstance(b, If)
        return (
            alpha_eq(a.cond, b.cond, env, tenv)
            and alpha_eq(a.then, b.then, env, tenv)
            and alpha_eq(a.orelse, b.orelse, env, tenv)
        )
    if isinstance(a, TupleV):
        assert isinstance(b, TupleV)
        return len(a.items) == len(b.items) and all(
            alpha_eq(x, y, env, tenv) for x, y in zip(a.items, b.items)
        )
    if isinstance(a, ListV):
        assert isinstance(b, ListV)
        return len(a.items) == len(b.items) and all(
            alpha_eq(x, y, env, tenv) for x, y in zip(a.items, b.items)
        )
    if isinstance(a, MapV):
        assert isinstance(b, MapV)
        if len(a.entries) != len(b.entries):
            return False
        return all(
            alpha_eq(ka, kb, env, tenv) and alpha_eq(va, vb, env, tenv)
            for (ka, va), (kb, vb) in zip(a.entries, b.entries)
        )
    if isinstance(a, ExternalRef):
        return a.name == b.name  # type: ignore[union-attr]
    return False
