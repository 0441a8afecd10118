"""Algorithmic typing and subtyping.

The implementation computes minimal types and folds subsumption into the
checking positions (request arguments, replacement operands, type-application
bounds, buffered messages). Subtyping is the syntax-directed kernel variant:
universal bounds must agree, reflexivity and transitivity are admissible.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .core import (
    THIS,
    Addr,
    Address,
    BaseLit,
    BaseOp,
    BaseT,
    Bot,
    DataT,
    Expr,
    ExternalRef,
    If,
    Image,
    ImgT,
    InstT,
    ListV,
    MapV,
    Par,
    Repl,
    Request,
    RoutingTable,
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
    Var,
    ZeroImage,
    free_type_vars,
    fresh_name,
    image_of,
    substitute_type_in_type,
    type_alpha_eq,
)
from .errors import CplError, Loc
from .pretty import pretty_type

UNIT = UnitT()
TOP = Top()
INT = BaseT("Int")
BOOL = BaseT("Bool")


class TypeCheckError(CplError):
    """A violated premise of the typing rules, tagged with its kind."""

    def __init__(
        self,
        kind: str,
        msg: str,
        loc: Loc | None = None,
        expected: TypeExpr | None = None,
        actual: TypeExpr | None = None,
    ):
        detail = msg
        if expected is not None:
            detail += f" (expected {pretty_type(expected)}"
            if actual is not None:
                detail += f", got {pretty_type(actual)}"
            detail += ")"
        elif actual is not None:
            detail += f" (got {pretty_type(actual)})"
        super().__init__(f"{loc}: {kind}: {detail}" if loc else f"{kind}: {detail}")
        self.kind = kind
        self.msg = msg
        self.loc = loc
        self.expected = expected
        self.actual = actual


@dataclass(frozen=True)
class TypeContext:
    """Ordered bindings; lookup returns the rightmost entry."""

    entries: tuple[tuple[str, str, TypeExpr], ...] = ()  # (kind, name, type)

    def extend_var(self, name: str, t: TypeExpr) -> "TypeContext":
        return TypeContext(self.entries + (("var", name, t),))

    def extend_tvar(self, name: str, bound: TypeExpr) -> "TypeContext":
        return TypeContext(self.entries + (("tvar", name, bound),))

    def lookup_var(self, name: str) -> Optional[TypeExpr]:
        for kind, n, t in reversed(self.entries):
            if kind == "var" and n == name:
                return t
        return None

    def lookup_tvar(self, name: str) -> Optional[TypeExpr]:
        for kind, n, t in reversed(self.entries):
            if kind == "tvar" and n == name:
                return t
        return None

    def tvar_names(self) -> frozenset[str]:
        return frozenset(n for kind, n, _ in self.entries if kind == "tvar")


LocationTyping = dict[Address, TypeExpr]  # values are Img types


def context_from(vars: dict[str, TypeExpr] | None = None) -> TypeContext:
    ctx = TypeContext()
    for n, t in (vars or {}).items():
        ctx = ctx.extend_var(n, t)
    return ctx


# ---------------------------------------------------------------------------
# Subtyping
# ---------------------------------------------------------------------------


def subtype(ctx: TypeContext, t: TypeExpr, u: TypeExpr) -> bool:
    if isinstance(u, Top):
        return True
    if isinstance(t, Bot):
        return True
    if type_alpha_eq(t, u):
        return True
    if isinstance(t, TypeVar):
        bound = ctx.lookup_tvar(t.name)
        return bound is not None and subtype(ctx, bound, u)
    if isinstance(t, SrvBot) and isinstance(u, SrvT):
        return True
    if isinstance(t, SrvT) and isinstance(u, SrvT):
        for name, usvc in u.services:
            tsvc = t.get(name)
            if tsvc is None or not subtype(ctx, tsvc, usvc):
                return False
        return True
    if isinstance(t, SvcT) and isinstance(u, SvcT):
        if len(t.args) != len(u.args):
            return False
        return all(subtype(ctx, ua, ta) for ta, ua in zip(t.args, u.args))
    if isinstance(t, InstT) and isinstance(u, InstT):
        return subtype(ctx, t.inner, u.inner)
    if isinstance(t, ImgT) and isinstance(u, ImgT):
        return subtype(ctx, t.inner, u.inner)
    if isinstance(t, Univ) and isinstance(u, Univ):
        if not type_alpha_eq(t.bound, u.bound):
            return False
        f = fresh_name("a", ctx.tvar_names() | free_type_vars(t.body) | free_type_vars(u.body))
        ext = ctx.extend_tvar(f, t.bound)
        tb = substitute_type_in_type(t.body, {t.var: TypeVar(f)})
        ub = substitute_type_in_type(u.body, {u.var: TypeVar(f)})
        return subtype(ext, tb, ub)
    if isinstance(t, DataT) and isinstance(u, DataT):
        if t.ctor != u.ctor or len(t.args) != len(u.args):
            return False
        return all(subtype(ctx, a, b) for a, b in zip(t.args, u.args))
    return False


def promote(ctx: TypeContext, t: TypeExpr) -> TypeExpr:
    """Expose a type variable through its bounds (algorithmic S-TVar)."""
    seen = 0
    while isinstance(t, TypeVar):
        bound = ctx.lookup_tvar(t.name)
        if bound is None:
            return t
        t = bound
        seen += 1
        if seen > 1000:
            raise TypeCheckError("EscapingTypeVar", "type-variable bound cycle")
    return t


def join(ctx: TypeContext, a: TypeExpr, b: TypeExpr, loc: Loc | None, what: str) -> TypeExpr:
    if subtype(ctx, a, b):
        return b
    if subtype(ctx, b, a):
        return a
    raise TypeCheckError("NotASubtype", f"incompatible types in {what}", loc, expected=a, actual=b)


# ---------------------------------------------------------------------------
# Typing
# ---------------------------------------------------------------------------


def type_of(ctx: TypeContext, sigma: LocationTyping, e: Expr) -> TypeExpr:
    """Minimal type of e, or a TypeCheckError naming the violated premise."""
    loc = getattr(e, "loc", None)
    if isinstance(e, Var):
        t = ctx.lookup_var(e.name)
        if t is None:
            raise TypeCheckError("UnboundVar", f"unbound variable {e.name!r}", loc)
        return t
    if isinstance(e, This):
        t = ctx.lookup_var(THIS)
        if t is None:
            raise TypeCheckError("UnboundVar", "this used outside a server template", loc)
        return t
    if isinstance(e, BaseLit):
        v = e.value
        if isinstance(v, bool):
            return BOOL
        if isinstance(v, int):
            return INT
        if isinstance(v, float):
            return BaseT("Float")
        return BaseT("String")
    if isinstance(e, ExternalRef):
        if e.name == "timer":
            return SvcT((INT, SvcT(())))
        return SvcT((TOP,))
    if isinstance(e, Par):
        for x in e.exprs:
            t = type_of(ctx, sigma, x)
            if not subtype(ctx, t, UNIT):
                raise TypeCheckError(
                    "NotASubtype", "parallel component must have type Unit",
                    getattr(x, "loc", loc), expected=UNIT, actual=t,
                )
        return UNIT
    if isinstance(e, ServerTemplate):
        return _type_of_template(ctx, sigma, e)
    if isinstance(e, ZeroImage):
        return ImgT(SrvBot())
    if isinstance(e, Image):
        return _type_of_image(ctx, sigma, e)
    if isinstance(e, Snap):
        t = promote(ctx, type_of(ctx, sigma, e.expr))
        if isinstance(t, InstT):
            return ImgT(t.inner)
        raise TypeCheckError("NotAnInstance", "snap requires a server instance", loc, actual=t)
    if isinstance(e, Repl):
        t1 = promote(ctx, type_of(ctx, sigma, e.target))
        if not isinstance(t1, InstT):
            raise TypeCheckError("NotAnInstance", "repl requires a server instance", loc, actual=t1)
        t2 = promote(ctx, type_of(ctx, sigma, e.image))
        img2 = _as_image_type(t2)
        if img2 is None:
            raise TypeCheckError("NotAnImage", "repl requires a server image", loc, actual=t2)
        if not subtype(ctx, img2, ImgT(t1.inner)):
            raise TypeCheckError(
                "NotASubtype", "replacement image must preserve the instance interface",
                loc, expected=ImgT(t1.inner), actual=img2,
            )
        return UNIT
    if isinstance(e, Spwn):
        t = promote(ctx, type_of(ctx, sigma, e.expr))
        img = _as_image_type(t)
        if img is None:
            raise TypeCheckError("NotAnImage", "spwn requires a server image or template", loc, actual=t)
        return InstT(img.inner)
    if isinstance(e, Addr):
        t = sigma.get(e.address)
        if t is None:
            raise TypeCheckError("UnboundVar", f"address {e.address.id} not allocated", loc)
        assert isinstance(t, ImgT)
        return InstT(t.inner)
    if isinstance(e, ServiceRef):
        t = promote(ctx, type_of(ctx, sigma, e.target))
        if not isinstance(t, InstT):
            raise TypeCheckError("NotAnInstance", "service selection needs a server instance", loc, actual=t)
        inner = promote(ctx, t.inner)
        if isinstance(inner, SrvT):
            svc = inner.get(e.service)
            if svc is None:
                raise TypeCheckError(
                    "ServiceNotFound", f"service {e.service!r} not provided", loc, actual=inner
                )
            return svc
        raise TypeCheckError("ServiceNotFound", f"service {e.service!r} not provided", loc, actual=inner)
    if isinstance(e, Request):
        t = promote(ctx, type_of(ctx, sigma, e.callee))
        if not isinstance(t, SvcT):
            raise TypeCheckError("NotAService", "request target is not a service", loc, actual=t)
        if len(t.args) != len(e.args):
            raise TypeCheckError(
                "ArityMismatch",
                f"service expects {len(t.args)} arguments, got {len(e.args)}",
                loc,
            )
        for a, want in zip(e.args, t.args):
            got = type_of(ctx, sigma, a)
            if not subtype(ctx, got, want):
                raise TypeCheckError(
                    "NotASubtype", "request argument has the wrong type",
                    getattr(a, "loc", loc), expected=want, actual=got,
                )
        return UNIT
    if isinstance(e, TypeAbs):
        inner = type_of(ctx.extend_tvar(e.var, e.bound), sigma, e.body)
        return Univ(e.var, e.bound, inner)
    if isinstance(e, TypeApp):
        t = promote(ctx, type_of(ctx, sigma, e.expr))
        if not isinstance(t, Univ):
            raise TypeCheckError("NotAUniversal", "type application needs a universal", loc, actual=t)
        if not free_type_vars(e.arg) <= ctx.tvar_names():
            raise TypeCheckError("EscapingTypeVar", "type argument mentions unbound type variables", loc)
        if not subtype(ctx, e.arg, t.bound):
            raise TypeCheckError(
                "NotASubtype", "type argument violates the bound", loc, expected=t.bound, actual=e.arg
            )
        return substitute_type_in_type(t.body, {t.var: e.arg})
    if isinstance(e, BaseOp):
        return _type_of_baseop(ctx, sigma, e)
    if isinstance(e, If):
        ct = type_of(ctx, sigma, e.cond)
        if not subtype(ctx, ct, BOOL):
            raise TypeCheckError("NotASubtype", "condition must be Bool", loc, expected=BOOL, actual=ct)
        t1 = type_of(ctx, sigma, e.then)
        t2 = type_of(ctx, sigma, e.orelse)
        return join(ctx, t1, t2, loc, "if branches")
    if isinstance(e, TupleV):
        return DataT("Tuple", tuple(type_of(ctx, sigma, x) for x in e.items))
    if isinstance(e, ListV):
        if not e.items:
            return DataT("List", (Bot(),))
        elem: TypeExpr = type_of(ctx, sigma, e.items[0])
        for x in e.items[1:]:
            elem = join(ctx, elem, type_of(ctx, sigma, x), loc, "list literal")
        return DataT("List", (elem,))
    if isinstance(e, MapV):
        if not e.entries:
            return DataT("Map", (Bot(), Bot()))
        kt: TypeExpr = type_of(ctx, sigma, e.entries[0][0])
        vt: TypeExpr = type_of(ctx, sigma, e.entries[0][1])
        for k, v in e.entries[1:]:
            kt = join(ctx, kt, type_of(ctx, sigma, k), loc, "map keys")
            vt = join(ctx, vt, type_of(ctx, sigma, v), loc, "map values")
        return DataT("Map", (kt, vt))
    raise TypeCheckError("NotAService", f"cannot type node {type(e).__name__}", loc)


def _as_image_type(t: TypeExpr) -> Optional[ImgT]:
    """Images, plus the template-to-image coercion spwn (srv r) = spwn (srv r, eps)."""
    if isinstance(t, ImgT):
        return t
    if isinstance(t, (SrvT, SrvBot)):
        return ImgT(t)
    return None


def _type_of_template(ctx: TypeContext, sigma: LocationTyping, e: ServerTemplate) -> SrvT:
    entries: dict[str, SvcT] = {}
    loc = getattr(e, "loc", None)
    for r in e.rules:
        seen: set[str] = set()
        for p in r.patterns:
            for n in p.param_names:
                if n in seen:
                    raise TypeCheckError(
                        "NonLinearPattern", f"parameter {n!r} bound twice in a rule", loc
                    )
                seen.add(n)
            svc = SvcT(tuple(t for _, t in p.params))
            prev = entries.get(p.service)
            if prev is None:
                entries[p.service] = svc
            elif not type_alpha_eq(prev, svc):
                raise TypeCheckError(
                    "InconsistentServiceType",
                    f"service {p.service!r} declared at different types",
                    loc, expected=prev, actual=svc,
                )
    ttype = SrvT(tuple(entries.items()))
    if not free_type_vars(ttype) <= ctx.tvar_names():
        missing = sorted(free_type_vars(ttype) - ctx.tvar_names())
        raise TypeCheckError(
            "EscapingTypeVar", f"template type mentions unbound type variables {missing}", loc
        )
    for r in e.rules:
        inner = ctx
        for p in r.patterns:
            for n, t in p.params:
                inner = inner.extend_var(n, t)
        if not e.transparent_this:
            inner = inner.extend_var(THIS, InstT(ttype))
        bt = type_of(inner, sigma, r.body)
        if not subtype(ctx, bt, UNIT):
            raise TypeCheckError(
                "NotASubtype", "rule body must have type Unit",
                getattr(r.body, "loc", loc), expected=UNIT, actual=bt,
            )
    return ttype


def _type_of_image(ctx: TypeContext, sigma: LocationTyping, e: Image) -> ImgT:
    loc = getattr(e, "loc", None)
    t = promote(ctx, type_of(ctx, sigma, e.template))
    if not isinstance(t, SrvT):
        raise TypeCheckError("NotAnImage", "image template must be a server template", loc, actual=t)
    for m in e.buffer:
        svc = t.get(m.service)
        if svc is None:
            raise TypeCheckError(
                "ServiceNotFound", f"buffered message {m.service!r} not understood", loc, actual=t
            )
        if len(svc.args) != len(m.args):
            raise TypeCheckError(
                "ArityMismatch",
                f"buffered {m.service!r} has {len(m.args)} arguments, service takes {len(svc.args)}",
                loc,
            )
        for a, want in zip(m.args, svc.args):
            got = type_of(ctx, sigma, a)
            if not subtype(ctx, got, want):
                raise TypeCheckError(
                    "BufferIllTyped",
                    f"buffered {m.service!r} argument has the wrong type",
                    loc, expected=want, actual=got,
                )
    return ImgT(t)


# Base operation typing -------------------------------------------------------

_ARITH = {"add", "sub", "mul", "div", "mod", "max", "min"}
_NUM_CMP = {"le", "lt", "ge", "gt"}


def _type_of_baseop(ctx: TypeContext, sigma: LocationTyping, e: BaseOp) -> TypeExpr:
    loc = getattr(e, "loc", None)
    # Operand types are kept unpromoted so type variables survive joins;
    # promotion happens only where a constructor shape is required.
    ts = [type_of(ctx, sigma, x) for x in e.operands]

    def want(i: int, t: TypeExpr) -> None:
        if not subtype(ctx, ts[i], t):
            raise TypeCheckError(
                "NotASubtype", f"{e.op}: operand {i + 1} has the wrong type",
                loc, expected=t, actual=ts[i],
            )

    def arity(n: int) -> None:
        if len(ts) != n:
            raise TypeCheckError("ArityMismatch", f"{e.op} takes {n} operands, got {len(ts)}", loc)

    def as_list(i: int) -> TypeExpr:
        t = promote(ctx, ts[i])
        if isinstance(t, DataT) and t.ctor == "List":
            return t.args[0]
        if isinstance(t, Bot):
            return Bot()
        raise TypeCheckError("NotASubtype", f"{e.op}: operand {i + 1} must be a List", loc, actual=t)

    def as_map(i: int) -> tuple[TypeExpr, TypeExpr]:
        t = promote(ctx, ts[i])
        if isinstance(t, DataT) and t.ctor == "Map":
            return t.args[0], t.args[1]
        if isinstance(t, Bot):
            return Bot(), Bot()
        raise TypeCheckError("NotASubtype", f"{e.op}: operand {i + 1} must be a Map", loc, actual=t)

    op = e.op
    if op in _ARITH:
        arity(2)
        want(0, INT)
        want(1, INT)
        return INT
    if op in _NUM_CMP:
        arity(2)
        want(0, INT)
        want(1, INT)
        return BOOL
    if op in ("eq", "neq"):
        arity(2)
        return BOOL
    if op == "not":
        arity(1)
        want(0, BOOL)
        return BOOL
    if op in ("and", "or"):
        arity(2)
        want(0, BOOL)
        want(1, BOOL)
        return BOOL
    if op in ("fst", "snd", "thrd", "frth"):
        arity(1)
        idx = ("fst", "snd", "thrd", "frth").index(op)
        t = promote(ctx, ts[0])
        if isinstance(t, DataT) and t.ctor == "Tuple" and len(t.args) > idx:
            return t.args[idx]
        raise TypeCheckError("NotASubtype", f"{op}: operand must be a wide-enough tuple", loc, actual=t)
    if op == "head":
        arity(1)
        return as_list(0)
    if op == "tail":
        arity(1)
        return DataT("List", (as_list(0),))
    if op == "cons":
        arity(2)
        elem = as_list(1)
        return DataT("List", (join(ctx, ts[0], elem, loc, "cons"),))
    if op == "isEmpty":
        arity(1)
        as_list(0)
        return BOOL
    if op == "append":
        arity(2)
        return DataT("List", (join(ctx, as_list(0), as_list(1), loc, "append"),))
    if op == "reverse":
        arity(1)
        return DataT("List", (as_list(0),))
    if op == "range":
        arity(2)
        want(0, INT)
        want(1, INT)
        return DataT("List", (INT,))
    if op == "len":
        arity(1)
        want(0, BaseT("String"))
        return INT
    if op == "split":
        arity(1)
        want(0, BaseT("String"))
        return DataT("List", (BaseT("String"),))
    if op == "concat":
        arity(2)
        want(0, BaseT("String"))
        want(1, BaseT("String"))
        return BaseT("String")
    if op == "size":
        arity(1)
        t = promote(ctx, ts[0])
        if isinstance(t, DataT) and t.ctor in ("List", "Map"):
            return INT
        raise TypeCheckError("NotASubtype", "size: operand must be a List or Map", loc, actual=t)
    if op == "mkMap":
        arity(1)
        elem = as_list(0)
        if isinstance(elem, DataT) and elem.ctor == "Tuple" and len(elem.args) == 2:
            return DataT("Map", elem.args)
        if isinstance(elem, Bot):
            return DataT("Map", (Bot(), Bot()))
        raise TypeCheckError("NotASubtype", "mkMap: operand must be a list of pairs", loc, actual=ts[0])
    if op == "get":
        arity(2)
        kt, vt = as_map(0)
        if not subtype(ctx, ts[1], kt) and not subtype(ctx, kt, ts[1]):
            raise TypeCheckError("NotASubtype", "get: key type mismatch", loc, expected=kt, actual=ts[1])
        return vt
    if op == "getOr":
        arity(3)
        kt, vt = as_map(0)
        return join(ctx, vt, ts[2], loc, "getOr")
    if op == "put":
        arity(3)
        kt, vt = as_map(0)
        return DataT("Map", (join(ctx, kt, ts[1], loc, "put"), join(ctx, vt, ts[2], loc, "put")))
    if op == "hasKey":
        arity(2)
        as_map(0)
        return BOOL
    if op == "keys":
        arity(1)
        kt, _ = as_map(0)
        return DataT("List", (kt,))
    if op == "items":
        arity(1)
        kt, vt = as_map(0)
        return DataT("List", (DataT("Tuple", (kt, vt)),))
    if op == "mapValues":
        arity(1)
        _, vt = as_map(0)
        return DataT("List", (vt,))
    if op == "filterBuffer":
        arity(2)
        t = promote(ctx, ts[0])
        if not isinstance(t, ImgT):
            raise TypeCheckError("NotAnImage", "filterBuffer: operand must be an image", loc, actual=t)
        want(1, DataT("List", (BaseT("String"),)))
        return t
    if op in ("freshID", "localTime"):
        arity(0)
        return INT
    raise TypeCheckError("NotAService", f"unknown base operation {op!r}", loc)


# ---------------------------------------------------------------------------
# Routing tables and unions
# ---------------------------------------------------------------------------


def check_routing_table(ctx: TypeContext, sigma: LocationTyping, table: RoutingTable) -> bool:
    """Definition: dom(mu) = dom(Sigma) and each entry types at Sigma(i)."""
    if set(table.keys()) != set(sigma.keys()):
        return False
    for addr, entry in table.items():
        want = sigma[addr]
        try:
            got = type_of(ctx, sigma, image_of(entry))
        except TypeCheckError:
            return False
        if not subtype(ctx, got, want):
            return False
    return True


def server_type_union(t: SrvT, u: SrvT) -> SrvT:
    """Union of two server-template types; defined only when shared service
    names carry identical annotations."""
    merged: dict[str, SvcT] = dict(t.services)
    for name, svc in u.services:
        prev = merged.get(name)
        if prev is None:
            merged[name] = svc
        elif not type_alpha_eq(prev, svc):
            raise TypeCheckError(
                "InconsistentServiceType",
                f"service {name!r} has conflicting annotations in union",
                expected=prev, actual=svc,
            )
    return SrvT(tuple(merged.items()))
