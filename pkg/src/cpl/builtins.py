"""Synchronous base operations: the toolchain's primitive data layer.

Arithmetic and collections are pure; freshID/localTime are impure and are
routed through an EffectContext supplied by the executing engine. Collection
operations are dynamically kind-checked because buffers and lists may hold
arbitrary values.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

from .core import (
    BaseLit,
    Expr,
    Image,
    ListV,
    MapV,
    TupleV,
    is_value,
)
from .errors import MachineError


@dataclass
class EffectContext:
    """Impure hooks; each engine provides its own linearizable versions."""

    fresh_id: Callable[[], int]
    local_time: Callable[[], int]


def _int(e: Expr, op: str) -> int:
    if isinstance(e, BaseLit) and isinstance(e.value, int) and not isinstance(e.value, bool):
        return e.value
    raise MachineError(f"{op}: expected an Int, got {e!r}")


def _num(e: Expr, op: str) -> int | float:
    if isinstance(e, BaseLit) and isinstance(e.value, (int, float)) and not isinstance(e.value, bool):
        return e.value
    raise MachineError(f"{op}: expected a number, got {e!r}")


def _bool(e: Expr, op: str) -> bool:
    if isinstance(e, BaseLit) and isinstance(e.value, bool):
        return e.value
    raise MachineError(f"{op}: expected a Bool, got {e!r}")


def _str(e: Expr, op: str) -> str:
    if isinstance(e, BaseLit) and isinstance(e.value, str):
        return e.value
    raise MachineError(f"{op}: expected a String, got {e!r}")


def _list(e: Expr, op: str) -> ListV:
    if isinstance(e, ListV):
        return e
    raise MachineError(f"{op}: expected a List, got {e!r}")


def _tuple(e: Expr, op: str) -> TupleV:
    if isinstance(e, TupleV):
        return e
    raise MachineError(f"{op}: expected a tuple, got {e!r}")


def _map(e: Expr, op: str) -> MapV:
    if isinstance(e, MapV):
        return e
    raise MachineError(f"{op}: expected a Map, got {e!r}")


def _lit(v: int | bool | float | str) -> BaseLit:
    return BaseLit(v)


def _values_equal(a: Expr, b: Expr) -> bool:
    # Structural equality on values; distinct kinds compare unequal.
    return a == b


def _proj(idx: int, name: str):
    def run(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
        t = _tuple(args[0], name)
        if len(t.items) <= idx:
            raise MachineError(f"{name}: tuple has only {len(t.items)} components")
        return t.items[idx]

    return run


def _map_get(m: MapV, key: Expr) -> Optional[Expr]:
    for k, v in m.entries:
        if _values_equal(k, key):
            return v
    return None


def _map_put(m: MapV, key: Expr, val: Expr) -> MapV:
    entries = tuple((k, v) for k, v in m.entries if not _values_equal(k, key))
    return MapV(entries + ((key, val),))


ARITY: dict[str, int] = {}
_IMPL: dict[str, Callable[[tuple[Expr, ...], EffectContext], Expr]] = {}


def _register(name: str, arity: int, fn: Callable[[tuple[Expr, ...], EffectContext], Expr]) -> None:
    ARITY[name] = arity
    _IMPL[name] = fn


def _arith(name: str, fn: Callable[[int | float, int | float], int | float]) -> None:
    def run(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
        a, b = _num(args[0], name), _num(args[1], name)
        try:
            return _lit(fn(a, b))
        except ZeroDivisionError:
            raise MachineError(f"{name}: division by zero") from None

    _register(name, 2, run)


def _cmp(name: str, fn: Callable[[int | float, int | float], bool]) -> None:
    def run(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
        return _lit(fn(_num(args[0], name), _num(args[1], name)))

    _register(name, 2, run)


_arith("add", lambda a, b: a + b)
_arith("sub", lambda a, b: a - b)
_arith("mul", lambda a, b: a * b)
_arith("div", lambda a, b: a // b if isinstance(a, int) and isinstance(b, int) else a / b)
_arith("mod", lambda a, b: a % b)
_arith("max", max)
_arith("min", min)
_cmp("le", lambda a, b: a <= b)
_cmp("lt", lambda a, b: a < b)
_cmp("ge", lambda a, b: a >= b)
_cmp("gt", lambda a, b: a > b)

_register("eq", 2, lambda args, fx: _lit(_values_equal(args[0], args[1])))
_register("neq", 2, lambda args, fx: _lit(not _values_equal(args[0], args[1])))
_register("not", 1, lambda args, fx: _lit(not _bool(args[0], "not")))
_register("and", 2, lambda args, fx: _lit(_bool(args[0], "and") and _bool(args[1], "and")))
_register("or", 2, lambda args, fx: _lit(_bool(args[0], "or") or _bool(args[1], "or")))

_register("fst", 1, _proj(0, "fst"))
_register("snd", 1, _proj(1, "snd"))
_register("thrd", 1, _proj(2, "thrd"))
_register("frth", 1, _proj(3, "frth"))

_register("head", 1, lambda args, fx: _head(args))
_register("tail", 1, lambda args, fx: _tail(args))
_register("cons", 2, lambda args, fx: ListV((args[0],) + _list(args[1], "cons").items))
_register("isEmpty", 1, lambda args, fx: _lit(len(_list(args[0], "isEmpty").items) == 0))
_register("append", 2, lambda args, fx: ListV(_list(args[0], "append").items + _list(args[1], "append").items))
_register("reverse", 1, lambda args, fx: ListV(tuple(reversed(_list(args[0], "reverse").items))))
_register("range", 2, lambda args, fx: ListV(tuple(_lit(i) for i in range(_int(args[0], "range"), _int(args[1], "range") + 1))))

_register("len", 1, lambda args, fx: _lit(len(_str(args[0], "len"))))
_register("split", 1, lambda args, fx: ListV(tuple(_lit(w) for w in _str(args[0], "split").split())))
_register("concat", 2, lambda args, fx: _lit(_str(args[0], "concat") + _str(args[1], "concat")))

_register("freshID", 0, lambda args, fx: _lit(fx.fresh_id()))
_register("localTime", 0, lambda args, fx: _lit(fx.local_time()))


def _head(args: tuple[Expr, ...]) -> Expr:
    xs = _list(args[0], "head")
    if not xs.items:
        raise MachineError("head: empty list")
    return xs.items[0]


def _tail(args: tuple[Expr, ...]) -> Expr:
    xs = _list(args[0], "tail")
    if not xs.items:
        raise MachineError("tail: empty list")
    return ListV(xs.items[1:])


def _size(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    v = args[0]
    if isinstance(v, ListV):
        return _lit(len(v.items))
    if isinstance(v, MapV):
        return _lit(len(v.entries))
    raise MachineError(f"size: expected a List or Map, got {v!r}")


_register("size", 1, _size)


def _mk_map(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    pairs = _list(args[0], "mkMap")
    m = MapV(())
    for p in pairs.items:
        t = _tuple(p, "mkMap")
        if len(t.items) != 2:
            raise MachineError("mkMap: entries must be pairs")
        m = _map_put(m, t.items[0], t.items[1])
    return m


_register("mkMap", 1, _mk_map)


def _get(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    v = _map_get(_map(args[0], "get"), args[1])
    if v is None:
        raise MachineError(f"get: missing key {args[1]!r}")
    return v


def _get_or(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    v = _map_get(_map(args[0], "getOr"), args[1])
    return args[2] if v is None else v


_register("get", 2, _get)
_register("getOr", 3, _get_or)
_register("put", 3, lambda args, fx: _map_put(_map(args[0], "put"), args[1], args[2]))
_register("hasKey", 2, lambda args, fx: _lit(_map_get(_map(args[0], "hasKey"), args[1]) is not None))
_register("keys", 1, lambda args, fx: ListV(tuple(k for k, _ in _map(args[0], "keys").entries)))
_register("items", 1, lambda args, fx: ListV(tuple(TupleV((k, v)) for k, v in _map(args[0], "items").entries)))
_register("mapValues", 1, lambda args, fx: ListV(tuple(v for _, v in _map(args[0], "mapValues").entries)))


def _filter_buffer(args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    img, names = args
    drop = {_str(n, "filterBuffer") for n in _list(names, "filterBuffer").items}
    if not isinstance(img, Image):
        raise MachineError(f"filterBuffer: expected a server image, got {img!r}")
    kept = tuple(m for m in img.buffer if m.service not in drop)
    return Image(img.template, kept)


_register("filterBuffer", 2, _filter_buffer)


def is_builtin(name: str) -> bool:
    return name in _IMPL


def apply_builtin(op: str, args: tuple[Expr, ...], fx: EffectContext) -> Expr:
    """Evaluate one base operation over value operands."""
    impl = _IMPL.get(op)
    if impl is None:
        raise MachineError(f"unknown base operation {op!r}")
    if len(args) != ARITY[op]:
        raise MachineError(f"{op}: expected {ARITY[op]} operands, got {len(args)}")
    for a in args:
        if not is_value(a):
            raise MachineError(f"{op}: operand not a value: {a!r}")
    return impl(args, fx)
