"""Subtyping metatheory: reflexivity, transitivity, declarative agreement."""

import random

import pytest

from cpl.core import (
    BaseT,
    DataT,
    ImgT,
    InstT,
    SrvBot,
    SrvT,
    SvcT,
    Top,
    TypeExpr,
    TypeVar,
    UnitT,
    Univ,
)
from cpl.typecheck import TypeContext, subtype
from declarative import declarative_relation, universe_depth3

EMPTY = TypeContext()
INT = BaseT("Int")


def random_type(rng: random.Random, depth: int, tvars: tuple[str, ...] = ()) -> TypeExpr:
    leaves = [Top(), UnitT(), INT, BaseT("Bool"), SrvBot()]
    if tvars:
        leaves += [TypeVar(v) for v in tvars]
    if depth == 0:
        return rng.choice(leaves)
    kind = rng.randrange(8)
    if kind == 0:
        return rng.choice(leaves)
    if kind == 1:
        n = rng.randrange(3)
        return SvcT(tuple(random_type(rng, depth - 1, tvars) for _ in range(n)))
    if kind == 2:
        names = rng.sample(["a", "b"], rng.randrange(3))
        return SrvT(tuple((n, SvcT((random_type(rng, depth - 1, tvars),))) for n in names))
    if kind == 3:
        return InstT(random_type(rng, depth - 1, tvars))
    if kind == 4:
        return ImgT(random_type(rng, depth - 1, tvars))
    if kind == 5:
        v = f"t{len(tvars)}"
        return Univ(v, random_type(rng, depth - 1, tvars), random_type(rng, depth - 1, tvars + (v,)))
    if kind == 6:
        return DataT("List", (random_type(rng, depth - 1, tvars),))
    return DataT("Tuple", (random_type(rng, depth - 1, tvars), random_type(rng, depth - 1, tvars)))


def widen(rng: random.Random, t: TypeExpr) -> TypeExpr:
    """A random supertype of t, by the declarative rules."""
    if rng.random() < 0.12:
        return Top()
    if isinstance(t, SrvBot) and rng.random() < 0.5:
        return SrvT((("a", SvcT((INT,))),)) if rng.random() < 0.5 else SrvT(())
    if isinstance(t, SrvT) and t.services:
        entries = list(t.services)
        if rng.random() < 0.5 and len(entries) > 0:
            entries.pop(rng.randrange(len(entries)))
        else:
            i = rng.randrange(len(entries))
            name, svc = entries[i]
            entries[i] = (name, narrow_svc(rng, svc))
        return SrvT(tuple(entries))
    if isinstance(t, SvcT):
        return narrow_svc(rng, t)
    if isinstance(t, InstT):
        return InstT(widen(rng, t.inner))
    if isinstance(t, ImgT):
        return ImgT(widen(rng, t.inner))
    if isinstance(t, DataT):
        if not t.args:
            return t
        args = list(t.args)
        i = rng.randrange(len(args))
        args[i] = widen(rng, args[i])
        return DataT(t.ctor, tuple(args))
    if isinstance(t, Univ):
        return Univ(t.var, t.bound, widen(rng, t.body))
    return t


def narrow_svc(rng: random.Random, svc: SvcT) -> SvcT:
    """A supertype of a service type (arguments narrowed, contravariance)."""
    if not svc.args:
        return svc
    args = list(svc.args)
    i = rng.randrange(len(args))
    args[i] = narrow(rng, args[i])
    return SvcT(tuple(args))


def narrow(rng: random.Random, t: TypeExpr) -> TypeExpr:
    """A random subtype of t."""
    if isinstance(t, Top):
        return random_type(rng, 1)
    if isinstance(t, SrvT):
        if rng.random() < 0.5:
            extra = ("c", SvcT(()))
            if t.get("c") is None:
                return SrvT(t.services + (extra,))
        return SrvBot() if rng.random() < 0.3 else t
    if isinstance(t, InstT):
        return InstT(narrow(rng, t.inner))
    if isinstance(t, ImgT):
        return ImgT(narrow(rng, t.inner))
    if isinstance(t, DataT) and t.args:
        args = list(t.args)
        i = rng.randrange(len(args))
        args[i] = narrow(rng, args[i])
        return DataT(t.ctor, tuple(args))
    return t


def test_reflexivity_10k():
    rng = random.Random(20260808)
    for _ in range(10_000):
        t = random_type(rng, rng.randrange(5))
        assert subtype(EMPTY, t, t), t


def test_transitivity_constructed_chains_10k():
    rng = random.Random(42)
    checked = 0
    for _ in range(10_000):
        t1 = random_type(rng, rng.randrange(5))
        t2 = widen(rng, t1)
        t3 = widen(rng, t2)
        assert subtype(EMPTY, t1, t2), (t1, t2)
        assert subtype(EMPTY, t2, t3), (t2, t3)
        assert subtype(EMPTY, t1, t3), (t1, t3)
        checked += 1
    assert checked == 10_000


def test_transitivity_random_triples():
    rng = random.Random(7)
    hits = 0
    for _ in range(30_000):
        a = random_type(rng, 2)
        b = random_type(rng, 2)
        c = random_type(rng, 2)
        if subtype(EMPTY, a, b) and subtype(EMPTY, b, c):
            hits += 1
            assert subtype(EMPTY, a, c)
    assert hits > 30


def test_declarative_equivalence_depth3():
    universe = universe_depth3()
    assert len(universe) > 100
    rel = declarative_relation(universe)
    mismatches = []
    for i, t in enumerate(universe):
        for j, u in enumerate(universe):
            algo = subtype(EMPTY, t, u)
            decl = (i, j) in rel
            if algo != decl:
                mismatches.append((t, u, algo, decl))
    assert not mismatches, mismatches[:5]


def test_narrowing_produces_subtypes():
    rng = random.Random(99)
    for _ in range(2_000):
        t = random_type(rng, 2)
        assert subtype(EMPTY, narrow(rng, t), t)
