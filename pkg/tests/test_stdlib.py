"""Combinator library behavior: workers, load awareness, balancing, recovery,
and the CPS sequence helpers. Every stdlib file must typecheck (self-hosting)."""

import pytest

import cpl.toolchain as tc
from cpl.core import Addr
from cpl.parser import parse
from cpl.runtime import value_to_json
from cpl.typecheck import TypeCheckError
from conftest import cc_obs, checked, run_cc, run_ss, ss_obs

BLOCKED_THUNK = "srv { force<kq: <Int>> :> par }"  # accepts force, never answers


def test_stdlib_self_hosting_gate():
    """All shipped .cpl files parse and the merged stdlib typechecks clean."""
    for name in tc.STDLIB_FILES:
        parse(tc.stdlib_source(name))
    loaded = tc.load_program("par", include_prelude=True)
    t = tc.check_expr(loaded.core, loaded.env)
    from cpl.core import UnitT

    assert t == UnitT()


def test_examples_all_typecheck():
    for name in (
        "fact.cpl",
        "stuck.cpl",
        "wordcount.cpl",
        "wordcount_lb.cpl",
        "wordcount_ft.cpl",
        "supervision_demo.cpl",
    ):
        checked(tc.example_source(name), prelude=True)


class TestMkWorker:
    def test_work_forces_thunk(self):
        src = """
letk w: TWorker[Int] = MkWorker[Int]#make<> in
let i: inst TWorker[Int] = spwn w in
  (i#init<> || i#work<thunk 42, result>)
"""
        with run_cc(src) as rt:
            assert cc_obs(rt) == [42]

    def test_init_is_noop(self):
        src = """
letk w: TWorker[Int] = MkWorker[Int]#make<> in
let i: inst TWorker[Int] = spwn w in
  (i#init<> || i#init<> || i#work<thunk 1, result>)
"""
        with run_cc(src) as rt:
            assert cc_obs(rt) == [1]

    def test_ten_concurrent_requests_each_answered_once(self):
        src = """
def Pump = spwn srv {
  go<n: Int, w: inst TWorker[Int]> :>
    if n == 0 then par else (w#work<thunk 7, result> || this#go<n - 1, w>)
};
letk w: TWorker[Int] = MkWorker[Int]#make<> in
let i: inst TWorker[Int] = spwn w in
  (i#init<> || Pump#go<10, i>)
"""
        with run_cc(src) as rt:
            assert cc_obs(rt) == [7] * 10


class TestMkLoadAware:
    def test_fresh_load_zero(self):
        src = """
letk base: TWorker[Int] = MkWorker[Int]#make<> in
letk law: TLAWorker[Int] = MkLoadAware[Int]#make<base> in
let i: inst TLAWorker[Int] = spwn law in
  (i#init<> || event<("probe", i)>)
"""
        with run_cc(src) as rt:
            probes = [o.args[0] for o in rt.log.snapshot() if o.service == "event"]
            addr = probes[0].items[1]
            assert isinstance(addr, Addr)
            rt.rt_send(addr.address, "getLoad", (rt_result_ref(rt),))
            rt.await_quiescence(5_000)
            assert cc_obs(rt) == [0]

    def test_pending_requests_counted(self):
        src = f"""
def Blocked = {BLOCKED_THUNK};
letk base: TWorker[Int] = MkWorker[Int]#make<> in
letk law: TLAWorker[Int] = MkLoadAware[Int]#make<base> in
let i: inst TLAWorker[Int] = spwn law in
  (i#init<> || i#work<Blocked, result> || i#work<Blocked, result> || i#work<Blocked, result>
   || event<("probe", i)>)
"""
        with run_cc(src) as rt:
            probes = [o.args[0] for o in rt.log.snapshot() if o.service == "event"]
            addr = probes[0].items[1]
            rt.rt_send(addr.address, "getLoad", (rt_result_ref(rt),))
            rt.await_quiescence(5_000)
            assert cc_obs(rt) == [3]

    def test_result_passthrough(self):
        src = """
letk base: TWorker[Int] = MkWorker[Int]#make<> in
letk law: TLAWorker[Int] = MkLoadAware[Int]#make<base> in
let i: inst TLAWorker[Int] = spwn law in
  (i#init<> || i#work<thunk 7, result>)
"""
        with run_cc(src) as rt:
            assert cc_obs(rt) == [7]

    def test_load_returns_to_zero_after_completion(self):
        src = """
letk base: TWorker[Int] = MkWorker[Int]#make<> in
letk law: TLAWorker[Int] = MkLoadAware[Int]#make<base> in
let i: inst TLAWorker[Int] = spwn law in
  (i#init<> || i#work<thunk 7, result> || event<("probe", i)>)
"""
        with run_cc(src) as rt:
            probes = [o.args[0] for o in rt.log.snapshot() if o.service == "event"]
            addr = probes[0].items[1]
            rt.rt_send(addr.address, "getLoad", (rt_result_ref(rt),))
            rt.await_quiescence(5_000)
            assert sorted(cc_obs(rt)) == [0, 7]


def rt_result_ref(rt):
    from cpl.core import ExternalRef

    return ExternalRef("result")


ROUND_ROBIN_100 = """
def TagWorker = spwn srv {
  make<i: Int, kk: <TLAWorker[Int]>> :>
    kk< srv { init<> :> par
              work<t: TThunk[Int], kw: <Int>> :> (event<i> || (spwn local t)#force<kw>)
              getLoad<kq: <Int>> :> kq<0> } >
};
def Pump = spwn srv {
  go<n: Int, b: inst TWorker[Int]> :>
    if n == 0 then par else (b#work<thunk 7, result> || this#go<n - 1, b>)
};
letk w1: TLAWorker[Int] = TagWorker#make<1> in
letk w2: TLAWorker[Int] = TagWorker#make<2> in
letk w3: TLAWorker[Int] = TagWorker#make<3> in
letk w4: TLAWorker[Int] = TagWorker#make<4> in
letk bal: TWorker[Int] = MkBalanced[Int]#make<[w1, w2, w3, w4], RoundRobin[Int]> in
let b: inst TWorker[Int] = spwn bal in
  (b#init<> || Pump#go<100, b>)
"""


class TestMkBalanced:
    def test_round_robin_exact_quarter_split(self):
        res = run_ss(ROUND_ROBIN_100, prelude=True, max_steps=5_000_000)
        tags = ss_obs(res, "event")
        assert len(tags) == 100
        assert {t: tags.count(t) for t in (1, 2, 3, 4)} == {1: 25, 2: 25, 3: 25, 4: 25}
        assert ss_obs(res) == [7] * 100

    def test_round_robin_concurrent_also_exact(self):
        with run_cc(ROUND_ROBIN_100) as rt:
            tags = cc_obs(rt, "event")
            assert {t: tags.count(t) for t in (1, 2, 3, 4)} == {1: 25, 2: 25, 3: 25, 4: 25}

    def test_elastic_choose_grows_pool(self):
        # A choose that appends a tagged clone makes it eligible next request.
        src = """
def TagWorker = spwn srv {
  make<i: Int, kk: <TLAWorker[Int]>> :>
    kk< srv { init<> :> par
              work<t: TThunk[Int], kw: <Int>> :> (event<i> || (spwn local t)#force<kw>)
              getLoad<kq: <Int>> :> kq<0> } >
};
letk w1: TLAWorker[Int] = TagWorker#make<1> in
letk w2: TLAWorker[Int] = TagWorker#make<2> in
let grow: Choose[Int] =
  (\\(l: List[inst TLAWorker[Int]]) -> (inst TLAWorker[Int], List[inst TLAWorker[Int]]).
     (head(l), append(tail(l), [head(l)])))#app in
letk bal: TWorker[Int] = MkBalanced[Int]#make<[w1, w2], grow> in
let b: inst TWorker[Int] = spwn bal in
  (b#init<> || b#work<thunk 7, result> || b#work<thunk 7, result> || b#work<thunk 7, result>)
"""
        res = run_ss(src, prelude=True, max_steps=3_000_000)
        assert ss_obs(res, "event") and ss_obs(res) == [7, 7, 7]


class TestLeastLoaded:
    def test_decisions_pick_minimum(self):
        src = f"""
def Blocked = {BLOCKED_THUNK};
def MkBase = spwn srv {{
  make<kk: <TLAWorker[Int]>> :>
    letk b: TWorker[Int] = MkWorker[Int]#make<> in MkLoadAware[Int]#make<b, kk>
}};
def Pump = spwn srv {{
  go<n: Int, b: inst TWorker[Int]> :>
    if n == 0 then par else (b#work<Blocked, result> || this#go<n - 1, b>)
}};
letk w1: TLAWorker[Int] = MkBase#make<> in
letk w2: TLAWorker[Int] = MkBase#make<> in
letk w3: TLAWorker[Int] = MkBase#make<> in
letk chs: Choose[Int] = MkLeastLoaded[Int]#make<event> in
letk bal: TWorker[Int] = MkBalanced[Int]#make<[w1, w2, w3], chs> in
let b: inst TWorker[Int] = spwn bal in
  (b#init<> || Pump#go<9, b>)
"""
        with run_cc(src, timeout_ms=30_000) as rt:
            decisions = cc_obs(rt, "event")
            assert len(decisions) == 9
            for loads, chosen in decisions:
                assert chosen == min(loads)


class TestMkRecover:
    def test_healthy_worker_transparent(self):
        src = """
letk base: TWorker[Int] = MkWorker[Int]#make<> in
letk rec: TWorker[Int] = MkRecover[Int]#make<base, 500> in
let i: inst TWorker[Int] = spwn rec in
  (i#init<> || i#work<thunk 5, result> || i#work<thunk 6, result>)
"""
        with run_cc(src, virtual=True) as rt:
            assert sorted(cc_obs(rt)) == [5, 6]

    def test_flaky_worker_recovered(self):
        src = """
def Gate = spwn img( srv { take<kk: <Bool>> & armed<> :> kk<true>
                           take<kk: <Bool>> :> kk<false> }, [armed<>] );
def Flaky = srv {
  init<> :> par
  work<t: TThunk[Int], kw: <Int>> :>
    letk drop: Bool = Gate#take<> in
      (if drop then par else (spwn local t)#force<kw>)
};
letk rec: TWorker[Int] = MkRecover[Int]#make<Flaky, 300> in
let i: inst TWorker[Int] = spwn rec in
  (i#init<> || i#work<thunk 42, result> || i#work<thunk 43, result>)
"""
        with run_cc(src, virtual=True) as rt:
            vals = cc_obs(rt)
            # at-least-once, no loss
            assert set(vals) == {42, 43}
            assert len(rt.replace_log) >= 1
            # the replacement image had an empty buffer: state reset
            assert all(buflen == 0 for _, buflen in rt.replace_log)


class TestPreludeHelpers:
    def test_mapk(self):
        src = "SeqMap[Int][Int]#mapk<[1, 2, 3], (\\(x: Int) -> Int. x + 1)#app, result>"
        with run_cc(src) as rt:
            assert cc_obs(rt) == [[2, 3, 4]]

    def test_existsk_empty_false(self):
        src = "Seq[Int]#existsk<[], (\\(x: Int) -> Bool. true)#app, result>"
        with run_cc(src) as rt:
            assert cc_obs(rt) == [False]

    def test_filterk(self):
        src = "Seq[Int]#filterk<[1, 2, 3, 2], (\\(x: Int) -> Bool. x != 2)#app, result>"
        with run_cc(src) as rt:
            assert cc_obs(rt) == [[1, 3]]

    def test_foreach_parallel_actions(self):
        src = "Seq[Int]#foreach<[1, 2, 3], (\\(x: Int) -> Unit. event<x>)#app>"
        with run_cc(src) as rt:
            assert sorted(cc_obs(rt, "event")) == [1, 2, 3]

    def test_directives_select_branch(self):
        src = """
let probe: inst srv { d1: <>, d2: <>, d3: <>, d4: <> } =
  spwn srv { d1<> :> event<"escalate">  d2<> :> event<"stop">
             d3<> :> event<"resume">  d4<> :> event<"restart"> } in
  (Escalate#match<probe#d1, probe#d2, probe#d3, probe#d4>
   || Restart#match<probe#d1, probe#d2, probe#d3, probe#d4>)
"""
        with run_cc(src) as rt:
            assert sorted(cc_obs(rt, "event")) == ["escalate", "restart"]
