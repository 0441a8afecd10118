import contextlib

import pytest
from hypothesis import settings

import cpl.toolchain as tc

# Property tests run a fixed example set so the suite is deterministic.
settings.register_profile("ci", derandomize=True, deadline=None)
settings.load_profile("ci")
from cpl.runtime import value_to_json

FACT_SRC = """
def Fact = srv {
  main<n: Int, k: <Int>> :> (this#fac<n> || this#acc<1> || this#out<k>)
  fac<n: Int> & acc<a: Int> :>
    if n <= 1 then this#res<a> else (this#fac<n - 1> || this#acc<a * n>)
  res<r: Int> & out<k: <Int>> :> k<r>
};
"""


def load(text, prelude=False, input_value=None):
    return tc.load_program(text, include_prelude=prelude, input_value=input_value)


def checked(text, prelude=False):
    loaded = load(text, prelude=prelude)
    tc.check_expr(loaded.core, loaded.env)
    return loaded


def run_ss(text, prelude=False, seed=0, max_steps=2_000_000, trace=False):
    loaded = checked(text, prelude=prelude)
    return tc.run_smallstep(loaded.core, seed=seed, max_steps=max_steps, record_trace=trace)


@contextlib.contextmanager
def run_cc(text, prelude=True, virtual=False, timeout_ms=30_000, typecheck=True):
    loaded = load(text, prelude=prelude)
    if typecheck:
        tc.check_expr(loaded.core, loaded.env)
    rt = tc.run_concurrent(loaded.core, virtual_time=virtual, timeout_ms=timeout_ms)
    try:
        yield rt
    finally:
        rt.shutdown()


def ss_obs(result, service="result"):
    """JSON-ified observation args for one service from a machine run."""
    return [value_to_json(a[0]) for _, s, a in result.observations if s == service and a]


def cc_obs(rt, service="result"):
    return [value_to_json(o.args[0]) for o in rt.log.snapshot() if o.service == service and o.args]
