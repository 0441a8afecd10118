"""Deterministic small-step machine for the seven reduction rules.

Evaluation contexts are realized by recursive redex search (congruence is
implicit). The deterministic policy fixes all three nondeterminism dimensions:
instances round-robin by address id, rules in definition order, and the oldest
matching message wins. Exhaustive exploration is provided separately for the
match oracle and bounded reachability.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Optional

from .builtins import EffectContext, apply_builtin
from .core import (
    Addr,
    Address,
    BaseLit,
    BaseOp,
    Expr,
    ExternalRef,
    If,
    Image,
    Inert,
    ListV,
    Live,
    MapV,
    MessageValue,
    Par,
    Placement,
    Repl,
    Request,
    RoutingTable,
    ServerImage,
    ServerTemplate,
    ServiceRef,
    Snap,
    Spwn,
    THIS,
    TupleV,
    TypeAbs,
    TypeApp,
    ZeroImage,
    image_of,
    is_value,
    substitute,
)
from .errors import ExplosionError, StuckError
from .pretty import pretty_expr

Observation = tuple[int, str, tuple[Expr, ...]]


@dataclass
class Config:
    """A machine state e | mu plus bookkeeping for builtins and plumbing."""

    expr: Expr
    table: RoutingTable
    next_address: int
    logical_time: int = 0
    timers: tuple[tuple[int, Expr], ...] = ()
    observations: tuple[Observation, ...] = ()
    replaces: int = 0

    def copy(self) -> "Config":
        return Config(
            self.expr,
            dict(self.table),
            self.next_address,
            self.logical_time,
            self.timers,
            self.observations,
            self.replaces,
        )


def initial_config(expr: Expr) -> Config:
    top = expr if isinstance(expr, Par) else Par((expr,))
    return Config(top, {}, 0)


@dataclass
class Policy:
    """Resolves the three scheduling dimensions.

    Deterministic policies with equal seeds give identical traces; the seed
    only offsets the initial round-robin scan origin (buffers are totally
    ordered, so there are no equal-age message ties to break).
    """

    mode: str = "deterministic"
    seed: int = 0
    cursor: int = field(default=0)

    def __post_init__(self) -> None:
        self.cursor = self.seed % 64


def deterministic(seed: int = 0) -> Policy:
    return Policy("deterministic", seed)


def exhaustive() -> Policy:
    return Policy("exhaustive", 0)


# ---------------------------------------------------------------------------
# Matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MatchResult:
    consumed: tuple[MessageValue, ...]
    residual: tuple[MessageValue, ...]
    subst: tuple[tuple[str, Expr], ...]

    def substitution(self) -> dict[str, Expr]:
        return dict(self.subst)


def _bind(pattern_params: tuple[tuple[str, object], ...], msg: MessageValue) -> tuple[tuple[str, Expr], ...]:
    return tuple((n, v) for (n, _), v in zip(pattern_params, msg.args))


def match_patterns(patterns, buffer: tuple[MessageValue, ...], policy: Policy) -> Optional[MatchResult]:
    """Match0/Match1: oldest matching message per pattern, left to right.

    Greedy selection is complete here: two patterns can compete only for
    messages of the same service and arity, which are interchangeable.
    """
    if policy.mode == "exhaustive":
        results = enumerate_matches(patterns, buffer)
        return results[0] if results else None
    taken: set[int] = set()
    consumed: list[MessageValue] = []
    bindings: list[tuple[str, Expr]] = []
    for p in patterns:
        found = None
        for i, m in enumerate(buffer):
            if i in taken:
                continue
            if m.service == p.service and len(m.args) == len(p.params):
                found = i
                break
        if found is None:
            return None
        taken.add(found)
        msg = buffer[found]
        consumed.append(msg)
        bindings.extend(_bind(p.params, msg))
    residual = tuple(m for i, m in enumerate(buffer) if i not in taken)
    names = [n for n, _ in bindings]
    assert len(set(names)) == len(names), "pattern linearity violated"
    return MatchResult(tuple(consumed), residual, tuple(bindings))


def enumerate_matches(patterns, buffer: tuple[MessageValue, ...]) -> list[MatchResult]:
    """All distinct complete matches, by brute force over ordered selections.

    Intended for oracle-sized inputs; buffers up to length 8 stay cheap, and
    the test suite exercises lengths up to 6.
    """
    out: list[MatchResult] = []
    seen: set[tuple] = set()

    def go(idx: int, taken: tuple[int, ...], bindings: tuple[tuple[str, Expr], ...]) -> None:
        if idx == len(patterns):
            consumed = tuple(buffer[i] for i in taken)
            residual = tuple(m for j, m in enumerate(buffer) if j not in taken)
            key = (consumed, residual, bindings)
            if key not in seen:
                seen.add(key)
                out.append(MatchResult(consumed, residual, bindings))
            return
        p = patterns[idx]
        for i, m in enumerate(buffer):
            if i in taken:
                continue
            if m.service == p.service and len(m.args) == len(p.params):
                go(idx + 1, taken + (i,), bindings + _bind(p.params, m))

    go(0, (), ())
    return out


# ---------------------------------------------------------------------------
# Redex search
# ---------------------------------------------------------------------------

Rewriter = Callable[[Expr], Optional[Expr]]


def _rewrite_first(e: Expr, f: Rewriter) -> Optional[Expr]:
    """Apply f at the leftmost evaluation-context position where it succeeds."""
    r = f(e)
    if r is not None:
        return r
    if is_value(e):
        return None
    if isinstance(e, Spwn):
        r = _rewrite_first(e.expr, f)
        return None if r is None else Spwn(r, e.placement, loc=e.loc)
    if isinstance(e, ServiceRef):
        r = _rewrite_first(e.target, f)
        return None if r is None else ServiceRef(r, e.service, loc=e.loc)
    if isinstance(e, Request):
        r = _rewrite_first(e.callee, f)
        if r is not None:
            return Request(r, e.args, loc=e.loc)
        for i, a in enumerate(e.args):
            r = _rewrite_first(a, f)
            if r is not None:
                return Request(e.callee, e.args[:i] + (r,) + e.args[i + 1 :], loc=e.loc)
        return None
    if isinstance(e, Par):
        for i, x in enumerate(e.exprs):
            r = _rewrite_first(x, f)
            if r is not None:
                return Par(e.exprs[:i] + (r,) + e.exprs[i + 1 :], loc=e.loc)
        return None
    if isinstance(e, Snap):
        r = _rewrite_first(e.expr, f)
        return None if r is None else Snap(r, loc=e.loc)
    if isinstance(e, Repl):
        r = _rewrite_first(e.target, f)
        if r is not None:
            return Repl(r, e.image, loc=e.loc)
        r = _rewrite_first(e.image, f)
        return None if r is None else Repl(e.target, r, loc=e.loc)
    if isinstance(e, TypeApp):
        r = _rewrite_first(e.expr, f)
        return None if r is None else TypeApp(r, e.arg, loc=e.loc)
    if isinstance(e, BaseOp):
        for i, a in enumerate(e.operands):
            r = _rewrite_first(a, f)
            if r is not None:
                return BaseOp(e.op, e.operands[:i] + (r,) + e.operands[i + 1 :], loc=e.loc)
        return None
    if isinstance(e, If):
        r = _rewrite_first(e.cond, f)
        return None if r is None else If(r, e.then, e.orelse, loc=e.loc)
    if isinstance(e, TupleV):
        for i, a in enumerate(e.items):
            r = _rewrite_first(a, f)
            if r is not None:
                return TupleV(e.items[:i] + (r,) + e.items[i + 1 :], loc=e.loc)
        return None
    if isinstance(e, ListV):
        for i, a in enumerate(e.items):
            r = _rewrite_first(a, f)
            if r is not None:
                return ListV(e.items[:i] + (r,) + e.items[i + 1 :], loc=e.loc)
        return None
    if isinstance(e, MapV):
        for i, (k, v) in enumerate(e.entries):
            r = _rewrite_first(k, f)
            if r is not None:
                return MapV(e.entries[:i] + ((r, v),) + e.entries[i + 1 :], loc=e.loc)
            r = _rewrite_first(v, f)
            if r is not None:
                return MapV(e.entries[:i] + ((k, r),) + e.entries[i + 1 :], loc=e.loc)
        return None
    return None


def _flatten_one(e: Expr) -> Optional[Expr]:
    if isinstance(e, Par):
        for i, x in enumerate(e.exprs):
            if isinstance(x, Par):
                return Par(e.exprs[:i] + x.exprs + e.exprs[i + 1 :], loc=e.loc)
    return None


def _as_spawnable(v: Expr) -> Optional[ServerImage]:
    """Value views accepted by Spwn/Repl; templates mean (template, eps)."""
    if isinstance(v, ZeroImage):
        return Inert()
    if isinstance(v, ServerTemplate):
        return Live(v, ())
    if isinstance(v, Image) and isinstance(v.template, ServerTemplate) and is_value(v):
        return Live(v.template, v.buffer)
    return None


@dataclass(frozen=True)
class Stepped:
    config: Config
    rule: str
    detail: str = ""


def step(config: Config, policy: Policy) -> Optional[Stepped]:
    """Perform exactly one atomic reduction, or report quiescence with None."""

    # (1) rule Par: flatten one nested parallel composition.
    new_expr = _rewrite_first(config.expr, _flatten_one)
    if new_expr is not None:
        c = config.copy()
        c.expr = new_expr
        return Stepped(c, "Par")

    # (2) rule Rcv: deliver the leftmost in-transit request.
    effects: dict = {}

    def deliver(e: Expr) -> Optional[Expr]:
        if not isinstance(e, Request) or not all(is_value(a) for a in e.args):
            return None
        callee = e.callee
        if isinstance(callee, ExternalRef):
            effects["external"] = (callee.name, e.args)
            return Par(())
        if isinstance(callee, ServiceRef) and isinstance(callee.target, Addr):
            entry = config.table.get(callee.target.address)
            if isinstance(entry, Live):
                effects["rcv"] = (callee.target.address, MessageValue(callee.service, e.args))
                return Par(())
        return None

    new_expr = _rewrite_first(config.expr, deliver)
    if new_expr is not None:
        c = config.copy()
        c.expr = new_expr
        if "rcv" in effects:
            addr, msg = effects["rcv"]
            entry = c.table[addr]
            assert isinstance(entry, Live)
            c.table[addr] = Live(entry.template, entry.buffer + (msg,))
            return Stepped(c, "Rcv", f"@{addr.id}")
        name, args = effects["external"]
        if name == "timer":
            delay = args[0]
            assert isinstance(delay, BaseLit) and isinstance(delay.value, int)
            c.timers = c.timers + ((c.logical_time + delay.value, args[1]),)
            return Stepped(c, "Timer", name)
        c.observations = c.observations + ((c.logical_time, name, tuple(args)),)
        return Stepped(c, "Obs", name)

    # (3) rule React: round-robin over instances by address id, rules in
    # definition order.
    addrs = sorted((a for a, s in config.table.items() if isinstance(s, Live)), key=lambda a: a.id)
    if addrs:
        start = next((i for i, a in enumerate(addrs) if a.id >= policy.cursor), 0)
        for k in range(len(addrs)):
            addr = addrs[(start + k) % len(addrs)]
            entry = config.table[addr]
            assert isinstance(entry, Live)
            for ridx, rule in enumerate(entry.template.rules):
                m = match_patterns(rule.patterns, entry.buffer, policy)
                if m is None:
                    continue
                subst = m.substitution()
                subst[THIS] = Addr(addr)
                body = substitute(rule.body, subst)
                c = config.copy()
                c.table[addr] = Live(entry.template, m.residual)
                assert isinstance(c.expr, Par)
                c.expr = Par(c.expr.exprs + (body,))
                policy.cursor = addr.id + 1
                return Stepped(c, "React", f"@{addr.id}/r{ridx + 1}")

    # (4) contextual redexes: Spwn, Snap, Repl, TAppAbs, base operations, if.
    def contract(e: Expr) -> Optional[Expr]:
        if isinstance(e, Spwn) and is_value(e.expr):
            img = _as_spawnable(e.expr)
            if img is None:
                raise StuckError(f"spwn applied to a non-image value: {pretty_expr(e.expr)}")
            addr = Address(config.next_address, e.placement)
            effects["spawn"] = (addr, img)
            return Addr(addr)
        if isinstance(e, Snap) and is_value(e.expr):
            if not isinstance(e.expr, Addr):
                raise StuckError(f"snap applied to a non-address value: {pretty_expr(e.expr)}")
            entry = config.table.get(e.expr.address)
            if entry is None:
                raise StuckError(f"snap on unallocated address @{e.expr.address.id}")
            effects["snap"] = e.expr.address
            return image_of(entry)
        if isinstance(e, Repl) and is_value(e.target) and is_value(e.image):
            if not isinstance(e.target, Addr):
                raise StuckError(f"repl applied to a non-address value: {pretty_expr(e.target)}")
            if e.target.address not in config.table:
                raise StuckError(f"repl on unallocated address @{e.target.address.id}")
            img = _as_spawnable(e.image)
            if img is None:
                raise StuckError("repl applied to a non-image value")
            effects["repl"] = (e.target.address, img)
            return Par(())
        if isinstance(e, TypeApp) and is_value(e.expr):
            if not isinstance(e.expr, TypeAbs):
                raise StuckError("type application of a non-universal value")
            from .core import substitute_type_in_expr

            effects["tapp"] = True
            return substitute_type_in_expr(e.expr.body, {e.expr.var: e.arg})
        if isinstance(e, BaseOp) and all(is_value(a) for a in e.operands):
            def take_fresh() -> int:
                n = config.next_address + effects.setdefault("fresh_count", 0)
                effects["fresh_count"] += 1
                return n

            fx = EffectContext(fresh_id=take_fresh, local_time=lambda: config.logical_time)
            effects["base"] = True
            return apply_builtin(e.op, e.operands, fx)
        if isinstance(e, If) and is_value(e.cond):
            if isinstance(e.cond, BaseLit) and isinstance(e.cond.value, bool):
                effects["if"] = True
                return e.then if e.cond.value else e.orelse
            raise StuckError("if condition is not a boolean")
        return None

    new_expr = _rewrite_first(config.expr, contract)
    if new_expr is not None:
        c = config.copy()
        c.expr = new_expr
        if "spawn" in effects:
            addr, img = effects["spawn"]
            c.table[addr] = img
            c.next_address += 1
            return Stepped(c, "Spwn", f"@{addr.id}")
        if "snap" in effects:
            return Stepped(c, "Snap", f"@{effects['snap'].id}")
        if "repl" in effects:
            addr, img = effects["repl"]
            c.table[addr] = img
            c.replaces += 1
            return Stepped(c, "Repl", f"@{addr.id}")
        if "tapp" in effects:
            return Stepped(c, "TAppAbs")
        if effects.get("fresh_count"):
            c.next_address += effects["fresh_count"]
        if "base" in effects:
            return Stepped(c, "Base")
        return Stepped(c, "If")

    return None


# ---------------------------------------------------------------------------
# Runs and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TraceStep:
    index: int
    rule: str
    detail: str
    pre_digest: str
    post_digest: str
    top: str


@dataclass
class Trace:
    steps: list[TraceStep] = field(default_factory=list)

    def rule_names(self) -> list[str]:
        return [s.rule for s in self.steps]

    def normalized_rules(self) -> list[str]:
        keep = {"Spwn", "Rcv", "React", "Snap", "Repl"}
        return [f"{s.rule}{(' ' + s.detail) if s.rule == 'React' else ''}" for s in self.steps if s.rule in keep]

    def render(self) -> str:
        lines = []
        for s in self.steps:
            head = f"STEP {s.index} {s.rule}"
            if s.detail:
                head += f" {s.detail}"
            lines.append(head)
            lines.append(f"  {s.top}")
        return "\n".join(lines) + ("\n" if lines else "")


COMPLETED = "completed"
QUIESCENT = "quiescent"
STEP_LIMIT = "step-limit"


@dataclass
class RunResult:
    final: Config
    trace: Trace
    status: str

    @property
    def observations(self) -> tuple[Observation, ...]:
        return self.final.observations


def digest(config: Config) -> str:
    return hashlib.sha256(canonical(config).encode()).hexdigest()[:16]


def canonical(config: Config) -> str:
    """Canonical rendering with addresses renumbered by first encounter."""
    mapping: dict[int, int] = {}

    def num(a: Address) -> str:
        if a.id not in mapping:
            mapping[a.id] = len(mapping)
        tag = "~" if a.placement is Placement.LOCAL else ""
        return f"@{tag}{mapping[a.id]}"

    def walk(e: Expr) -> str:
        if isinstance(e, Addr):
            return num(e.address)
        if isinstance(e, ServerTemplate):
            return pretty_expr(e)
        if isinstance(e, Par):
            return "(" + "||".join(walk(x) for x in e.exprs) + ")"
        if isinstance(e, Request):
            return walk(e.callee) + "<" + ",".join(walk(a) for a in e.args) + ">"
        if isinstance(e, ServiceRef):
            return walk(e.target) + "#" + e.service
        if isinstance(e, Spwn):
            return f"spwn[{e.placement}]({walk(e.expr)})"
        if isinstance(e, Snap):
            return f"snap({walk(e.expr)})"
        if isinstance(e, Repl):
            return f"repl({walk(e.target)},{walk(e.image)})"
        if isinstance(e, Image):
            msgs = ",".join(m.service + "<" + ",".join(walk(a) for a in m.args) + ">" for m in e.buffer)
            return f"img({walk(e.template)},[{msgs}])"
        if isinstance(e, TypeApp):
            return f"{walk(e.expr)}[ty]"
        if isinstance(e, BaseOp):
            return e.op + "(" + ",".join(walk(a) for a in e.operands) + ")"
        if isinstance(e, If):
            return f"if({walk(e.cond)},{walk(e.then)},{walk(e.orelse)})"
        if isinstance(e, TupleV):
            return "(" + ",".join(walk(a) for a in e.items) + ")"
        if isinstance(e, ListV):
            return "[" + ",".join(walk(a) for a in e.items) + "]"
        if isinstance(e, MapV):
            return "{" + ",".join(walk(k) + ":" + walk(v) for k, v in e.entries) + "}"
        return pretty_expr(e)

    parts = [walk(config.expr)]
    for addr in sorted(config.table.keys(), key=lambda a: a.id):
        entry = config.table[addr]
        if isinstance(entry, Inert):
            parts.append(f"{num(addr)}=0")
        else:
            buf = ",".join(m.service + "<" + ",".join(walk(a) for a in m.args) + ">" for m in entry.buffer)
            parts.append(f"{num(addr)}=({pretty_expr(entry.template)},[{buf}])")
    parts.append(f"t={config.logical_time}")
    parts.append("timers=" + ",".join(f"{due}:{walk(k)}" for due, k in config.timers))
    parts.append("obs=" + ";".join(f"{s}({','.join(walk(a) for a in args)})" for _, s, args in config.observations))
    return "|".join(parts)


def _completed(config: Config) -> bool:
    assert isinstance(config.expr, Par)
    return all(is_value(x) for x in config.expr.exprs)


def pending_messages(config: Config) -> list[tuple[Address, MessageValue]]:
    out = []
    for addr in sorted(config.table.keys(), key=lambda a: a.id):
        entry = config.table[addr]
        if isinstance(entry, Live):
            for m in entry.buffer:
                out.append((addr, m))
    return out


def run(
    config: Config,
    policy: Policy,
    max_steps: int,
    record_trace: bool = True,
    max_idle_timer_rounds: int = 6,
) -> RunResult:
    """Iterate step until completion, quiescence, or the step limit.

    When nothing else can move but timers are armed, logical time jumps to the
    next deadline. Rounds that produce neither observations nor replacements
    count as idle and bound re-arming loops (the recovery combinator re-arms
    its check forever).
    """
    trace = Trace()
    current = config
    idle_rounds = 0
    progress = (0, 0)
    for n in range(max_steps):
        s = step(current, policy)
        if s is None:
            now_progress = (len(current.observations), current.replaces)
            if current.timers and idle_rounds < max_idle_timer_rounds:
                idle_rounds = idle_rounds + 1 if now_progress == progress else 0
                progress = now_progress
                due = min(t[0] for t in current.timers)
                ready = tuple(k for d, k in current.timers if d <= due)
                c = current.copy()
                c.timers = tuple(t for t in current.timers if t[0] > due)
                c.logical_time = max(c.logical_time, due)
                assert isinstance(c.expr, Par)
                c.expr = Par(c.expr.exprs + tuple(Request(k, ()) for k in ready))
                if record_trace:
                    trace.steps.append(
                        TraceStep(len(trace.steps) + 1, "Timer", f"t={c.logical_time}", digest(current), digest(c), pretty_expr(c.expr))
                    )
                current = c
                continue
            status = COMPLETED if _completed(current) else QUIESCENT
            return RunResult(current, trace, status)
        if record_trace:
            trace.steps.append(
                TraceStep(
                    len(trace.steps) + 1,
                    s.rule,
                    s.detail,
                    digest(current),
                    digest(s.config),
                    pretty_expr(s.config.expr),
                )
            )
        current = s.config
    return RunResult(current, trace, STEP_LIMIT)


# ---------------------------------------------------------------------------
# Bounded exhaustive exploration
# ---------------------------------------------------------------------------


def _admin_close(config: Config) -> Config:
    """Apply deterministic, confluent administrative steps to a fixpoint:
    Par flattening, base operations, conditionals, type applications."""
    current = config
    for _ in range(100_000):
        new_expr = _rewrite_first(current.expr, _flatten_one)
        if new_expr is not None:
            current = current.copy()
            current.expr = new_expr
            continue
        effects: dict = {}

        def contract(e: Expr) -> Optional[Expr]:
            if isinstance(e, TypeApp) and is_value(e.expr) and isinstance(e.expr, TypeAbs):
                from .core import substitute_type_in_expr

                return substitute_type_in_expr(e.expr.body, {e.expr.var: e.arg})
            if isinstance(e, BaseOp) and all(is_value(a) for a in e.operands):
                fx = EffectContext(
                    fresh_id=lambda: _bump(effects, current),
                    local_time=lambda: current.logical_time,
                )
                return apply_builtin(e.op, e.operands, fx)
            if isinstance(e, If) and isinstance(e.cond, BaseLit) and isinstance(e.cond.value, bool):
                return e.then if e.cond.value else e.orelse
            return None

        def _bump(eff: dict, cfg: Config) -> int:
            n = cfg.next_address + eff.setdefault("fresh", 0)
            eff["fresh"] = eff["fresh"] + 1
            return n

        new_expr = _rewrite_first(current.expr, contract)
        if new_expr is None:
            return current
        current = current.copy()
        current.expr = new_expr
        if effects.get("fresh"):
            current.next_address += effects["fresh"]
    raise ExplosionError("administrative closure did not terminate")


def _successors(config: Config) -> Iterator[Config]:
    """All single-step nondeterministic continuations of a closed config."""
    base = config

    # Every deliverable request, at every position.
    positions: list[tuple[str, object]] = []

    def find_deliveries(e: Expr, out: list) -> None:
        if is_value(e):
            return
        if isinstance(e, Request) and all(is_value(a) for a in e.args):
            callee = e.callee
            if isinstance(callee, ExternalRef) or (
                isinstance(callee, ServiceRef)
                and isinstance(callee.target, Addr)
                and isinstance(base.table.get(callee.target.address), Live)
            ):
                out.append(e)
        for c in _eval_children(e):
            find_deliveries(c, out)

    deliveries: list[Request] = []
    find_deliveries(base.expr, deliveries)
    for req in deliveries:
        c = base.copy()
        c.expr = _replace_once(base.expr, req, Par(()))
        callee = req.callee
        if isinstance(callee, ExternalRef):
            if callee.name == "timer":
                delay = req.args[0]
                assert isinstance(delay, BaseLit) and isinstance(delay.value, int)
                c.timers = c.timers + ((c.logical_time + delay.value, req.args[1]),)
            else:
                c.observations = c.observations + ((c.logical_time, callee.name, tuple(req.args)),)
        else:
            assert isinstance(callee, ServiceRef) and isinstance(callee.target, Addr)
            addr = callee.target.address
            entry = c.table[addr]
            assert isinstance(entry, Live)
            c.table[addr] = Live(entry.template, entry.buffer + (MessageValue(callee.service, req.args),))
        yield c

    # Every React on every instance, rule, and complete match.
    for addr in sorted(base.table.keys(), key=lambda a: a.id):
        entry = base.table[addr]
        if not isinstance(entry, Live):
            continue
        for rule in entry.template.rules:
            for m in enumerate_matches(rule.patterns, entry.buffer):
                subst = m.substitution()
                subst[THIS] = Addr(addr)
                c = base.copy()
                c.table[addr] = Live(entry.template, m.residual)
                assert isinstance(c.expr, Par)
                c.expr = Par(c.expr.exprs + (substitute(rule.body, subst),))
                yield c

    # Every Spwn/Snap/Repl redex position.
    redexes: list[Expr] = []

    def find_redexes(e: Expr, out: list) -> None:
        if is_value(e):
            return
        if isinstance(e, Spwn) and is_value(e.expr) and _as_spawnable(e.expr) is not None:
            out.append(e)
        elif isinstance(e, Snap) and isinstance(e.expr, Addr) and e.expr.address in base.table:
            out.append(e)
        elif (
            isinstance(e, Repl)
            and isinstance(e.target, Addr)
            and is_value(e.image)
            and e.target.address in base.table
            and _as_spawnable(e.image) is not None
        ):
            out.append(e)
        for ch in _eval_children(e):
            find_redexes(ch, out)

    find_redexes(base.expr, redexes)
    for red in redexes:
        c = base.copy()
        if isinstance(red, Spwn):
            addr = Address(c.next_address, red.placement)
            img = _as_spawnable(red.expr)
            assert img is not None
            c.table[addr] = img
            c.next_address += 1
            c.expr = _replace_once(base.expr, red, Addr(addr))
        elif isinstance(red, Snap):
            c.expr = _replace_once(base.expr, red, image_of(base.table[red.expr.address]))
        else:
            assert isinstance(red, Repl)
            img = _as_spawnable(red.image)
            assert img is not None
            c.table[red.target.address] = img
            c.expr = _replace_once(base.expr, red, Par(()))
        yield c


def _eval_children(e: Expr) -> tuple[Expr, ...]:
    if isinstance(e, Spwn):
        return (e.expr,)
    if isinstance(e, ServiceRef):
        return (e.target,)
    if isinstance(e, Request):
        return (e.callee, *e.args)
    if isinstance(e, Par):
        return tuple(e.exprs)
    if isinstance(e, Snap):
        return (e.expr,)
    if isinstance(e, Repl):
        return (e.target, e.image)
    if isinstance(e, TypeApp):
        return (e.expr,)
    if isinstance(e, BaseOp):
        return tuple(e.operands)
    if isinstance(e, If):
        return (e.cond,)
    if isinstance(e, TupleV):
        return tuple(e.items)
    if isinstance(e, ListV):
        return tuple(e.items)
    if isinstance(e, MapV):
        return tuple(x for kv in e.entries for x in kv)
    return ()


def _replace_once(root: Expr, target: Expr, replacement: Expr) -> Expr:
    """Replace the first occurrence (by identity) of target within root."""
    done = False

    def f(e: Expr) -> Optional[Expr]:
        nonlocal done
        if done:
            return None
        if e is target:
            done = True
            return replacement
        return None

    out = _rewrite_first(root, f)
    assert out is not None, "replacement target not found in evaluation position"
    return out


def enumerate_reachable(
    config: Config,
    depth: int,
    state_cap: int = 20_000,
    fire_timers: bool = True,
) -> dict[str, Config]:
    """All configurations reachable in at most `depth` nondeterministic steps,
    keyed by canonical digest (addresses renumbered)."""
    start = _admin_close(config)
    seen: dict[str, Config] = {digest(start): start}
    frontier = [start]
    for _ in range(depth):
        nxt: list[Config] = []
        for cfg in frontier:
            succs = list(_successors(cfg))
            if not succs and fire_timers and cfg.timers:
                idx = min(range(len(cfg.timers)), key=lambda i: cfg.timers[i][0])
                due, k = cfg.timers[idx]
                c = cfg.copy()
                c.timers = cfg.timers[:idx] + cfg.timers[idx + 1 :]
                c.logical_time = max(c.logical_time, due)
                assert isinstance(c.expr, Par)
                c.expr = Par(c.expr.exprs + (Request(k, ()),))
                succs = [c]
            for s in succs:
                s = _admin_close(s)
                d = digest(s)
                if d not in seen:
                    if len(seen) >= state_cap:
                        raise ExplosionError(f"state cap {state_cap} exceeded")
                    seen[d] = s
                    nxt.append(s)
        if not nxt:
            break
        frontier = nxt
    return seen


def terminal_configs(reachable: dict[str, Config]) -> list[Config]:
    out = []
    for cfg in reachable.values():
        if not list(_successors(cfg)) and not cfg.timers:
            out.append(cfg)
    return out
