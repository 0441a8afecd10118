"""Command-line entry point.

Exit codes: 0 success, 1 type error, 2 quiescent-with-pending or step/time
limit, 3 parse or desugar error, 4 internal error. Diagnostics go to stderr,
results to stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional

from . import machine, toolchain
from .core import Expr
from .errors import CplError, DesugarError, LinearityError, MachineError, ParseError
from .pretty import pretty_expr, pretty_type
from .runtime import value_to_json
from .typecheck import TypeCheckError

EXIT_OK = 0
EXIT_TYPE = 1
EXIT_RUNTIME = 2
EXIT_PARSE = 3
EXIT_INTERNAL = 4


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as f:
        return f.read()


def _load(args, input_value: Optional[Expr] = None) -> toolchain.Loaded:
    text = _read(args.file)
    return toolchain.load_program(
        text, include_prelude=not args.no_prelude, input_value=input_value
    )


def _observation_lines(observations) -> str:
    out = []
    for _, service, vals in observations:
        out.append(json.dumps({"service": service, "args": [value_to_json(v) for v in vals]}))
    return "\n".join(out) + ("\n" if out else "")


def cmd_check(args) -> int:
    loaded = _load(args)
    t = toolchain.check_expr(loaded.core, loaded.env)
    print(pretty_type(t))
    return EXIT_OK


def cmd_desugar(args) -> int:
    loaded = _load(args)
    print(pretty_expr(loaded.core))
    return EXIT_OK


def _ingest(args) -> Optional[Expr]:
    if not getattr(args, "input", None):
        return None
    with open(args.input, "r", encoding="utf-8") as f:
        return toolchain.json_to_value(json.load(f))


def _pending_diagnostic(pending) -> str:
    if not pending:
        return "quiescent: undelivered requests remain in transit"
    shown = ", ".join(f"{pretty_expr_msg(m)} at addr {a.id}" for a, m in pending[:5])
    more = "" if len(pending) <= 5 else ", ..."
    noun = "message" if len(pending) == 1 else "messages"
    return f"quiescent: {len(pending)} pending {noun} ({shown}{more})"


def pretty_expr_msg(m) -> str:
    return m.service + "<" + ", ".join(pretty_expr(a) for a in m.args) + ">"


def cmd_run(args) -> int:
    input_value = _ingest(args)
    loaded = _load(args, input_value)
    toolchain.check_expr(loaded.core, loaded.env)
    if args.engine == "smallstep":
        result = toolchain.run_smallstep(loaded.core, seed=args.seed, max_steps=args.max_steps)
        sys.stdout.write(_observation_lines(result.final.observations))
        if result.status == machine.STEP_LIMIT:
            print("step limit reached", file=sys.stderr)
            return EXIT_RUNTIME
        pending = machine.pending_messages(result.final)
        if not result.final.observations and (pending or result.status != machine.COMPLETED):
            print(_pending_diagnostic(pending), file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    rt = toolchain.run_concurrent(
        loaded.core, virtual_time=args.virtual_time, timeout_ms=args.timeout_ms
    )
    try:
        log = rt.log.snapshot()
        for o in log:
            sys.stdout.write(
                json.dumps({"service": o.service, "args": [value_to_json(v) for v in o.args]}) + "\n"
            )
        if rt.timed_out:
            print("timeout reached", file=sys.stderr)
            return EXIT_RUNTIME
        pending = rt.pending_summary()
        if not log and pending:
            print(_pending_diagnostic(pending), file=sys.stderr)
            return EXIT_RUNTIME
        return EXIT_OK
    finally:
        rt.shutdown()


def cmd_trace(args) -> int:
    loaded = _load(args)
    toolchain.check_expr(loaded.core, loaded.env)
    result = toolchain.run_smallstep(
        loaded.core, seed=args.seed, max_steps=args.max_steps, record_trace=True
    )
    sys.stdout.write(result.trace.render())
    if result.status == machine.STEP_LIMIT:
        print("step limit reached", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cpl", description="CPL toolchain")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, runnable: bool = False):
        sp.add_argument("file")
        sp.add_argument("--no-prelude", action="store_true", help="do not load the stdlib prelude")
        if runnable:
            sp.add_argument("--engine", choices=("smallstep", "concurrent"), default="smallstep")
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--max-steps", type=int, default=500_000)
            sp.add_argument("--timeout-ms", type=int, default=30_000)
            sp.add_argument("--input", default=None, help="JSON file bound to the `input` variable")
            sp.add_argument("--virtual-time", action="store_true")

    sp = sub.add_parser("check", help="parse, desugar and typecheck")
    common(sp)
    sp.set_defaults(fn=cmd_check)

    sp = sub.add_parser("run", help="typecheck then execute")
    common(sp, runnable=True)
    sp.set_defaults(fn=cmd_run)

    sp = sub.add_parser("trace", help="run the small-step engine and print the trace")
    common(sp, runnable=True)
    sp.add_argument("--format", choices=("text",), default="text")
    sp.set_defaults(fn=cmd_trace)

    sp = sub.add_parser("desugar", help="print the desugared core term")
    sp.add_argument("file")
    sp.add_argument("--prelude", dest="with_prelude", action="store_true")
    sp.set_defaults(fn=cmd_desugar, no_prelude=True)

    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "with_prelude", False):
        args.no_prelude = False
    try:
        return args.fn(args)
    except LinearityError as exc:
        print(f"type error: NonLinearPattern: {exc}", file=sys.stderr)
        return EXIT_TYPE
    except (ParseError, DesugarError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except TypeCheckError as exc:
        print(f"type error: {exc}", file=sys.stderr)
        return EXIT_TYPE
    except MachineError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except CplError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
