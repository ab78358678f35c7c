"""Step/run functions and dynamic instrumentation.

The run loop caches a compiled thunk per instruction address. In
user-level mode cached entries are invalidated when their backing
bytes are written; in system-level mode every step re-fetches the
instruction bytes through the paging interface (so accessed-flag side
effects, table remappings, and self-modifying code behave exactly as
an uncached fetch) and only the parse is reused.

Instrumentation (stepping hooks, predicate breakpoints, memory-access
logging, per-instruction state logging) runs on a separate loop and
never alters the machine-visible run.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Union

from .state import MachineState, MsKind, Fault, MASK64, GPR_INDEX, FLAG_BITS
from .memory import read_linear_bytes, read_linear_bytes_quiet, \
    linear_read_quiet, PAGE_SIZE
from .decode import fetch_and_decode, decode_bytes
from .semantics import build_thunk

# Handlers safe to chain into straight-line blocks: sequential rip, no
# memory operand (enforced separately), so a block behaves exactly like
# stepping its members one at a time. Stores and stack/branch/syscall
# instructions end a block so self-modifying code is re-fetched before
# it can run stale.
_BLOCKABLE = frozenset(
    [f"arith.{op}" for op in ("add", "or", "adc", "sbb", "and", "sub",
                              "xor", "cmp", "test", "neg", "inc", "dec")]
    + [f"shift.{op}" for op in ("shl", "shr", "sar", "rol", "ror")]
    + [f"muldiv.{op}" for op in ("mul", "imul", "div", "idiv")]
    + ["not", "mov.load", "mov.store", "mov.imm", "mov.opreg", "movzx",
       "movsx", "xchg", "xchg.acc", "cmovcc", "setcc", "convert", "nop",
       "nop.multi", "rdrand", "imul.rr", "imul.rri"])

_BLOCK_CAP = 32


def _build_user_block(state: MachineState, rip: int):
    """Decode at rip and extend into a basic block of blockable
    instructions. Successor decoding is speculative and quiet; any
    problem simply ends the block."""
    di = fetch_and_decode(state)
    thunks = [build_thunk(state, di)]
    addrs = [rip]
    end = rip + di.length
    if di.mem_op is None and di.handler in _BLOCKABLE:
        halt = state.halt_addr
        while len(thunks) < _BLOCK_CAP:
            if end == halt:
                break
            data = read_linear_bytes_quiet(state, end, 15)
            if data is None:
                break
            try:
                di2 = decode_bytes(data)
            except Exception:
                break
            if di2.mem_op is not None or di2.handler not in _BLOCKABLE \
                    or di2.modes == "system":
                break
            thunks.append(build_thunk(state, di2))
            addrs.append(end)
            end += di2.length
    entry = (tuple(thunks), len(thunks), tuple(addrs))
    state.exec_cache[rip] = entry
    state.exec_meta[rip] = di
    mem = state.mem
    for page_addr in range(rip & ~(PAGE_SIZE - 1), end, PAGE_SIZE):
        mem.mark_code_page(page_addr)
    mem.mark_code_page(end - 1)
    return entry


def _build_system_thunk(state: MachineState, rip: int):
    di = fetch_and_decode(state)
    thunk = build_thunk(state, di)
    state.exec_cache[rip] = (thunk, di.raw)
    state.exec_meta[rip] = di
    return thunk


def x86_step(state: MachineState) -> None:
    """Execute at most one instruction.

    A non-empty ms freezes the state; reaching the halt address records
    a Halted status instead of fetching. All faults land in ms."""
    if state.ms is not None:
        return
    rip = state.rip
    if rip == state.halt_addr:
        state.set_ms(MsKind.HALTED, "reached halt address")
        return
    try:
        if state.user_level_mode:
            entry = state.exec_cache.get(rip)
            if entry is None:
                entry = _build_user_block(state, rip)
            entry[0][0]()
        else:
            entry = state.exec_cache.get(rip)
            if entry is not None:
                thunk, raw = entry
                if read_linear_bytes(state, rip, len(raw), "exec") != raw:
                    thunk = _build_system_thunk(state, rip)
            else:
                thunk = _build_system_thunk(state, rip)
            thunk()
    except Fault:
        pass


def x86_run(state: MachineState, n: int) -> int:
    """Step up to n times, stopping early when ms becomes non-empty.
    Returns the number of instructions executed.

    Handlers raise Fault on every path that records a model status, so
    the loop only needs the initial ms check plus the halt test."""
    if state.ms is not None or n <= 0:
        return 0
    total = n
    halt = state.halt_addr
    mem_read = read_linear_bytes
    if state.user_level_mode:
        cache_get = state.exec_cache.get
        cur_addrs = None
        try:
            while n:
                rip = state.rip
                if rip == halt:
                    state.set_ms(MsKind.HALTED, "reached halt address")
                    break
                entry = cache_get(rip)
                if entry is None:
                    cur_addrs = None
                    entry = _build_user_block(state, rip)
                thunks, k, cur_addrs = entry
                if k <= n:
                    for thunk in thunks:
                        thunk()
                    n -= k
                else:
                    for thunk in thunks[:n]:
                        thunk()
                    n = 0
        except Fault:
            # count the completed prefix of the faulting block
            if cur_addrs is not None:
                try:
                    n -= cur_addrs.index(state.rip)
                except ValueError:
                    pass
        return total - n
    cache_get = state.exec_cache.get
    try:
        while n:
            rip = state.rip
            if rip == halt:
                state.set_ms(MsKind.HALTED, "reached halt address")
                break
            entry = cache_get(rip)
            if entry is not None:
                thunk, raw = entry
                if mem_read(state, rip, len(raw), "exec") != raw:
                    thunk = _build_system_thunk(state, rip)
            else:
                thunk = _build_system_thunk(state, rip)
                cache_get = state.exec_cache.get
            thunk()
            n -= 1
    except Fault:
        pass
    return total - n


# ----------------------------------------------------------------------
# breakpoint expressions
# ----------------------------------------------------------------------

class BreakpointSyntaxError(ValueError):
    pass


_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>0[xX][0-9a-fA-F]+|\d+)|(?P<name>[a-zA-Z_][a-zA-Z0-9_]*)"
    r"|(?P<op>==|!=|&&|<|>|\[|\]|\(|\)|,))")


def _tokenize(text: str):
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None or m.end() == pos:
            tail = text[pos:].strip()
            if not tail:
                break
            raise BreakpointSyntaxError(f"bad token at {tail[:10]!r}")
        if m.group("num") is not None:
            tokens.append(("num", int(m.group("num"), 0)))
        elif m.group("name") is not None:
            tokens.append(("name", m.group("name")))
        else:
            tokens.append(("op", m.group("op")))
        pos = m.end()
    return tokens


class Breakpoint:
    """Compiled stop predicate over the machine state.

    grammar:  expr := cmp (&& cmp)*
              cmp  := term (== | != | < | >) term
              term := reg | flag | rip | literal
                      | mem[addr, width] | sum(lo, hi)

    Evaluation is observation-only: memory terms use the quiet read
    path (no accessed/dirty marking, no trace events); untranslatable
    addresses read as 0. sum() adds bytes over [lo, hi)."""

    def __init__(self, expr: str, fn: Callable[[MachineState], bool]):
        self.expr = expr
        self._fn = fn

    def eval(self, state: MachineState) -> bool:
        return bool(self._fn(state))

    def __repr__(self):
        return f"<Breakpoint {self.expr!r}>"


def _parse_term(tokens, i):
    if i >= len(tokens):
        raise BreakpointSyntaxError("expected a term")
    kind, val = tokens[i]
    if kind == "num":
        return (lambda s, v=val: v), i + 1
    if kind != "name":
        raise BreakpointSyntaxError(f"expected a term, got {val!r}")
    name = val.lower()
    if name == "rip":
        return (lambda s: s.rip), i + 1
    if name in GPR_INDEX:
        idx = GPR_INDEX[name]
        return (lambda s: s.gpr[idx]), i + 1
    if name in FLAG_BITS:
        bit = FLAG_BITS[name]
        return (lambda s: (s.rflags >> bit) & 1), i + 1
    if name == "mem":
        if i + 1 >= len(tokens) or tokens[i + 1] != ("op", "["):
            raise BreakpointSyntaxError("mem needs [addr, width]")
        args, j = _parse_args(tokens, i + 2, ("op", "]"))
        if len(args) != 2 or args[1] not in (1, 2, 4, 8):
            raise BreakpointSyntaxError("mem takes [addr, width 1|2|4|8]")
        addr, width = args

        def read_mem(s, a=addr, w=width):
            v = linear_read_quiet(s, a, w)
            return 0 if v is None else v
        return read_mem, j
    if name == "sum":
        if i + 1 >= len(tokens) or tokens[i + 1] != ("op", "("):
            raise BreakpointSyntaxError("sum needs (lo, hi)")
        args, j = _parse_args(tokens, i + 2, ("op", ")"))
        if len(args) != 2 or args[1] < args[0]:
            raise BreakpointSyntaxError("sum takes (lo, hi) with hi >= lo")
        lo, hi = args

        def read_sum(s, lo=lo, hi=hi):
            data = read_linear_bytes_quiet(s, lo, hi - lo)
            return sum(data) if data is not None else 0
        return read_sum, j
    raise BreakpointSyntaxError(f"unknown term {name!r}")


def _parse_args(tokens, i, closer):
    """Literal argument list ending at `closer`."""
    args = []
    while True:
        if i >= len(tokens):
            raise BreakpointSyntaxError("unterminated argument list")
        kind, val = tokens[i]
        if kind != "num":
            raise BreakpointSyntaxError("arguments must be literals")
        args.append(val)
        i += 1
        if i >= len(tokens):
            raise BreakpointSyntaxError("unterminated argument list")
        if tokens[i] == closer:
            return args, i + 1
        if tokens[i] != ("op", ","):
            raise BreakpointSyntaxError("expected ',' in argument list")
        i += 1


_CMP = {
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    ">": lambda a, b: a > b,
}


def parse_breakpoint(text: str) -> Breakpoint:
    """Compile a breakpoint expression; malformed input raises
    BreakpointSyntaxError without touching any machine state."""
    tokens = _tokenize(text)
    if not tokens:
        raise BreakpointSyntaxError("empty breakpoint expression")
    comparisons = []
    i = 0
    while True:
        left, i = _parse_term(tokens, i)
        if i >= len(tokens) or tokens[i][0] != "op" or tokens[i][1] not in _CMP:
            raise BreakpointSyntaxError("expected a comparison operator")
        cmp_fn = _CMP[tokens[i][1]]
        right, i = _parse_term(tokens, i + 1)
        comparisons.append((left, cmp_fn, right))
        if i >= len(tokens):
            break
        if tokens[i] != ("op", "&&"):
            raise BreakpointSyntaxError("expected '&&' between comparisons")
        i += 1

    def fn(state):
        for left, cmp_fn, right in comparisons:
            if not cmp_fn(left(state), right(state)):
                return False
        return True

    return Breakpoint(text, fn)


def as_breakpoint(spec) -> Breakpoint:
    """Accept an expression string, a compiled Breakpoint, or an
    arbitrary host callback state -> bool."""
    if isinstance(spec, Breakpoint):
        return spec
    if isinstance(spec, str):
        return parse_breakpoint(spec)
    if callable(spec):
        return Breakpoint(f"<callable {getattr(spec, '__name__', 'fn')}>", spec)
    raise BreakpointSyntaxError(f"not a breakpoint: {spec!r}")


# ----------------------------------------------------------------------
# instrumented runs
# ----------------------------------------------------------------------

@dataclass(frozen=True)
class TraceEvent:
    """One sized memory access performed by an executed instruction."""
    instr_index: int
    rip: int
    kind: str                 # "R" | "W"
    lin: int
    phys: Optional[int]       # system-level mode only
    nbytes: int
    value: int


STOP_BREAKPOINT = "breakpoint"
STOP_MS = "ms"
STOP_EXHAUSTED = "exhausted"


@dataclass
class RunOutcome:
    stop: str
    breakpoint_index: Optional[int]
    steps: int
    events: List[TraceEvent]
    state_log: List[str]


def emit_state_log_line(instr_index: int, state: MachineState) -> str:
    """Fixed-order bit-exact record: index, then RIP, the 16 GPRs and
    RFLAGS as zero-padded 16-digit upper-case hex fields."""
    regs = " ".join(f"{v:016X}" for v in state.gpr)
    return f"S {instr_index} {state.rip:016X} {regs} {state.rflags:016X}"


def format_mem_log_line(ev: TraceEvent) -> str:
    value = f"{ev.value:0{2 * ev.nbytes}X}"
    return (f"M {ev.instr_index} {ev.rip:016X} {ev.kind} "
            f"{ev.lin:016X} {ev.nbytes} {value}")


def run_with_instrumentation(
        state: MachineState, n: int,
        breakpoints: Sequence[Union[str, Breakpoint, Callable]] = (),
        mem_log: bool = False,
        state_log: bool = False,
        on_step: Optional[Callable[[int, MachineState], None]] = None,
        log_initial_state: bool = True,
        index_base: int = 0) -> RunOutcome:
    """Run up to n steps under instrumentation.

    Breakpoints are evaluated after every step in registration order;
    the first hit stops the run. The final machine state for a given
    step count is identical with and without hooks. Instruction indices
    in logs count from index_base (a session passes its running total).
    """
    compiled = [as_breakpoint(bp) for bp in breakpoints]
    events: List[TraceEvent] = []
    lines: List[str] = []
    if state_log and log_initial_state:
        lines.append(emit_state_log_line(index_base, state))

    current = [0, 0]  # instr index, rip of the executing instruction

    def hook(kind, lin, phys, nbytes, value):
        events.append(TraceEvent(current[0], current[1], kind, lin, phys,
                                 nbytes, value))

    old_hook = state.mem_hook
    if mem_log:
        state.mem_hook = hook
    steps = 0
    stop = STOP_EXHAUSTED
    bp_index: Optional[int] = None
    try:
        while steps < n:
            if state.ms is not None:
                stop = STOP_MS
                break
            if state.rip == state.halt_addr:
                x86_step(state)  # records Halted
                stop = STOP_MS
                break
            current[0] = index_base + steps + 1
            current[1] = state.rip
            x86_step(state)
            steps += 1
            if state_log:
                lines.append(emit_state_log_line(index_base + steps, state))
            if on_step is not None:
                on_step(steps, state)
            if state.ms is not None:
                stop = STOP_MS
                break
            hit = None
            for i, bp in enumerate(compiled):
                if bp.eval(state):
                    hit = i
                    break
            if hit is not None:
                stop = STOP_BREAKPOINT
                bp_index = hit
                break
    finally:
        state.mem_hook = old_hook
    return RunOutcome(stop=stop, breakpoint_index=bp_index, steps=steps,
                      events=events, state_log=lines)
