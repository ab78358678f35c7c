"""Interactive debug sessions over the interpreter.

A session owns one machine state built from a RunConfig and executes
text commands one at a time (the command/response contract used by the
service endpoints and the terminal UI). Observation commands (regs,
flags, mem, disas) read through the quiet path and never change the
machine, the logs, or the undef counter. Parse errors never mutate the
session.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .state import MachineState, GPR_NAMES, FLAG_BITS
from .memory import read_linear_bytes_quiet
from .decode import decode_bytes, disasm_text, DecodeError, Truncated
from .interp import (Breakpoint, parse_breakpoint, BreakpointSyntaxError,
                     run_with_instrumentation, emit_state_log_line,
                     format_mem_log_line, STOP_BREAKPOINT, STOP_MS)
from .config import RunConfig

HELP_TEXT = """\
commands:
  stepi                 execute one instruction
  step N                execute up to N instructions
  continue              run until a breakpoint, a model status, or the
                        remaining step budget
  break EXPR            add a breakpoint (e.g. rip == 0x400650,
                        sum(0x600000,0x600010) > rax, zf == 1 && rax < 5)
  delete N              remove breakpoint N
  breaks                list breakpoints
  regs                  show rip and the general-purpose registers
  flags                 show the decoded status flags
  mem ADDR LEN          hex dump of linear memory
  disas [ADDR [N]]      disassemble N instructions (default 8 at rip)
  log state on|off      per-instruction state logging
  log mem on|off        memory access logging
  reset                 rebuild the machine from the run config
  quit                  print the final state and leave"""


@dataclass
class CommandResult:
    output: str
    error: bool = False
    quit: bool = False
    stopped: Optional[str] = None
    new_state_log: List[str] = field(default_factory=list)
    new_events: List[str] = field(default_factory=list)


class DebugSession:
    def __init__(self, config: RunConfig):
        self.config = config
        self.breakpoints: Dict[int, Breakpoint] = {}
        self._next_bp = 1
        self._reset()

    def _reset(self) -> None:
        self.state: MachineState = self.config.build_state()
        self.steps = 0
        self.log_state_on = False
        self.log_mem_on = False
        self.state_log: List[str] = []
        self.mem_log: List[str] = []

    # ------------------------------------------------------------------

    def _ms_banner(self) -> Optional[str]:
        ms = self.state.ms
        if ms is None:
            return None
        return f"ms: {ms.kind.value} at 0x{ms.at_rip:X} ({ms.detail})"

    def _budget_left(self) -> int:
        return max(0, self.config.max_steps - self.steps)

    def _run(self, limit: int) -> CommandResult:
        state = self.state
        if state.ms is not None:
            return CommandResult(self._ms_banner(), stopped=STOP_MS)
        budget = min(limit, self._budget_left())
        if budget <= 0 and state.rip != state.halt_addr:
            return CommandResult("step budget exhausted", stopped="exhausted")
        outcome = run_with_instrumentation(
            state, budget, breakpoints=list(self.breakpoints.values()),
            mem_log=self.log_mem_on, state_log=self.log_state_on,
            log_initial_state=False, index_base=self.steps)
        self.steps += outcome.steps
        new_lines = outcome.state_log
        new_events = [format_mem_log_line(ev) for ev in outcome.events]
        self.state_log.extend(new_lines)
        self.mem_log.extend(new_events)
        parts = [f"stopped after {outcome.steps} step(s) at rip=0x{state.rip:X}"]
        if outcome.stop == STOP_BREAKPOINT:
            ids = list(self.breakpoints)
            bp_id = ids[outcome.breakpoint_index]
            parts.append(
                f"breakpoint {bp_id}: {self.breakpoints[bp_id].expr}")
        banner = self._ms_banner()
        if banner:
            parts.append(banner)
        return CommandResult("\n".join(parts), stopped=outcome.stop,
                             new_state_log=new_lines, new_events=new_events)

    # ------------------------------------------------------------------
    # observation commands (quiet reads only)
    # ------------------------------------------------------------------

    def _regs_text(self) -> str:
        s = self.state
        lines = [f"rip {s.rip:016X}"]
        lines += [f"{name:<3} {s.gpr[i]:016X}"
                  for i, name in enumerate(GPR_NAMES)]
        lines.append("rflags {:016X} [{}]".format(
            s.rflags, " ".join(f"{n.upper()}={(s.rflags >> b) & 1}"
                               for n, b in FLAG_BITS.items())))
        return "\n".join(lines)

    def _flags_text(self) -> str:
        s = self.state
        return " ".join(f"{n.upper()}={(s.rflags >> b) & 1}"
                        for n, b in FLAG_BITS.items())

    def _mem_text(self, addr: int, length: int) -> str:
        data = read_linear_bytes_quiet(self.state, addr, length)
        if data is None:
            return f"memory at 0x{addr:X} is not mapped"
        lines = []
        for off in range(0, len(data), 16):
            chunk = data[off:off + 16]
            lines.append(f"0x{addr + off:016X}: " +
                         " ".join(f"{b:02x}" for b in chunk))
        return "\n".join(lines)

    def _disas_text(self, addr: int, count: int) -> str:
        lines = []
        pos = addr
        for _ in range(count):
            data = read_linear_bytes_quiet(self.state, pos, 15)
            if data is None:
                lines.append(f"0x{pos:016X}: <unmapped>")
                break
            try:
                di = decode_bytes(data)
            except (DecodeError, Truncated):
                lines.append(f"0x{pos:016X}: {data[0]:02x}"
                             f"{' ' * 21}(db 0x{data[0]:02x})")
                pos += 1
                continue
            raw = di.raw.hex(" ")
            marker = "=> " if pos == self.state.rip else "   "
            lines.append(f"{marker}0x{pos:016X}: {raw:<21} "
                         f"{disasm_text(di, pos + di.length)}")
            pos += di.length
        return "\n".join(lines)

    # ------------------------------------------------------------------

    def execute(self, line: str) -> CommandResult:
        """Run one command; exactly one command is in flight at a time."""
        words = line.strip().split()
        if not words:
            return CommandResult("")
        cmd, args = words[0], words[1:]
        try:
            return self._dispatch(cmd, args, line)
        except BreakpointSyntaxError as e:
            return CommandResult(f"error: {e}", error=True)
        except ValueError as e:
            return CommandResult(f"error: {e}", error=True)

    def _dispatch(self, cmd: str, args: List[str], line: str) -> CommandResult:
        if cmd == "help":
            return CommandResult(HELP_TEXT)
        if cmd == "stepi":
            if args:
                return CommandResult("error: stepi takes no arguments",
                                     error=True)
            return self._run(1)
        if cmd == "step":
            if len(args) != 1:
                return CommandResult("error: usage: step N", error=True)
            n = int(args[0], 0)
            if n <= 0:
                return CommandResult("error: step count must be positive",
                                     error=True)
            return self._run(n)
        if cmd == "continue":
            return self._run(self._budget_left())
        if cmd == "break":
            expr = line.strip()[len("break"):].strip()
            bp = parse_breakpoint(expr)
            bp_id = self._next_bp
            self._next_bp += 1
            self.breakpoints[bp_id] = bp
            return CommandResult(f"breakpoint {bp_id}: {expr}")
        if cmd == "delete":
            if len(args) != 1:
                return CommandResult("error: usage: delete N", error=True)
            bp_id = int(args[0], 0)
            if bp_id not in self.breakpoints:
                return CommandResult(f"error: no breakpoint {bp_id}",
                                     error=True)
            del self.breakpoints[bp_id]
            return CommandResult(f"deleted breakpoint {bp_id}")
        if cmd == "breaks":
            if not self.breakpoints:
                return CommandResult("no breakpoints")
            return CommandResult("\n".join(
                f"{bp_id}: {bp.expr}"
                for bp_id, bp in self.breakpoints.items()))
        if cmd == "regs":
            return CommandResult(self._regs_text())
        if cmd == "flags":
            return CommandResult(self._flags_text())
        if cmd == "mem":
            if len(args) != 2:
                return CommandResult("error: usage: mem ADDR LEN", error=True)
            addr = int(args[0], 0)
            length = int(args[1], 0)
            if not 0 < length <= 4096:
                return CommandResult("error: length must be in 1..4096",
                                     error=True)
            return CommandResult(self._mem_text(addr, length))
        if cmd == "disas":
            addr = int(args[0], 0) if args else self.state.rip
            count = int(args[1], 0) if len(args) > 1 else 8
            return CommandResult(self._disas_text(addr, count))
        if cmd == "log":
            if len(args) != 2 or args[0] not in ("state", "mem") \
                    or args[1] not in ("on", "off"):
                return CommandResult("error: usage: log state|mem on|off",
                                     error=True)
            flag = args[1] == "on"
            if args[0] == "state":
                self.log_state_on = flag
            else:
                self.log_mem_on = flag
            return CommandResult(f"log {args[0]} {args[1]}")
        if cmd == "reset":
            self._reset()
            return CommandResult("machine reset from run config")
        if cmd == "quit":
            final = emit_state_log_line(self.steps, self.state)
            banner = self._ms_banner()
            out = final if banner is None else f"{banner}\n{final}"
            return CommandResult(out, quit=True)
        return CommandResult(f"error: unknown command {cmd!r}", error=True)


def scripted_session(commands: List[str], config: RunConfig) -> str:
    """Headless driver: execute a command script and return the
    deterministic transcript. Stops at quit (implied at end of input)."""
    session = DebugSession(config)
    lines = [f"x64sim debug session: {config.elf or '<no image>'} "
             f"mode={config.mode} os={config.os}"]
    saw_quit = False
    for command in commands:
        lines.append(f"(dbg) {command}")
        result = session.execute(command)
        if result.output:
            lines.append(result.output)
        if result.quit:
            saw_quit = True
            break
    if not saw_quit:
        lines.append("(dbg) quit")
        lines.append(session.execute("quit").output)
    return "\n".join(lines) + "\n"
