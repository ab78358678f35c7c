"""One-shot run execution shared by the CLI and the service."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

from .state import MachineState, MsKind
from .config import RunConfig
from .interp import x86_run, run_with_instrumentation, format_mem_log_line

EXIT_HALTED = 0
EXIT_USAGE = 1
EXIT_EXHAUSTED = 2
EXIT_FAULT = 3


@dataclass
class RunResult:
    state: MachineState
    steps: int
    status: str               # halted | exhausted | fault
    exit_code: int
    state_log: Optional[List[str]] = None
    mem_log: Optional[List[str]] = None


def execute_run(config: RunConfig, collect_logs: bool = False) -> RunResult:
    """Build the machine from the config, run it, and write any
    configured log files. Exit status: 0 halted, 2 step budget
    exhausted, 3 fault recorded in ms."""
    state = config.build_state()
    want_logs = collect_logs or config.log_state or config.log_mem
    if want_logs:
        outcome = run_with_instrumentation(
            state, config.max_steps, state_log=True,
            mem_log=bool(config.log_mem) or collect_logs)
        steps = outcome.steps
        state_lines = outcome.state_log
        mem_lines = [format_mem_log_line(ev) for ev in outcome.events]
        if config.log_state:
            with open(config.log_state, "w") as fh:
                fh.write("\n".join(state_lines) + "\n")
        if config.log_mem:
            with open(config.log_mem, "w") as fh:
                if mem_lines:
                    fh.write("\n".join(mem_lines) + "\n")
                else:
                    fh.write("")
    else:
        steps = x86_run(state, config.max_steps)
        state_lines = None
        mem_lines = None

    ms = state.ms
    if ms is None:
        status, code = "exhausted", EXIT_EXHAUSTED
    elif ms.kind == MsKind.HALTED:
        status, code = "halted", EXIT_HALTED
    else:
        status, code = "fault", EXIT_FAULT
    return RunResult(state=state, steps=steps, status=status, exit_code=code,
                     state_log=state_lines, mem_log=mem_lines)


def summarize(result: RunResult) -> str:
    state = result.state
    ms = state.ms
    ms_text = "none" if ms is None else \
        f"{ms.kind.value} at 0x{ms.at_rip:X} ({ms.detail})"
    return "\n".join([
        f"ms:    {ms_text}",
        f"rip:   0x{state.rip:016X}",
        f"rax:   0x{state.gpr[0]:016X}",
        f"steps: {result.steps}",
    ])
