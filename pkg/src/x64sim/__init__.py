"""x64sim: an executable x86-64 instruction-set simulator.

User-level mode runs application code over a flat linear memory with
fully simulated system calls; system-level mode adds IA-32e paging
(with marking/non-marking accessed/dirty sub-modes) and system
instructions. A FastAPI service exposes runs and interactive debug
sessions; the CLI wraps the same service layer.
"""

from .state import (MachineState, ModelStatus, MsKind, UndefPolicy, Fault,
                    msr_index, states_equal, OS_LINUX, OS_FREEBSD)
from .memory import (PhysicalMemory, PagingEntry, WalkResult, phys_read,
                     phys_write, la_to_pa, linear_read, linear_write,
                     init_system_level_mode)
from .decode import DecodedInst, decode_bytes, fetch_and_decode, \
    effective_address, disasm_text
from .semantics import exec_instruction, implemented_report
from .environment import Environment, oracle_pop, load_oracle_file
from .loader import LoadImage, LoadError, parse_elf, parse_elf_file, \
    binary_file_load, init_x86_state
from .interp import (x86_step, x86_run, run_with_instrumentation,
                     Breakpoint, parse_breakpoint, TraceEvent, RunOutcome,
                     emit_state_log_line, format_mem_log_line)

__version__ = "0.1.0"

__all__ = [
    "MachineState", "ModelStatus", "MsKind", "UndefPolicy", "Fault",
    "msr_index", "states_equal", "OS_LINUX", "OS_FREEBSD",
    "PhysicalMemory", "PagingEntry", "WalkResult", "phys_read", "phys_write",
    "la_to_pa", "linear_read", "linear_write", "init_system_level_mode",
    "DecodedInst", "decode_bytes", "fetch_and_decode", "effective_address",
    "disasm_text", "exec_instruction", "implemented_report",
    "Environment", "oracle_pop", "load_oracle_file",
    "LoadImage", "LoadError", "parse_elf", "parse_elf_file",
    "binary_file_load", "init_x86_state",
    "x86_step", "x86_run", "run_with_instrumentation", "Breakpoint",
    "parse_breakpoint", "TraceEvent", "RunOutcome", "emit_state_log_line",
    "format_mem_log_line",
]
