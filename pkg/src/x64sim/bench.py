"""Throughput benchmark: a tight arithmetic loop driven through the
interpreter in user-level and system-level (marking) modes."""

from __future__ import annotations

import time
from dataclasses import dataclass

from .state import MachineState
from .memory import init_system_level_mode, write_linear_bytes
from .loader import init_x86_state
from .interp import x86_run

CODE_BASE = 0x400000

# add rax,1 ; add rbx,rax ; xor rax,rbx ; sub rcx,1 ; jnz loop
LOOP_CODE = bytes.fromhex("4883c001" "4801c3" "4831d8" "4883e901" "75f0")


def build_loop_state(user_level: bool = True, marking: bool = True,
                     undef_policy=None) -> MachineState:
    from .state import UndefPolicy
    state = MachineState(undef_policy=undef_policy or UndefPolicy("injective"))
    if not user_level:
        init_system_level_mode(state, 0)
        state.marking_mode = marking
    write_linear_bytes(state, CODE_BASE, LOOP_CODE)
    init_x86_state(state, None, CODE_BASE, CODE_BASE + len(LOOP_CODE),
                   reg_inits=[(1, 1 << 62)])  # rcx never reaches zero
    return state


@dataclass
class BenchResult:
    user_steps: int
    user_seconds: float
    system_steps: int
    system_seconds: float

    @property
    def user_rate(self) -> float:
        return self.user_steps / self.user_seconds

    @property
    def system_rate(self) -> float:
        return self.system_steps / self.system_seconds

    @property
    def ratio(self) -> float:
        return self.user_rate / self.system_rate


def run_benchmark(user_steps: int = 10_000_000,
                  system_steps: int = 10_000_000) -> BenchResult:
    state = build_loop_state(user_level=True)
    x86_run(state, 50_000)  # warm the decode cache
    t0 = time.perf_counter()
    done = x86_run(state, user_steps)
    user_seconds = time.perf_counter() - t0
    assert done == user_steps and state.ms is None

    state = build_loop_state(user_level=False, marking=True)
    x86_run(state, 50_000)
    t0 = time.perf_counter()
    done = x86_run(state, system_steps)
    system_seconds = time.perf_counter() - t0
    assert done == system_steps and state.ms is None

    return BenchResult(user_steps, user_seconds, system_steps, system_seconds)


def format_report(r: BenchResult) -> str:
    return "\n".join([
        f"user-level:     {r.user_steps:>12,} steps  "
        f"{r.user_seconds:8.2f}s  {r.user_rate / 1e6:8.3f} M inst/s",
        f"system-marking: {r.system_steps:>12,} steps  "
        f"{r.system_seconds:8.2f}s  {r.system_rate / 1e3:8.1f} K inst/s",
        f"user/system ratio: {r.ratio:.1f}x",
    ])


if __name__ == "__main__":
    print(format_report(run_benchmark()))
