"""Machine state: registers, flags, model status, and the undefined-value pool.

The simulator state is a single mutable object. Accessors keep the
architectural invariants (sub-register aliasing, 32-bit zero extension,
fixed RFLAGS bits) in one place so instruction handlers never touch raw
bit layout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

MASK64 = (1 << 64) - 1

GPR_NAMES = [
    "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
    "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
]
GPR_INDEX = {name: i for i, name in enumerate(GPR_NAMES)}

RAX, RCX, RDX, RBX, RSP, RBP, RSI, RDI = range(8)
R8, R9, R10, R11, R12, R13, R14, R15 = range(8, 16)

SEG_NAMES = ["es", "cs", "ss", "ds", "fs", "gs"]

# Status/control flag bit positions within RFLAGS.
FLAG_BITS = {"cf": 0, "pf": 2, "af": 4, "zf": 6, "sf": 7, "df": 10, "of": 11}

# Bit 1 always reads as 1; bits 3, 5 and 15 always read as 0.
RFLAGS_FIXED_ONE = 0x2
RFLAGS_FIXED_ZERO = (1 << 3) | (1 << 5) | (1 << 15)


def normalize_rflags(value: int) -> int:
    return (value | RFLAGS_FIXED_ONE) & ~RFLAGS_FIXED_ZERO & MASK64


# Model MSR file: fixed-size array indexed by model slot, not by the
# architectural 32-bit identifier.
MSR_NAMES = [
    "ia32_efer", "ia32_fs_base", "ia32_gs_base", "ia32_kernel_gs_base",
    "ia32_lstar", "ia32_star", "ia32_fmask",
]
MSR_EFER, MSR_FS_BASE, MSR_GS_BASE, MSR_KERNEL_GS_BASE = 0, 1, 2, 3
MSR_LSTAR, MSR_STAR, MSR_FMASK = 4, 5, 6

# Architectural identifier -> model slot.
MSR_INDEX_MAP = {
    0xC0000080: MSR_EFER,
    0xC0000100: MSR_FS_BASE,
    0xC0000101: MSR_GS_BASE,
    0xC0000102: MSR_KERNEL_GS_BASE,
    0xC0000082: MSR_LSTAR,
    0xC0000081: MSR_STAR,
    0xC0000084: MSR_FMASK,
}


def msr_index(identifier: int) -> int:
    """Map an architectural MSR identifier to its model slot.

    Raises KeyError for identifiers outside the modeled set, which the
    caller reports as an unimplemented MSR.
    """
    try:
        return MSR_INDEX_MAP[identifier]
    except KeyError:
        raise KeyError(f"unimplemented msr 0x{identifier:08X}") from None


class MsKind(str, enum.Enum):
    HALTED = "halted"
    UNIMPLEMENTED_OPCODE = "unimplemented-opcode"
    DECODE_ERROR = "decode-error"
    PAGE_FAULT = "page-fault"
    DIVIDE_ERROR = "divide-error"
    BAD_MEMORY_ACCESS = "bad-memory-access"
    SYSCALL_FAULT = "syscall-fault"
    ORACLE_EMPTY = "oracle-empty"


@dataclass(frozen=True)
class ModelStatus:
    """Model-level error/halt record. Once set it freezes the interpreter."""
    kind: MsKind
    at_rip: int
    detail: str = ""


class Fault(Exception):
    """Raised on the error path of memory/decode/execute operations.

    The raiser (or the nearest frame that owns the state) records a
    ModelStatus before unwinding; the interpreter catches this at the
    instruction boundary.
    """

    def __init__(self, kind: MsKind, detail: str = ""):
        super().__init__(f"{kind.value}: {detail}")
        self.kind = kind
        self.detail = detail


OS_LINUX = "linux"
OS_FREEBSD = "freebsd"


@dataclass(frozen=True)
class UndefPolicy:
    """How indeterminate values are produced from the undef counter.

    injective: fixed bijective 64-bit mix of the counter; plays the
        "unique token" role (distinct counters give distinct values).
    zero: always 0.
    seeded: pure function of (seed, counter); replayable runs.
    """
    mode: str = "injective"  # injective | zero | seeded
    seed: int = 0


def _mix64(z: int) -> int:
    # splitmix64 finalizer; bijective on 64-bit inputs
    z = (z + 0x9E3779B97F4A7C15) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def create_undef(policy: UndefPolicy, counter: int) -> int:
    if policy.mode == "zero":
        return 0
    if policy.mode == "seeded":
        return _mix64((counter * 0x9E3779B97F4A7C15 + policy.seed) & MASK64)
    return _mix64(counter & MASK64)


@dataclass
class TableRegister:
    """gdtr/idtr pseudo-descriptor."""
    base: int = 0
    limit: int = 0


class MachineState:
    """Complete simulator state.

    Owned by exactly one execution context at a time; all mutation is
    in place. `exec_cache` and `exec_meta` are derived data (decoded
    instruction thunks keyed by rip) and never affect visible behavior.
    """

    __slots__ = (
        "gpr", "rip", "rflags", "seg_selector", "fs_base", "gs_base",
        "gdtr", "idtr", "cr0", "cr2", "cr3", "cr4", "msr", "mem", "ms",
        "halt_addr", "user_level_mode", "marking_mode", "undef_seed",
        "os_info", "env", "undef_policy", "exec_cache", "exec_meta",
        "mem_hook",
    )

    def __init__(self, mem=None, env=None, os_info: str = OS_LINUX,
                 undef_policy: UndefPolicy = UndefPolicy()):
        from .memory import PhysicalMemory
        from .environment import Environment

        self.gpr = [0] * 16
        self.rip = 0
        self.rflags = RFLAGS_FIXED_ONE
        self.seg_selector = [0] * 6
        self.fs_base = 0
        self.gs_base = 0
        self.gdtr = TableRegister()
        self.idtr = TableRegister()
        self.cr0 = 0
        self.cr2 = 0
        self.cr3 = 0
        self.cr4 = 0
        self.msr = [0] * 7
        self.mem = mem if mem is not None else PhysicalMemory()
        self.ms: Optional[ModelStatus] = None
        self.halt_addr: Optional[int] = None
        self.user_level_mode = True
        self.marking_mode = True
        self.undef_seed = 0
        self.os_info = os_info
        self.env = env if env is not None else Environment()
        self.undef_policy = undef_policy
        self.exec_cache = {}
        self.exec_meta = {}
        self.mem_hook = None
        self.mem.on_code_write = self._flush_exec_cache

    # ------------------------------------------------------------------
    # general-purpose registers
    # ------------------------------------------------------------------

    def read_gpr(self, index: int, nbytes: int = 8, high: bool = False) -> int:
        v = self.gpr[index]
        if nbytes == 8:
            return v
        if nbytes == 4:
            return v & 0xFFFFFFFF
        if nbytes == 2:
            return v & 0xFFFF
        if high:
            return (v >> 8) & 0xFF
        return v & 0xFF

    def write_gpr(self, index: int, nbytes: int, value: int,
                  high: bool = False) -> None:
        g = self.gpr
        if nbytes == 8:
            g[index] = value & MASK64
        elif nbytes == 4:
            # 32-bit writes zero-extend into the upper half
            g[index] = value & 0xFFFFFFFF
        elif nbytes == 2:
            g[index] = (g[index] & ~0xFFFF) | (value & 0xFFFF)
        elif high:
            g[index] = (g[index] & ~0xFF00) | ((value & 0xFF) << 8)
        else:
            g[index] = (g[index] & ~0xFF) | (value & 0xFF)

    # ------------------------------------------------------------------
    # flags
    # ------------------------------------------------------------------

    def read_flag(self, flag: str) -> int:
        return (self.rflags >> FLAG_BITS[flag]) & 1

    def write_flag(self, flag: str, bit: int) -> None:
        pos = FLAG_BITS[flag]
        if bit:
            self.rflags = normalize_rflags(self.rflags | (1 << pos))
        else:
            self.rflags = normalize_rflags(self.rflags & ~(1 << pos))

    def set_rflags(self, value: int) -> None:
        self.rflags = normalize_rflags(value)

    # ------------------------------------------------------------------
    # model status and undefined values
    # ------------------------------------------------------------------

    def set_ms(self, kind: MsKind, detail: str = "",
               at_rip: Optional[int] = None) -> None:
        # first error wins; only explicit re-initialization clears ms
        if self.ms is None:
            self.ms = ModelStatus(kind, self.rip if at_rip is None else at_rip,
                                  detail)

    def undef_read(self) -> int:
        """Return the next indeterminate value and advance the counter.

        Equivalent to create_undef(undef_policy, undef_seed) with the
        counter bumped by one; the policy math is unrolled here because
        this sits on the hot path of every undefined-flag instruction.
        """
        policy = self.undef_policy
        seed = self.undef_seed
        self.undef_seed = seed + 1
        mode = policy.mode
        if mode == "zero":
            return 0
        if mode == "seeded":
            seed = seed * 0x9E3779B97F4A7C15 + policy.seed
        # splitmix64 finalizer, inlined (must stay in step with _mix64)
        z = (seed + 0x9E3779B97F4A7C15) & MASK64
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        return z ^ (z >> 31)

    # ------------------------------------------------------------------
    # housekeeping
    # ------------------------------------------------------------------

    def _flush_exec_cache(self) -> None:
        self.exec_cache.clear()
        self.exec_meta.clear()

    def clone(self) -> "MachineState":
        import copy

        s = MachineState(mem=self.mem.clone(), env=copy.deepcopy(self.env),
                         os_info=self.os_info, undef_policy=self.undef_policy)
        s.gpr = self.gpr[:]
        s.rip = self.rip
        s.rflags = self.rflags
        s.seg_selector = self.seg_selector[:]
        s.fs_base = self.fs_base
        s.gs_base = self.gs_base
        s.gdtr = TableRegister(self.gdtr.base, self.gdtr.limit)
        s.idtr = TableRegister(self.idtr.base, self.idtr.limit)
        s.cr0, s.cr2, s.cr3, s.cr4 = self.cr0, self.cr2, self.cr3, self.cr4
        s.msr = self.msr[:]
        s.ms = self.ms
        s.halt_addr = self.halt_addr
        s.user_level_mode = self.user_level_mode
        s.marking_mode = self.marking_mode
        s.undef_seed = self.undef_seed
        return s


def states_equal(a: MachineState, b: MachineState) -> bool:
    """Full-state equality over everything the machine can observe.

    Memory compares on nonzero byte content (absent bytes read as 0).
    """
    return (
        a.gpr == b.gpr
        and a.rip == b.rip
        and a.rflags == b.rflags
        and a.seg_selector == b.seg_selector
        and a.fs_base == b.fs_base
        and a.gs_base == b.gs_base
        and (a.gdtr.base, a.gdtr.limit) == (b.gdtr.base, b.gdtr.limit)
        and (a.idtr.base, a.idtr.limit) == (b.idtr.base, b.idtr.limit)
        and (a.cr0, a.cr2, a.cr3, a.cr4) == (b.cr0, b.cr2, b.cr3, b.cr4)
        and a.msr == b.msr
        and a.ms == b.ms
        and a.halt_addr == b.halt_addr
        and a.user_level_mode == b.user_level_mode
        and a.marking_mode == b.marking_mode
        and a.undef_seed == b.undef_seed
        and a.os_info == b.os_info
        and a.env == b.env
        and a.mem.nonzero_map() == b.mem.nonzero_map()
    )
