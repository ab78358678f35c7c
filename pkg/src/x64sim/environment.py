"""Simulated external world: file system, descriptor table, oracle.

The environment is the part of the outside world that system calls
read or change. Non-deterministic results (the descriptor returned by
open, the one returned by dup) come from the oracle: a map from
instruction addresses to queued values, consumed front-first. The
caller initializes the oracle for the run; an empty queue is a model
error, not a guest-visible one.

User-level syscall semantics are keyed by the state's OS selector:
the same eight calls exist on Linux and FreeBSD under different
numbers. Error returns use negated Linux-style codes in rax for both.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from .state import MachineState, MsKind, Fault, MASK64, OS_LINUX, OS_FREEBSD

EBADF = 9
ENOENT = 2

FD_STDIN, FD_STDOUT, FD_STDERR = 0, 1, 2

SYSCALL_NUMBERS = {
    # numbers from the Linux x86-64 syscall table
    OS_LINUX: {"read": 0, "write": 1, "open": 2, "close": 3, "lseek": 8,
               "dup": 32, "link": 86, "unlink": 87},
    # numbers from FreeBSD's syscalls.master (amd64)
    OS_FREEBSD: {"read": 3, "write": 4, "open": 5, "close": 6, "lseek": 478,
                 "dup": 41, "link": 9, "unlink": 10},
}

SYSCALL_DISPATCH = {
    os_name: {num: call for call, num in table.items()}
    for os_name, table in SYSCALL_NUMBERS.items()
}


class OpenFile:
    """One open-file description; dup'd descriptors share it."""

    __slots__ = ("kind", "path", "data", "offset", "readable", "writable")

    def __init__(self, kind, path=None, data=None, offset=0,
                 readable=True, writable=True):
        self.kind = kind          # stdin | stdout | stderr | file
        self.path = path
        self.data = data          # bytearray shared with Environment.files
        self.offset = offset
        self.readable = readable
        self.writable = writable

    def __eq__(self, other):
        if not isinstance(other, OpenFile):
            return NotImplemented
        return (self.kind == other.kind and self.path == other.path
                and self.offset == other.offset
                and self.readable == other.readable
                and self.writable == other.writable
                and (self.data == other.data))

    def __repr__(self):
        return f"<OpenFile {self.kind} {self.path!r} off={self.offset}>"


@dataclass
class Environment:
    """files: path -> byte content (linked paths alias one bytearray);
    fds: descriptor table over shared OpenFile objects; stdin is a
    byte buffer with a read cursor, stdout/stderr grow-only buffers."""
    files: Dict[str, bytearray] = field(default_factory=dict)
    fds: Dict[int, OpenFile] = field(default_factory=dict)
    stdin: bytearray = field(default_factory=bytearray)
    stdin_pos: int = 0
    stdout: bytearray = field(default_factory=bytearray)
    stderr: bytearray = field(default_factory=bytearray)
    oracle: Dict[int, List[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.fds:
            self.fds = {
                FD_STDIN: OpenFile("stdin", readable=True, writable=False),
                FD_STDOUT: OpenFile("stdout", readable=False, writable=True),
                FD_STDERR: OpenFile("stderr", readable=False, writable=True),
            }


def oracle_pop(state: MachineState, lin: int) -> int:
    """Consume the next oracle value queued at a linear address."""
    queue = state.env.oracle.get(lin)
    if not queue:
        state.set_ms(MsKind.ORACLE_EMPTY,
                     f"oracle has no value for address 0x{lin:X}")
        raise Fault(MsKind.ORACLE_EMPTY,
                    f"oracle has no value for address 0x{lin:X}")
    return queue.pop(0)


def load_oracle_file(path: str) -> Dict[int, List[int]]:
    """Oracle init format: one entry per line, a hex linear address
    followed by whitespace-separated hex values; '#' starts a comment."""
    oracle: Dict[int, List[int]] = {}
    with open(path) as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            addr = int(parts[0], 16)
            oracle.setdefault(addr, []).extend(int(v, 16) for v in parts[1:])
    return oracle


def _neg_errno(code: int) -> int:
    return (-code) & MASK64


def _read_c_string(state: MachineState, lin: int, limit: int = 4096) -> Optional[str]:
    from .memory import read_linear_bytes_quiet
    data = read_linear_bytes_quiet(state, lin, limit)
    if data is None:
        return None
    end = data.find(b"\x00")
    if end < 0:
        return None
    return data[:end].decode("latin-1")


def env_syscall(state: MachineState) -> None:
    """Dispatch the extended user-level syscall in rax.

    Arguments follow the integer convention (rdi, rsi, rdx); the result
    or negated error code lands in rax. Only rax among the registers is
    written; memory changes only through read's buffer.
    """
    num = state.gpr[0]
    call = SYSCALL_DISPATCH[state.os_info].get(num)
    if call is None:
        state.set_ms(MsKind.SYSCALL_FAULT,
                     f"unknown {state.os_info} syscall {num}")
        raise Fault(MsKind.SYSCALL_FAULT,
                    f"unknown {state.os_info} syscall {num}")
    arg0 = state.gpr[7]   # rdi
    arg1 = state.gpr[6]   # rsi
    arg2 = state.gpr[2]   # rdx
    result = _SYSCALLS[call](state, arg0, arg1, arg2)
    if result is not None:
        state.gpr[0] = result & MASK64


def sys_read(state: MachineState, fd: int, buf: int, count: int) -> int:
    from .memory import write_linear_bytes
    env = state.env
    f = env.fds.get(fd)
    if f is None or not f.readable:
        return _neg_errno(EBADF)
    if f.kind == "stdin":
        data = bytes(env.stdin[env.stdin_pos:env.stdin_pos + count])
        env.stdin_pos += len(data)
    else:
        data = bytes(f.data[f.offset:f.offset + count])
        f.offset += len(data)
    if data:
        write_linear_bytes(state, buf, data)
    return len(data)


def sys_write(state: MachineState, fd: int, buf: int, count: int) -> int:
    from .memory import read_linear_bytes
    env = state.env
    f = env.fds.get(fd)
    if f is None or not f.writable:
        return _neg_errno(EBADF)
    data = read_linear_bytes(state, buf, count) if count else b""
    if f.kind == "stdout":
        env.stdout.extend(data)
    elif f.kind == "stderr":
        env.stderr.extend(data)
    else:
        end = f.offset + len(data)
        if f.offset > len(f.data):
            f.data.extend(b"\x00" * (f.offset - len(f.data)))
        if end > len(f.data):
            f.data.extend(b"\x00" * (end - len(f.data)))
        f.data[f.offset:end] = data
        f.offset = end
    return count


def sys_open(state: MachineState, path_ptr: int, flags: int, _arg2: int) -> Optional[int]:
    env = state.env
    path = _read_c_string(state, path_ptr)
    if path is None or path not in env.files:
        return _neg_errno(ENOENT)
    # the new descriptor is non-deterministic: take it from the oracle
    fd = oracle_pop(state, state.rip)
    acc = flags & 0x3
    env.fds[fd] = OpenFile("file", path=path, data=env.files[path], offset=0,
                           readable=acc in (0, 2), writable=acc in (1, 2))
    return fd


def sys_close(state: MachineState, fd: int, _a1: int, _a2: int) -> int:
    env = state.env
    if fd not in env.fds:
        return _neg_errno(EBADF)
    del env.fds[fd]
    return 0


def sys_lseek(state: MachineState, fd: int, offset: int, whence: int) -> int:
    env = state.env
    f = env.fds.get(fd)
    if f is None or f.kind != "file":
        return _neg_errno(EBADF)
    delta = offset - (1 << 64) if offset & (1 << 63) else offset
    if whence == 0:
        base = 0
    elif whence == 1:
        base = f.offset
    elif whence == 2:
        base = len(f.data)
    else:
        return _neg_errno(EBADF)
    f.offset = (base + delta) & MASK64
    return f.offset


def sys_dup(state: MachineState, fd: int, _a1: int, _a2: int) -> Optional[int]:
    env = state.env
    f = env.fds.get(fd)
    if f is None:
        return _neg_errno(EBADF)
    # duplicate descriptor number comes from the oracle, and both
    # descriptors share one open-file description (offset included)
    new_fd = oracle_pop(state, state.rip)
    env.fds[new_fd] = f
    return new_fd


def sys_link(state: MachineState, old_ptr: int, new_ptr: int, _a2: int) -> int:
    env = state.env
    old = _read_c_string(state, old_ptr)
    new = _read_c_string(state, new_ptr)
    if old is None or new is None or old not in env.files:
        return _neg_errno(ENOENT)
    env.files[new] = env.files[old]
    return 0


def sys_unlink(state: MachineState, path_ptr: int, _a1: int, _a2: int) -> int:
    env = state.env
    path = _read_c_string(state, path_ptr)
    if path is None or path not in env.files:
        return _neg_errno(ENOENT)
    del env.files[path]
    return 0


_SYSCALLS = {
    "read": sys_read,
    "write": sys_write,
    "open": sys_open,
    "close": sys_close,
    "lseek": sys_lseek,
    "dup": sys_dup,
    "link": sys_link,
    "unlink": sys_unlink,
}
