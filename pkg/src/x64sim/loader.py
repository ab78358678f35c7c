"""ELF64 executable parsing and machine-state initialization for a run."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Tuple

from .state import MachineState, ModelStatus, MASK64
from .memory import write_linear_bytes

PT_LOAD = 1

MACHO_MAGICS = {0xFEEDFACE, 0xFEEDFACF, 0xCEFAEDFE, 0xCFFAEDFE,
                0xCAFEBABE, 0xBEBAFECA}


class LoadError(Exception):
    """Executable file rejected; the message names the failed check."""


@dataclass
class LoadSegment:
    vaddr: int
    data: bytes
    mem_size: int
    flags: str  # subset of "rwx"


@dataclass
class LoadImage:
    segments: List[LoadSegment]
    entry: int


def parse_elf(data: bytes) -> LoadImage:
    """Parse an ELF64 little-endian executable into its loadable
    segments and entry point."""
    if len(data) >= 4:
        word = int.from_bytes(data[:4], "big")
        if word in MACHO_MAGICS or int.from_bytes(data[:4], "little") in MACHO_MAGICS:
            raise LoadError("unsupported format: Mach-O (only ELF is supported)")
    if len(data) < 64:
        raise LoadError("bad magic: file shorter than an ELF header")
    if data[:4] != b"\x7fELF":
        raise LoadError("bad magic")
    if data[4] != 2:
        raise LoadError("not 64-bit")
    if data[5] != 1:
        raise LoadError("not little-endian")

    entry, phoff = struct.unpack_from("<QQ", data, 0x18)
    phentsize, phnum = struct.unpack_from("<HH", data, 0x36)
    if phnum and phoff + phnum * phentsize > len(data):
        raise LoadError("program header table out of bounds")

    segments = []
    for i in range(phnum):
        off = phoff + i * phentsize
        p_type, p_flags, p_offset, p_vaddr, _p_paddr, p_filesz, p_memsz = \
            struct.unpack_from("<IIQQQQQ", data, off)
        if p_type != PT_LOAD:
            continue
        if p_offset + p_filesz > len(data):
            raise LoadError(f"segment {i} file range out of bounds")
        if p_memsz < p_filesz:
            raise LoadError(f"segment {i} mem size below file size")
        flags = ""
        if p_flags & 4:
            flags += "r"
        if p_flags & 2:
            flags += "w"
        if p_flags & 1:
            flags += "x"
        segments.append(LoadSegment(vaddr=p_vaddr,
                                    data=bytes(data[p_offset:p_offset + p_filesz]),
                                    mem_size=p_memsz, flags=flags))
    return LoadImage(segments=segments, entry=entry)


def parse_elf_file(path: str) -> LoadImage:
    with open(path, "rb") as fh:
        return parse_elf(fh.read())


def binary_file_load(state: MachineState, image: LoadImage) -> None:
    """Write every loadable segment into linear memory and zero-fill
    the bss tail. In system-level mode the paging structures must
    already map the target range, so set them up first."""
    for seg in image.segments:
        if seg.data:
            write_linear_bytes(state, seg.vaddr, seg.data)
        tail = seg.mem_size - len(seg.data)
        if tail > 0:
            write_linear_bytes(state, seg.vaddr + len(seg.data), bytes(tail))


def init_x86_state(state: MachineState,
                   ms_init: Optional[ModelStatus],
                   start_rip: int,
                   halt_addr: Optional[int],
                   reg_inits: List[Tuple[int, int]] = (),
                   flag_init: Optional[int] = None,
                   mem_updates: List[Tuple[int, int]] = ()) -> None:
    """Prepare the state for a run: set ms (normally empty), the
    instruction pointer, the halt address, then apply register, flag,
    and per-byte memory updates in order."""
    state.ms = ms_init
    state.rip = start_rip & MASK64
    if halt_addr != state.halt_addr:
        state.halt_addr = halt_addr
        state._flush_exec_cache()  # cached blocks embed the old halt address
    for index, value in reg_inits:
        state.write_gpr(index, 8, value)
    if flag_init is not None:
        state.set_rflags(flag_init)
    for addr, byte in mem_updates:
        write_linear_bytes(state, addr, bytes([byte & 0xFF]))
