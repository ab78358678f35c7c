"""Physical memory, IA-32e paging, and the uniform linear memory interface.

Physical memory is a sparse page store over a 2^52-byte space; absent
bytes read as zero. In user-level mode the same store is indexed
directly by linear addresses. In system-level mode every linear access
is translated by a 4-level page walk rooted at cr3, with 1 GiB and
2 MiB large-page support; the marking sub-mode records accessed/dirty
bits as translation side effects, the non-marking sub-mode leaves the
tables untouched.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

from .state import MachineState, MsKind, Fault, MASK64

PHYS_ADDR_BITS = 52
PHYS_LIMIT = 1 << PHYS_ADDR_BITS

PAGE_SHIFT = 12
PAGE_SIZE = 1 << PAGE_SHIFT
PAGE_MASK = PAGE_SIZE - 1

# paging entry bits
PTE_P = 1 << 0
PTE_RW = 1 << 1
PTE_US = 1 << 2
PTE_A = 1 << 5
PTE_D = 1 << 6
PTE_PS = 1 << 7
PTE_ADDR_MASK = 0x000FFFFFFFFFF000       # bits 51..12
PTE_ADDR_MASK_1G = 0x000FFFFFC0000000    # bits 51..30
PTE_ADDR_MASK_2M = 0x000FFFFFFFE00000    # bits 51..21

LEVEL_PML4 = "PML4"
LEVEL_PDPT = "PDPT"
LEVEL_PD = "PD"
LEVEL_PT = "PT"


def is_canonical(lin: int) -> bool:
    top = lin >> 47
    return top == 0 or top == 0x1FFFF


@dataclass(frozen=True)
class PagingEntry:
    """Structured view over one raw 64-bit paging entry."""
    raw: int

    @property
    def present(self) -> bool:
        return bool(self.raw & PTE_P)

    @property
    def writable(self) -> bool:
        return bool(self.raw & PTE_RW)

    @property
    def user(self) -> bool:
        return bool(self.raw & PTE_US)

    @property
    def accessed(self) -> bool:
        return bool(self.raw & PTE_A)

    @property
    def dirty(self) -> bool:
        return bool(self.raw & PTE_D)

    @property
    def page_size(self) -> bool:
        return bool(self.raw & PTE_PS)

    def table_addr(self) -> int:
        return self.raw & PTE_ADDR_MASK

    def frame_addr(self, level: str) -> int:
        if level == LEVEL_PDPT:
            return self.raw & PTE_ADDR_MASK_1G
        if level == LEVEL_PD:
            return self.raw & PTE_ADDR_MASK_2M
        return self.raw & PTE_ADDR_MASK


@dataclass
class WalkResult:
    """Outcome of a successful page walk."""
    phys: int
    touched_entries: List[Tuple[int, str]]  # (entry physical address, level)


class PhysicalMemory:
    """Sparse byte store over physical addresses below 2^52.

    Backed by a dict of 4 KiB bytearray pages; absent pages read as
    zero. `code_pages`/`on_code_write` support invalidation of cached
    decoded instructions when their backing bytes change.
    """

    __slots__ = ("pages", "code_pages", "on_code_write")

    def __init__(self):
        self.pages = {}
        self.code_pages = set()
        self.on_code_write = None

    # raw byte interface (no address-range policy; used for both the
    # physical and, in user-level mode, the linear view)

    def read_bytes(self, addr: int, n: int) -> bytes:
        pages = self.pages
        out = bytearray()
        while n:
            page = addr >> PAGE_SHIFT
            off = addr & PAGE_MASK
            take = min(n, PAGE_SIZE - off)
            buf = pages.get(page)
            if buf is None:
                out.extend(b"\x00" * take)
            else:
                out.extend(buf[off:off + take])
            addr += take
            n -= take
        return bytes(out)

    def write_bytes(self, addr: int, data: bytes) -> None:
        pages = self.pages
        code_pages = self.code_pages
        i = 0
        n = len(data)
        while i < n:
            page = addr >> PAGE_SHIFT
            off = addr & PAGE_MASK
            take = min(n - i, PAGE_SIZE - off)
            buf = pages.get(page)
            if buf is None:
                buf = bytearray(PAGE_SIZE)
                pages[page] = buf
            buf[off:off + take] = data[i:i + take]
            if page in code_pages and self.on_code_write is not None:
                code_pages.clear()
                self.on_code_write()
            addr += take
            i += take

    def read_u(self, addr: int, n: int) -> int:
        page = addr >> PAGE_SHIFT
        off = addr & PAGE_MASK
        if off + n <= PAGE_SIZE:
            buf = self.pages.get(page)
            if buf is None:
                return 0
            return int.from_bytes(buf[off:off + n], "little")
        return int.from_bytes(self.read_bytes(addr, n), "little")

    def write_u(self, addr: int, n: int, value: int) -> None:
        self.write_bytes(addr, (value & ((1 << (8 * n)) - 1)).to_bytes(n, "little"))

    def mark_code_page(self, addr: int) -> None:
        self.code_pages.add(addr >> PAGE_SHIFT)

    def nonzero_map(self) -> dict:
        """Address -> byte for every nonzero byte; canonical content view."""
        out = {}
        for page, buf in self.pages.items():
            base = page << PAGE_SHIFT
            for i, b in enumerate(buf):
                if b:
                    out[base + i] = b
        return out

    def clone(self) -> "PhysicalMemory":
        m = PhysicalMemory()
        m.pages = {p: bytearray(b) for p, b in self.pages.items()}
        return m


VALID_ACCESS_SIZES = (1, 2, 4, 8, 16)


def phys_read(mem: PhysicalMemory, addr: int, nbytes: int) -> int:
    """Little-endian read from physical memory; unwritten bytes are 0."""
    if addr < 0 or addr + nbytes > PHYS_LIMIT:
        raise Fault(MsKind.BAD_MEMORY_ACCESS,
                    f"physical read out of range at 0x{addr:X}")
    return mem.read_u(addr, nbytes)


def phys_write(mem: PhysicalMemory, addr: int, nbytes: int, value: int) -> None:
    if addr < 0 or addr + nbytes > PHYS_LIMIT:
        raise Fault(MsKind.BAD_MEMORY_ACCESS,
                    f"physical write out of range at 0x{addr:X}")
    mem.write_u(addr, nbytes, value)


def la_to_pa(state: MachineState, lin: int, access: str = "read",
             mark: Optional[bool] = None, record: bool = True) -> WalkResult:
    """Translate a linear address through the 4-level page tables.

    In marking mode the accessed flag is set on every entry used by a
    successful walk and the dirty flag on the leaf entry of a write;
    already-set bits are not rewritten. A/D updates are applied only
    when the whole walk succeeds, so a faulting walk never modifies the
    tables. Fetch walks (access "exec") count as reads for dirty
    purposes.

    With record=False the walk is a pure observation: no A/D updates,
    no ms/cr2 on failure (a Fault is still raised).
    """
    if not is_canonical(lin):
        if record:
            state.set_ms(MsKind.BAD_MEMORY_ACCESS,
                         f"non-canonical linear address 0x{lin:X}")
        raise Fault(MsKind.BAD_MEMORY_ACCESS,
                    f"non-canonical linear address 0x{lin:X}")
    if mark is None:
        mark = state.marking_mode and record
    mem = state.mem
    touched: List[Tuple[int, str]] = []

    def fail(entry_addr: int, level: str) -> Fault:
        if record:
            state.cr2 = lin
            state.set_ms(MsKind.PAGE_FAULT,
                         f"{level} entry not present for 0x{lin:X}")
        return Fault(MsKind.PAGE_FAULT,
                     f"{level} entry not present for 0x{lin:X}")

    table = state.cr3 & PTE_ADDR_MASK

    entry_addr = table + (((lin >> 39) & 0x1FF) << 3)
    e = mem.read_u(entry_addr, 8)
    if not e & PTE_P:
        raise fail(entry_addr, LEVEL_PML4)
    touched.append((entry_addr, LEVEL_PML4))

    entry_addr = (e & PTE_ADDR_MASK) + (((lin >> 30) & 0x1FF) << 3)
    e = mem.read_u(entry_addr, 8)
    if not e & PTE_P:
        raise fail(entry_addr, LEVEL_PDPT)
    touched.append((entry_addr, LEVEL_PDPT))
    if e & PTE_PS:
        phys = (e & PTE_ADDR_MASK_1G) | (lin & 0x3FFFFFFF)
    else:
        entry_addr = (e & PTE_ADDR_MASK) + (((lin >> 21) & 0x1FF) << 3)
        e = mem.read_u(entry_addr, 8)
        if not e & PTE_P:
            raise fail(entry_addr, LEVEL_PD)
        touched.append((entry_addr, LEVEL_PD))
        if e & PTE_PS:
            phys = (e & PTE_ADDR_MASK_2M) | (lin & 0x1FFFFF)
        else:
            entry_addr = (e & PTE_ADDR_MASK) + (((lin >> 12) & 0x1FF) << 3)
            e = mem.read_u(entry_addr, 8)
            if not e & PTE_P:
                raise fail(entry_addr, LEVEL_PT)
            touched.append((entry_addr, LEVEL_PT))
            phys = (e & PTE_ADDR_MASK) | (lin & PAGE_MASK)

    if mark:
        leaf_addr = touched[-1][0]
        for addr, _level in touched:
            raw = mem.read_u(addr, 8)
            want = raw | PTE_A
            if addr == leaf_addr and access == "write":
                want |= PTE_D
            if want != raw:
                mem.write_u(addr, 8, want)
    return WalkResult(phys, touched)


def _split_pieces(lin: int, nbytes: int):
    """Split [lin, lin+nbytes) at 4 KiB boundaries."""
    pieces = []
    while nbytes:
        take = min(nbytes, PAGE_SIZE - (lin & PAGE_MASK))
        pieces.append((lin, take))
        lin += take
        nbytes -= take
    return pieces


def read_linear_bytes(state: MachineState, lin: int, nbytes: int,
                      access: str = "read") -> bytes:
    """Mode-dispatching bulk read; faults land in ms and raise.
    Logged as one sized access (fetches excluded)."""
    if state.user_level_mode:
        if not is_canonical(lin):
            state.set_ms(MsKind.BAD_MEMORY_ACCESS,
                         f"non-canonical linear address 0x{lin:X}")
            raise Fault(MsKind.BAD_MEMORY_ACCESS,
                        f"non-canonical linear address 0x{lin:X}")
        data = state.mem.read_bytes(lin, nbytes)
        if state.mem_hook is not None and access != "exec" and nbytes:
            state.mem_hook("R", lin, None, nbytes,
                           int.from_bytes(data, "little"))
        return data
    out = bytearray()
    first_phys = None
    for piece_lin, take in _split_pieces(lin, nbytes):
        walk = la_to_pa(state, piece_lin, access)
        if first_phys is None:
            first_phys = walk.phys
        out.extend(state.mem.read_bytes(walk.phys, take))
    if state.mem_hook is not None and access != "exec" and nbytes:
        state.mem_hook("R", lin, first_phys, nbytes,
                       int.from_bytes(out, "little"))
    return bytes(out)


def write_linear_bytes(state: MachineState, lin: int, data: bytes) -> None:
    """Bulk write; in system-level mode every piece is translated before
    any byte is written, so a faulting access commits nothing."""
    if state.user_level_mode:
        if not is_canonical(lin):
            state.set_ms(MsKind.BAD_MEMORY_ACCESS,
                         f"non-canonical linear address 0x{lin:X}")
            raise Fault(MsKind.BAD_MEMORY_ACCESS,
                        f"non-canonical linear address 0x{lin:X}")
        state.mem.write_bytes(lin, data)
        if state.mem_hook is not None and data:
            state.mem_hook("W", lin, None, len(data),
                           int.from_bytes(data, "little"))
        return
    pieces = _split_pieces(lin, len(data))
    walks = [la_to_pa(state, piece_lin, "write") for piece_lin, _ in pieces]
    i = 0
    for (piece_lin, take), walk in zip(pieces, walks):
        state.mem.write_bytes(walk.phys, data[i:i + take])
        i += take
    if state.mem_hook is not None and data:
        state.mem_hook("W", lin, walks[0].phys, len(data),
                       int.from_bytes(data, "little"))


def linear_read(state: MachineState, lin: int, nbytes: int,
                access: str = "read") -> int:
    """Sized little-endian read through the uniform linear interface."""
    if state.user_level_mode:
        if not is_canonical(lin):
            state.set_ms(MsKind.BAD_MEMORY_ACCESS,
                         f"non-canonical linear address 0x{lin:X}")
            raise Fault(MsKind.BAD_MEMORY_ACCESS,
                        f"non-canonical linear address 0x{lin:X}")
        value = state.mem.read_u(lin, nbytes)
        if state.mem_hook is not None and access != "exec":
            state.mem_hook("R", lin, None, nbytes, value)
        return value
    first_phys = None
    if (lin & PAGE_MASK) + nbytes <= PAGE_SIZE:
        walk = la_to_pa(state, lin, access)
        first_phys = walk.phys
        value = state.mem.read_u(walk.phys, nbytes)
    else:
        out = bytearray()
        for piece_lin, take in _split_pieces(lin, nbytes):
            walk = la_to_pa(state, piece_lin, access)
            if first_phys is None:
                first_phys = walk.phys
            out.extend(state.mem.read_bytes(walk.phys, take))
        value = int.from_bytes(out, "little")
    if state.mem_hook is not None and access != "exec":
        state.mem_hook("R", lin, first_phys, nbytes, value)
    return value


def linear_write(state: MachineState, lin: int, nbytes: int, value: int) -> None:
    value &= (1 << (8 * nbytes)) - 1
    if state.user_level_mode:
        if not is_canonical(lin):
            state.set_ms(MsKind.BAD_MEMORY_ACCESS,
                         f"non-canonical linear address 0x{lin:X}")
            raise Fault(MsKind.BAD_MEMORY_ACCESS,
                        f"non-canonical linear address 0x{lin:X}")
        state.mem.write_u(lin, nbytes, value)
        if state.mem_hook is not None:
            state.mem_hook("W", lin, None, nbytes, value)
        return
    if (lin & PAGE_MASK) + nbytes <= PAGE_SIZE:
        walk = la_to_pa(state, lin, "write")
        state.mem.write_u(walk.phys, nbytes, value)
        first_phys = walk.phys
    else:
        data = value.to_bytes(nbytes, "little")
        pieces = _split_pieces(lin, nbytes)
        walks = [la_to_pa(state, piece_lin, "write") for piece_lin, _ in pieces]
        first_phys = walks[0].phys
        i = 0
        for (piece_lin, take), walk in zip(pieces, walks):
            state.mem.write_bytes(walk.phys, data[i:i + take])
            i += take
    if state.mem_hook is not None:
        state.mem_hook("W", lin, first_phys, nbytes, value)


def linear_read_quiet(state: MachineState, lin: int,
                      nbytes: int) -> Optional[int]:
    """Observer read: no A/D marking, no events, no ms on failure.

    Returns None when the address does not translate. Used by
    breakpoint expressions and debugger views.
    """
    if not is_canonical(lin):
        return None
    if state.user_level_mode:
        return state.mem.read_u(lin, nbytes)
    try:
        out = bytearray()
        for piece_lin, take in _split_pieces(lin, nbytes):
            walk = la_to_pa(state, piece_lin, "read", mark=False, record=False)
            out.extend(state.mem.read_bytes(walk.phys, take))
        return int.from_bytes(out, "little")
    except Fault:
        return None


def read_linear_bytes_quiet(state: MachineState, lin: int,
                            nbytes: int) -> Optional[bytes]:
    if not is_canonical(lin):
        return None
    if state.user_level_mode:
        return state.mem.read_bytes(lin, nbytes)
    try:
        out = bytearray()
        for piece_lin, take in _split_pieces(lin, nbytes):
            walk = la_to_pa(state, piece_lin, "read", mark=False, record=False)
            out.extend(state.mem.read_bytes(walk.phys, take))
        return bytes(out)
    except Fault:
        return None


def init_system_level_mode(state: MachineState, paddr: int) -> None:
    """Switch to system-level mode with the default identity mapping.

    Builds one PML4 page at paddr whose entry 0 points at a PDPT page
    at paddr + 0x1000 made of 512 present 1 GiB leaves mapping linear
    [0, 512 GiB) to the identical physical range; cr3 is set to paddr.
    """
    if paddr & PAGE_MASK:
        raise Fault(MsKind.BAD_MEMORY_ACCESS,
                    f"page-table base 0x{paddr:X} is not 4 KiB aligned")
    if paddr + 2 * PAGE_SIZE > PHYS_LIMIT:
        raise Fault(MsKind.BAD_MEMORY_ACCESS,
                    "page-table base too high for table pages")
    mem = state.mem
    pdpt_base = paddr + PAGE_SIZE
    pml4 = bytearray(PAGE_SIZE)
    pml4[0:8] = (pdpt_base | PTE_P | PTE_RW).to_bytes(8, "little")
    mem.write_bytes(paddr, bytes(pml4))
    pdpt = bytearray(PAGE_SIZE)
    for i in range(512):
        entry = (i << 30) | PTE_P | PTE_RW | PTE_PS
        pdpt[8 * i:8 * i + 8] = entry.to_bytes(8, "little")
    mem.write_bytes(pdpt_base, bytes(pdpt))
    state.user_level_mode = False
    state.cr3 = paddr
    state._flush_exec_cache()  # cached thunks are mode-specific
