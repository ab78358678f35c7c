"""Instruction decoder: prefixes, REX, one/two-byte opcodes, ModR/M, SIB.

The opcode tables are data: one row per encodable form carrying the
mnemonic, operand format, semantic handler id, size class, immediate
rule, and mode availability. Decoding an unlisted opcode (or an
unlisted group sub-opcode) reports an unimplemented opcode rather than
guessing.

Only the one-byte and 0F two-byte maps exist; three-byte maps and
VEX/EVEX encodings are rejected. 64-bit mode defaults throughout:
operand size is 8 with REX.W, else 2 with a 0x66 prefix, else 4.
"""

from __future__ import annotations

from typing import Optional

from .state import MsKind, Fault, MASK64, GPR_NAMES

MAX_INST_LEN = 15

PFX_LOCK = 0xF0
PFX_REPNE = 0xF2
PFX_REP = 0xF3
PFX_OPSIZE = 0x66
PFX_ADDRSIZE = 0x67
SEG_PREFIXES = {0x26: "es", 0x2E: "cs", 0x36: "ss", 0x3E: "ds",
                0x64: "fs", 0x65: "gs"}

CC_NAMES = ["o", "no", "b", "ae", "e", "ne", "be", "a",
            "s", "ns", "p", "np", "l", "ge", "le", "g"]

REG64 = GPR_NAMES
REG32 = ["eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi",
         "r8d", "r9d", "r10d", "r11d", "r12d", "r13d", "r14d", "r15d"]
REG16 = ["ax", "cx", "dx", "bx", "sp", "bp", "si", "di",
         "r8w", "r9w", "r10w", "r11w", "r12w", "r13w", "r14w", "r15w"]
REG8 = ["al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil",
        "r8b", "r9b", "r10b", "r11b", "r12b", "r13b", "r14b", "r15b"]
REG8_HIGH = ["ah", "ch", "dh", "bh"]


def reg_name(index: int, nbytes: int, high: bool = False) -> str:
    if nbytes == 8:
        return REG64[index]
    if nbytes == 4:
        return REG32[index]
    if nbytes == 2:
        return REG16[index]
    return REG8_HIGH[index] if high else REG8[index]


class DecodeError(Fault):
    """Decode failure; kind distinguishes malformed encodings from
    valid-but-unimplemented ones."""


class Truncated(Exception):
    """Internal: the byte window ended before the instruction did."""


class Row:
    """One opcode-table entry."""

    __slots__ = ("mnemonic", "fmt", "handler", "size", "imm", "immext",
                 "modes", "rm_size")

    def __init__(self, mnemonic, fmt, handler, size="v", imm=None,
                 immext=False, modes="both", rm_size=None):
        self.mnemonic = mnemonic
        self.fmt = fmt
        self.handler = handler
        self.size = size          # "b" byte, "v" 16/32/64, "v64" default-8
        self.imm = imm            # None | "ib" | "iz" | "iv"
        self.immext = immext      # immediate sign-extends to operand size
        self.modes = modes        # "both" | "system"
        self.rm_size = rm_size    # r/m size override (movzx/movsx sources)


# formats whose encodings carry a ModR/M byte
MODRM_FMTS = {"rm_r", "r_rm", "rm_imm", "rm", "rm_count1", "rm_cl",
              "rm_imm8", "r_rm_imm", "m", "r_cr", "cr_r"}


def _arith_block(table, base, name, handler):
    table[base + 0] = Row(name, "rm_r", handler, size="b")
    table[base + 1] = Row(name, "rm_r", handler)
    table[base + 2] = Row(name, "r_rm", handler, size="b")
    table[base + 3] = Row(name, "r_rm", handler)
    table[base + 4] = Row(name, "acc_imm", handler, size="b", imm="ib")
    table[base + 5] = Row(name, "acc_imm", handler, imm="iz", immext=True)


ONE_BYTE: dict = {}
TWO_BYTE: dict = {}

_arith_block(ONE_BYTE, 0x00, "add", "arith.add")
_arith_block(ONE_BYTE, 0x08, "or", "arith.or")
_arith_block(ONE_BYTE, 0x10, "adc", "arith.adc")
_arith_block(ONE_BYTE, 0x18, "sbb", "arith.sbb")
_arith_block(ONE_BYTE, 0x20, "and", "arith.and")
_arith_block(ONE_BYTE, 0x28, "sub", "arith.sub")
_arith_block(ONE_BYTE, 0x30, "xor", "arith.xor")
_arith_block(ONE_BYTE, 0x38, "cmp", "arith.cmp")

for _r in range(8):
    ONE_BYTE[0x50 + _r] = Row("push", "opreg", "push.reg", size="v64")
    ONE_BYTE[0x58 + _r] = Row("pop", "opreg", "pop.reg", size="v64")

ONE_BYTE[0x63] = Row("movsxd", "r_rm", "movsx", rm_size=4)
ONE_BYTE[0x68] = Row("push", "imm", "push.imm", size="v64", imm="iz",
                     immext=True)
ONE_BYTE[0x69] = Row("imul", "r_rm_imm", "imul.rri", imm="iz", immext=True)
ONE_BYTE[0x6A] = Row("push", "imm", "push.imm", size="v64", imm="ib",
                     immext=True)
ONE_BYTE[0x6B] = Row("imul", "r_rm_imm", "imul.rri", imm="ib", immext=True)

for _cc in range(16):
    ONE_BYTE[0x70 + _cc] = Row("j" + CC_NAMES[_cc], "rel", "jcc",
                               size="v64", imm="ib")

_GRP1 = ["add", "or", "adc", "sbb", "and", "sub", "xor", "cmp"]
ONE_BYTE[0x80] = {i: Row(_GRP1[i], "rm_imm", "arith." + _GRP1[i], size="b",
                         imm="ib") for i in range(8)}
ONE_BYTE[0x81] = {i: Row(_GRP1[i], "rm_imm", "arith." + _GRP1[i], imm="iz",
                         immext=True) for i in range(8)}
ONE_BYTE[0x83] = {i: Row(_GRP1[i], "rm_imm", "arith." + _GRP1[i], imm="ib",
                         immext=True) for i in range(8)}

ONE_BYTE[0x84] = Row("test", "rm_r", "arith.test", size="b")
ONE_BYTE[0x85] = Row("test", "rm_r", "arith.test")
ONE_BYTE[0x86] = Row("xchg", "rm_r", "xchg", size="b")
ONE_BYTE[0x87] = Row("xchg", "rm_r", "xchg")
ONE_BYTE[0x88] = Row("mov", "rm_r", "mov.store", size="b")
ONE_BYTE[0x89] = Row("mov", "rm_r", "mov.store")
ONE_BYTE[0x8A] = Row("mov", "r_rm", "mov.load", size="b")
ONE_BYTE[0x8B] = Row("mov", "r_rm", "mov.load")
ONE_BYTE[0x8D] = Row("lea", "r_rm", "lea")
ONE_BYTE[0x8F] = {0: Row("pop", "rm", "pop.rm", size="v64")}

ONE_BYTE[0x90] = Row("nop", "none", "nop")  # xchg r8,rax with REX.B; pause with F3
for _r in range(1, 8):
    ONE_BYTE[0x90 + _r] = Row("xchg", "opreg_acc", "xchg.acc")
ONE_BYTE[0x99] = Row("cqo", "none", "convert")  # cwd/cdq/cqo by operand size

ONE_BYTE[0xA8] = Row("test", "acc_imm", "arith.test", size="b", imm="ib")
ONE_BYTE[0xA9] = Row("test", "acc_imm", "arith.test", imm="iz", immext=True)

for _r in range(8):
    ONE_BYTE[0xB0 + _r] = Row("mov", "opreg_imm", "mov.opreg", size="b",
                              imm="ib")
    ONE_BYTE[0xB8 + _r] = Row("mov", "opreg_imm", "mov.opreg", imm="iv")

_GRP2 = {0: "rol", 1: "ror", 4: "shl", 5: "shr", 7: "sar"}
ONE_BYTE[0xC0] = {i: Row(m, "rm_imm8", "shift." + m, size="b", imm="ib")
                  for i, m in _GRP2.items()}
ONE_BYTE[0xC1] = {i: Row(m, "rm_imm8", "shift." + m, imm="ib")
                  for i, m in _GRP2.items()}
ONE_BYTE[0xC3] = Row("ret", "none", "ret", size="v64")
ONE_BYTE[0xC6] = {0: Row("mov", "rm_imm", "mov.imm", size="b", imm="ib")}
ONE_BYTE[0xC7] = {0: Row("mov", "rm_imm", "mov.imm", imm="iz", immext=True)}
ONE_BYTE[0xD0] = {i: Row(m, "rm_count1", "shift." + m, size="b")
                  for i, m in _GRP2.items()}
ONE_BYTE[0xD1] = {i: Row(m, "rm_count1", "shift." + m)
                  for i, m in _GRP2.items()}
ONE_BYTE[0xD2] = {i: Row(m, "rm_cl", "shift." + m, size="b")
                  for i, m in _GRP2.items()}
ONE_BYTE[0xD3] = {i: Row(m, "rm_cl", "shift." + m)
                  for i, m in _GRP2.items()}

ONE_BYTE[0xE8] = Row("call", "rel", "call", size="v64", imm="iz")
ONE_BYTE[0xE9] = Row("jmp", "rel", "jmp", size="v64", imm="iz")
ONE_BYTE[0xEB] = Row("jmp", "rel", "jmp", size="v64", imm="ib")

_GRP3B = {0: ("test", "rm_imm", "arith.test", "ib"),
          2: ("not", "rm", "not", None),
          3: ("neg", "rm", "arith.neg", None),
          4: ("mul", "rm", "muldiv.mul", None),
          5: ("imul", "rm", "muldiv.imul", None),
          6: ("div", "rm", "muldiv.div", None),
          7: ("idiv", "rm", "muldiv.idiv", None)}
ONE_BYTE[0xF6] = {i: Row(m, f, h, size="b", imm=imm)
                  for i, (m, f, h, imm) in _GRP3B.items()}
ONE_BYTE[0xF7] = {i: Row(m, f, h, imm=("iz" if imm else None),
                         immext=bool(imm))
                  for i, (m, f, h, imm) in _GRP3B.items()}

ONE_BYTE[0xFE] = {0: Row("inc", "rm", "arith.inc", size="b"),
                  1: Row("dec", "rm", "arith.dec", size="b")}
ONE_BYTE[0xFF] = {0: Row("inc", "rm", "arith.inc"),
                  1: Row("dec", "rm", "arith.dec"),
                  6: Row("push", "rm", "push.rm", size="v64")}

TWO_BYTE[0x01] = {2: Row("lgdt", "m", "lgdt", modes="system"),
                  3: Row("lidt", "m", "lidt", modes="system")}
TWO_BYTE[0x05] = Row("syscall", "none", "syscall")
TWO_BYTE[0x07] = Row("sysret", "none", "sysret", modes="system")
TWO_BYTE[0x1F] = {0: Row("nop", "rm", "nop.multi")}
TWO_BYTE[0x20] = Row("mov", "r_cr", "mov.fromcr", size="v64", modes="system")
TWO_BYTE[0x22] = Row("mov", "cr_r", "mov.tocr", size="v64", modes="system")
for _cc in range(16):
    TWO_BYTE[0x40 + _cc] = Row("cmov" + CC_NAMES[_cc], "r_rm", "cmovcc")
    TWO_BYTE[0x80 + _cc] = Row("j" + CC_NAMES[_cc], "rel", "jcc",
                               size="v64", imm="iz")
    TWO_BYTE[0x90 + _cc] = {r: Row("set" + CC_NAMES[_cc], "rm", "setcc",
                                   size="b") for r in range(8)}
TWO_BYTE[0xAF] = Row("imul", "r_rm", "imul.rr")
TWO_BYTE[0xB6] = Row("movzx", "r_rm", "movzx", rm_size=1)
TWO_BYTE[0xB7] = Row("movzx", "r_rm", "movzx", rm_size=2)
TWO_BYTE[0xBE] = Row("movsx", "r_rm", "movsx", rm_size=1)
TWO_BYTE[0xBF] = Row("movsx", "r_rm", "movsx", rm_size=2)
TWO_BYTE[0xC7] = {6: Row("rdrand", "rm", "rdrand")}


def opcode_table_rows():
    """Flatten both maps into (map_name, opcode, modreg, Row) tuples,
    sorted by (map, opcode, modreg); drives the implemented report."""
    out = []
    for map_name, table in (("1", ONE_BYTE), ("0F", TWO_BYTE)):
        for op in sorted(table):
            entry = table[op]
            if isinstance(entry, dict):
                for reg in sorted(entry):
                    out.append((map_name, op, reg, entry[reg]))
            else:
                out.append((map_name, op, None, entry))
    return out


class DecodedInst:
    """One parsed instruction with resolved operand descriptions."""

    __slots__ = (
        "raw", "length", "opmap", "opcode", "mnemonic", "fmt", "handler",
        "opsize", "addrsize", "rm_size", "rex", "lock", "rep", "seg",
        "modrm", "sib", "disp", "imm", "imm_width", "immext",
        "reg_op", "rm_op", "mem_op", "cc", "creg", "modes",
    )

    def __init__(self):
        self.raw = b""
        self.length = 0
        self.opmap = "1"
        self.opcode = 0
        self.mnemonic = ""
        self.fmt = "none"
        self.handler = ""
        self.opsize = 4
        self.addrsize = 8
        self.rm_size = 0
        self.rex: Optional[int] = None
        self.lock = False
        self.rep: Optional[int] = None
        self.seg: Optional[str] = None
        self.modrm = None            # (mod, reg, rm)
        self.sib = None              # (scale, index, base)
        self.disp = 0
        self.imm = 0
        self.imm_width = 0
        self.immext = False
        self.reg_op = None           # (gpr index, high8?) for the reg operand
        self.rm_op = None            # (gpr index, high8?) when r/m is a register
        self.mem_op = None           # (base, index, scale, disp, riprel?)
        self.cc: Optional[int] = None
        self.creg: Optional[int] = None
        self.modes = "both"

    def __repr__(self):
        return (f"<DecodedInst {self.mnemonic} len={self.length} "
                f"raw={self.raw.hex()}>")


def _byte_reg(index: int, rex_present: bool):
    # without REX, encodings 4..7 address ah/ch/dh/bh
    if not rex_present and 4 <= index <= 7:
        return (index - 4, True)
    return (index, False)


def sign_extend(value: int, bits: int) -> int:
    sign = 1 << (bits - 1)
    return (value & (sign - 1)) - (value & sign)


def decode_bytes(data: bytes) -> DecodedInst:
    """Decode one instruction from the start of `data`.

    Raises Truncated when more bytes are required, DecodeError for
    malformed or unimplemented encodings.
    """
    di = DecodedInst()
    n = len(data)
    i = 0
    rex = None

    # legacy prefixes; a legacy prefix after REX voids that REX
    while True:
        if i >= n:
            if i >= MAX_INST_LEN:
                raise DecodeError(MsKind.DECODE_ERROR,
                                  "instruction longer than 15 bytes")
            raise Truncated()
        b = data[i]
        if b == PFX_LOCK:
            di.lock = True
        elif b in (PFX_REP, PFX_REPNE):
            di.rep = b
        elif b in SEG_PREFIXES:
            di.seg = SEG_PREFIXES[b]
        elif b == PFX_OPSIZE:
            di.opsize = 2
        elif b == PFX_ADDRSIZE:
            di.addrsize = 4
        elif 0x40 <= b <= 0x4F:
            rex = b
            i += 1
            continue
        else:
            break
        rex = None
        i += 1
    if i >= MAX_INST_LEN:
        raise DecodeError(MsKind.DECODE_ERROR,
                          "instruction longer than 15 bytes")

    di.rex = rex
    opsize_prefix = di.opsize == 2

    opcode = data[i]
    i += 1
    if opcode == 0x0F:
        if i >= n:
            raise Truncated()
        opcode = data[i]
        i += 1
        di.opmap = "0F"
        table = TWO_BYTE
    else:
        table = ONE_BYTE
    di.opcode = opcode

    entry = table.get(opcode)
    if entry is None:
        raise DecodeError(MsKind.UNIMPLEMENTED_OPCODE,
                          f"opcode {di.opmap}/{opcode:02X} not implemented")

    row = entry if isinstance(entry, Row) else None
    group = entry if isinstance(entry, dict) else None
    needs_modrm = (group is not None) or (row.fmt in MODRM_FMTS)

    if needs_modrm:
        if i >= n:
            raise Truncated()
        m = data[i]
        i += 1
        mod, reg, rm = m >> 6, (m >> 3) & 7, m & 7
        di.modrm = (mod, reg, rm)
        if group is not None:
            row = group.get(reg)
            if row is None:
                raise DecodeError(
                    MsKind.UNIMPLEMENTED_OPCODE,
                    f"opcode {di.opmap}/{opcode:02X} /{reg} not implemented")

    # operand size: REX.W beats 0x66 beats the default of 4
    rex_w = bool(rex and rex & 8)
    if row.size == "b":
        di.opsize = 1
    elif row.size == "v64":
        di.opsize = 2 if opsize_prefix else 8
    else:
        di.opsize = 8 if rex_w else (2 if opsize_prefix else 4)

    di.mnemonic = row.mnemonic
    di.fmt = row.fmt
    di.handler = row.handler
    di.modes = row.modes
    di.rm_size = row.rm_size if row.rm_size else di.opsize
    di.immext = row.immext

    # per-opcode decode adjustments
    if di.opmap == "1" and opcode == 0x90:
        if rex and rex & 1:
            di.mnemonic, di.fmt, di.handler = "xchg", "opreg_acc", "xchg.acc"
            di.opsize = 8 if rex_w else (2 if opsize_prefix else 4)
        elif di.rep == PFX_REP:
            di.mnemonic = "pause"
    elif di.opmap == "1" and opcode == 0x99:
        di.mnemonic = {2: "cwd", 4: "cdq", 8: "cqo"}[di.opsize]
    elif (di.fmt == "rel" or di.mnemonic == "ret") and opsize_prefix:
        # 16-bit near branches truncate rip; outside the modeled subset
        raise DecodeError(MsKind.UNIMPLEMENTED_OPCODE,
                          "16-bit operand-size near branch not implemented")

    rex_r = bool(rex and rex & 4)
    rex_x = bool(rex and rex & 2)
    rex_b = bool(rex and rex & 1)

    # ModR/M operand resolution
    if di.modrm is not None:
        mod, reg, rm = di.modrm
        if di.fmt in ("r_rm", "rm_r", "r_rm_imm"):
            ridx = reg | (8 if rex_r else 0)
            di.reg_op = _byte_reg(ridx, rex is not None) if di.opsize == 1 \
                else (ridx, False)
        if di.fmt in ("r_cr", "cr_r"):
            di.creg = reg | (8 if rex_r else 0)
            if di.creg not in (0, 2, 3, 4):
                raise DecodeError(MsKind.UNIMPLEMENTED_OPCODE,
                                  f"control register cr{di.creg} not modeled")
            di.rm_op = (rm | (8 if rex_b else 0), False)
            di.opsize = 8  # control-register moves are always 64-bit
        elif mod == 3:
            if di.fmt == "m" or di.mnemonic == "lea":
                raise DecodeError(MsKind.UNIMPLEMENTED_OPCODE,
                                  f"{di.mnemonic} requires a memory operand")
            rmidx = rm | (8 if rex_b else 0)
            di.rm_op = _byte_reg(rmidx, rex is not None) if di.rm_size == 1 \
                else (rmidx, False)
        else:
            if di.handler == "rdrand":
                raise DecodeError(MsKind.UNIMPLEMENTED_OPCODE,
                                  "rdrand requires a register operand")
            base = None
            index = None
            scale = 1
            riprel = False
            if rm == 4:
                if i >= n:
                    raise Truncated()
                s = data[i]
                i += 1
                ss, idx, sb = s >> 6, (s >> 3) & 7, s & 7
                di.sib = (ss, idx, sb)
                scale = 1 << ss
                if not (idx == 4 and not rex_x):
                    index = idx | (8 if rex_x else 0)
                if sb == 5 and mod == 0:
                    base = None  # disp32 only
                else:
                    base = sb | (8 if rex_b else 0)
            elif rm == 5 and mod == 0:
                riprel = True
            else:
                base = rm | (8 if rex_b else 0)
            if mod == 1:
                if i + 1 > n:
                    raise Truncated()
                di.disp = sign_extend(data[i], 8)
                i += 1
            elif mod == 2 or riprel or (rm == 4 and di.sib[2] == 5 and mod == 0):
                if i + 4 > n:
                    raise Truncated()
                di.disp = sign_extend(int.from_bytes(data[i:i + 4], "little"), 32)
                i += 4
            di.mem_op = (base, index, scale, di.disp, riprel)

    # opcode-embedded register operand
    if di.fmt in ("opreg", "opreg_imm", "opreg_acc"):
        ridx = (opcode & 7) | (8 if rex_b else 0)
        di.reg_op = _byte_reg(ridx, rex is not None) if di.opsize == 1 \
            else (ridx, False)

    # immediate
    imm_w = 0
    if row.imm == "ib":
        imm_w = 1
    elif row.imm == "iw":
        imm_w = 2
    elif row.imm == "iz":
        imm_w = 2 if di.opsize == 2 else 4
    elif row.imm == "iv":
        imm_w = di.opsize
    if imm_w:
        if i + imm_w > n:
            if i + imm_w > MAX_INST_LEN:
                raise DecodeError(MsKind.DECODE_ERROR,
                                  "instruction longer than 15 bytes")
            raise Truncated()
        di.imm = int.from_bytes(data[i:i + imm_w], "little")
        di.imm_width = imm_w
        i += imm_w

    if i > MAX_INST_LEN:
        raise DecodeError(MsKind.DECODE_ERROR,
                          "instruction longer than 15 bytes")
    if di.cc is None and (
            (di.opmap == "1" and 0x70 <= di.opcode <= 0x7F)
            or (di.opmap == "0F" and 0x40 <= di.opcode <= 0x9F
                and (di.opcode & 0xF0) in (0x40, 0x80, 0x90))):
        di.cc = di.opcode & 0x0F
    di.length = i
    di.raw = bytes(data[:i])
    return di


def fetch_and_decode(state) -> DecodedInst:
    """Fetch the instruction at rip and decode it.

    Bytes are read through the linear interface with the exec access
    class, so marking-mode walks record accessed flags. The read is
    capped at the 4 KiB boundary first and extended only when the
    instruction actually continues, avoiding spurious faults on the
    following page. rip is not advanced here.
    """
    from .memory import read_linear_bytes, PAGE_SIZE

    rip = state.rip
    first = min(MAX_INST_LEN, PAGE_SIZE - (rip & (PAGE_SIZE - 1)))
    data = read_linear_bytes(state, rip, first, access="exec")
    try:
        return decode_bytes(data)
    except Truncated:
        pass
    except DecodeError as e:
        state.set_ms(e.kind, e.detail)
        raise
    data = data + read_linear_bytes(state, rip + first, MAX_INST_LEN - first,
                                    access="exec")
    try:
        return decode_bytes(data)
    except Truncated:
        state.set_ms(MsKind.DECODE_ERROR, "instruction longer than 15 bytes")
        raise DecodeError(MsKind.DECODE_ERROR,
                          "instruction longer than 15 bytes") from None
    except DecodeError as e:
        state.set_ms(e.kind, e.detail)
        raise


def effective_address(di: DecodedInst, next_rip: int, state,
                      apply_segment: bool = True) -> int:
    """Resolve the memory operand address of `di`.

    Precondition: the instruction has a memory operand (mod != 3).
    RIP-relative forms resolve against the address of the following
    instruction. A 0x67 prefix truncates the effective address to 32
    bits and uses the 32-bit register views.
    """
    if di.mem_op is None:
        raise ValueError("effective_address on a register-form instruction")
    base, index, scale, disp, riprel = di.mem_op
    if riprel:
        ea = next_rip + disp
    else:
        ea = disp
        abytes = di.addrsize
        if base is not None:
            ea += state.read_gpr(base, abytes)
        if index is not None:
            ea += state.read_gpr(index, abytes) * scale
    ea &= (1 << (8 * di.addrsize)) - 1
    if apply_segment:
        if di.seg == "fs":
            ea = (ea + state.fs_base) & MASK64
        elif di.seg == "gs":
            ea = (ea + state.gs_base) & MASK64
    return ea & MASK64


# ----------------------------------------------------------------------
# text form: lower-case mnemonic, destination first
# ----------------------------------------------------------------------

SIZE_PTR = {1: "BYTE PTR", 2: "WORD PTR", 4: "DWORD PTR", 8: "QWORD PTR"}


def _mem_text(di: DecodedInst, next_rip: Optional[int], size: Optional[int]) -> str:
    base, index, scale, disp, riprel = di.mem_op
    parts = []
    if riprel:
        parts.append("rip")
    elif base is not None:
        parts.append(REG32[base] if di.addrsize == 4 else REG64[base])
    if index is not None:
        iname = REG32[index] if di.addrsize == 4 else REG64[index]
        parts.append(f"{iname}*{scale}")
    inner = "+".join(parts)
    if disp or not parts:
        if disp < 0 and parts:
            inner += f"-0x{-disp:x}"
        elif parts:
            inner += f"+0x{disp:x}"
        else:
            inner = f"0x{disp & 0xFFFFFFFF:x}"
    seg = f"{di.seg}:" if di.seg in ("fs", "gs") else ""
    text = f"{seg}[{inner}]"
    if size is not None:
        text = f"{SIZE_PTR[size]} {text}"
    if riprel and next_rip is not None:
        ea = (next_rip + disp) & MASK64
        text += f"        # 0x{ea:x}"
    return text


def _imm_value(di: DecodedInst) -> int:
    if di.immext:
        v = sign_extend(di.imm, 8 * di.imm_width)
        return v & ((1 << (8 * di.opsize)) - 1)
    return di.imm


def operand_texts(di: DecodedInst, next_rip: Optional[int] = None):
    """Operand text list, destination first."""
    fmt = di.fmt
    rm_size = di.rm_size

    def rm_text(size=None):
        if di.rm_op is not None:
            return reg_name(di.rm_op[0], rm_size, di.rm_op[1])
        return _mem_text(di, next_rip, size if size is not None else rm_size)

    def regop():
        return reg_name(di.reg_op[0], di.opsize, di.reg_op[1])

    if fmt == "rm_r":
        return [rm_text(), regop()]
    if fmt == "r_rm":
        if di.mnemonic == "lea":
            return [regop(), _mem_text(di, next_rip, None)]
        return [regop(), rm_text()]
    if fmt == "rm_imm":
        return [rm_text(), f"0x{_imm_value(di):x}"]
    if fmt == "rm":
        return [rm_text()]
    if fmt == "rm_count1":
        return [rm_text(), "1"]
    if fmt == "rm_cl":
        return [rm_text(), "cl"]
    if fmt == "rm_imm8":
        return [rm_text(), f"0x{di.imm:x}"]
    if fmt == "r_rm_imm":
        return [regop(), rm_text(), f"0x{_imm_value(di):x}"]
    if fmt == "acc_imm":
        return [reg_name(0, di.opsize), f"0x{_imm_value(di):x}"]
    if fmt == "opreg":
        return [regop()]
    if fmt == "opreg_imm":
        return [regop(), f"0x{_imm_value(di):x}"]
    if fmt == "opreg_acc":
        return [regop(), reg_name(0, di.opsize)]
    if fmt == "imm":
        return [f"0x{_imm_value(di):x}"]
    if fmt == "rel":
        if next_rip is None:
            rel = sign_extend(di.imm, 8 * di.imm_width)
            return [f".{'+' if rel >= 0 else '-'}0x{abs(rel):x}"]
        target = (next_rip + sign_extend(di.imm, 8 * di.imm_width)) & MASK64
        return [f"0x{target:x}"]
    if fmt == "r_cr":
        return [reg_name(di.rm_op[0], 8), f"cr{di.creg}"]
    if fmt == "cr_r":
        return [f"cr{di.creg}", reg_name(di.rm_op[0], 8)]
    if fmt == "m":
        return [_mem_text(di, next_rip, None)]
    return []


def disasm_text(di: DecodedInst, next_rip: Optional[int] = None) -> str:
    ops = operand_texts(di, next_rip)
    if ops:
        return f"{di.mnemonic} " + ", ".join(ops)
    return di.mnemonic


def operand_shape(di: DecodedInst, vma: int):
    """Structural operand summary for differential comparison.

    Memory operands become dicts; immediates carry the value with the
    instruction's sign-extension rule applied; branch operands resolve
    to the absolute target assuming the instruction starts at `vma`.
    """
    next_rip = vma + di.length
    size_for_mem = None if di.fmt in ("m",) or di.mnemonic == "lea" \
        else di.rm_size

    def mem_shape():
        base, index, scale, disp, riprel = di.mem_op
        prefix = "e" if di.addrsize == 4 else "r"
        return ["mem", {
            "size": size_for_mem,
            "base": "rip" if riprel else (
                (REG32 if di.addrsize == 4 else REG64)[base]
                if base is not None else None),
            "index": (REG32 if di.addrsize == 4 else REG64)[index]
            if index is not None else None,
            "scale": scale if index is not None else None,
            "disp": disp,
            "seg": di.seg if di.seg in ("fs", "gs") else None,
        }]

    def rm_shape():
        if di.rm_op is not None:
            return ["reg", reg_name(di.rm_op[0], di.rm_size, di.rm_op[1])]
        return mem_shape()

    def reg_shape():
        return ["reg", reg_name(di.reg_op[0], di.opsize, di.reg_op[1])]

    def imm_shape():
        return ["imm", _imm_value(di)]

    fmt = di.fmt
    if fmt == "rm_r":
        ops = [rm_shape(), reg_shape()]
    elif fmt == "r_rm":
        ops = [reg_shape(), rm_shape()]
    elif fmt == "rm_imm":
        ops = [rm_shape(), imm_shape()]
    elif fmt == "rm":
        ops = [rm_shape()]
    elif fmt == "rm_count1":
        ops = [rm_shape(), ["imm", 1]]
    elif fmt == "rm_cl":
        ops = [rm_shape(), ["reg", "cl"]]
    elif fmt == "rm_imm8":
        ops = [rm_shape(), ["imm", di.imm]]
    elif fmt == "r_rm_imm":
        ops = [reg_shape(), rm_shape(), imm_shape()]
    elif fmt == "acc_imm":
        ops = [["reg", reg_name(0, di.opsize)], imm_shape()]
    elif fmt == "opreg":
        ops = [reg_shape()]
    elif fmt == "opreg_imm":
        ops = [reg_shape(), imm_shape()]
    elif fmt == "opreg_acc":
        ops = [reg_shape(), ["reg", reg_name(0, di.opsize)]]
    elif fmt == "imm":
        ops = [imm_shape()]
    elif fmt == "rel":
        target = (next_rip + sign_extend(di.imm, 8 * di.imm_width)) & MASK64
        ops = [["imm", target]]
    elif fmt == "r_cr":
        ops = [["reg", reg_name(di.rm_op[0], 8)], ["reg", f"cr{di.creg}"]]
    elif fmt == "cr_r":
        ops = [["reg", f"cr{di.creg}"], ["reg", reg_name(di.rm_op[0], 8)]]
    elif fmt == "m":
        ops = [mem_shape()]
    else:
        ops = []
    return {"mnemonic": di.mnemonic, "length": di.length, "ops": ops}
