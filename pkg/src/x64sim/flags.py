"""Status-flag computation for the arithmetic/logic instruction families.

The packed helpers return flag bits already positioned for RFLAGS and
are the single source of truth; `arith_flags` exposes the same math as
a structured per-flag effect for instructions that mix computed,
unchanged, and undefined flags.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

CF = 1 << 0
PF = 1 << 2
AF = 1 << 4
ZF = 1 << 6
SF = 1 << 7
OF = 1 << 11

STATUS_MASK = CF | PF | AF | ZF | SF | OF

# PARITY[b] = PF bit value for a low byte b (1 when an even number of bits set)
PARITY = [0] * 256
for _v in range(256):
    PARITY[_v] = PF if (bin(_v).count("1") % 2 == 0) else 0


def flags_add(nbits: int, a: int, b: int, cin: int = 0):
    """Return (result, packed CF/PF/AF/ZF/SF/OF) for a + b + cin."""
    mask = (1 << nbits) - 1
    t = a + b + cin
    r = t & mask
    sign = 1 << (nbits - 1)
    f = PARITY[r & 0xFF]
    if t > mask:
        f |= CF
    if (a ^ b ^ r) & 0x10:
        f |= AF
    if r == 0:
        f |= ZF
    if r & sign:
        f |= SF
    if (a ^ r) & (b ^ r) & sign:
        f |= OF
    return r, f


def flags_sub(nbits: int, a: int, b: int, cin: int = 0):
    """Return (result, packed flags) for a - b - cin (cin = borrow in)."""
    mask = (1 << nbits) - 1
    t = a - b - cin
    r = t & mask
    sign = 1 << (nbits - 1)
    f = PARITY[r & 0xFF]
    if t < 0:
        f |= CF
    if (a ^ b ^ r) & 0x10:
        f |= AF
    if r == 0:
        f |= ZF
    if r & sign:
        f |= SF
    if (a ^ b) & (a ^ r) & sign:
        f |= OF
    return r, f


def flags_logic(nbits: int, r: int) -> int:
    """Packed flags for AND/OR/XOR/TEST results: CF=OF=0, AF not included
    (it is architecturally undefined and supplied by the caller)."""
    f = PARITY[r & 0xFF]
    if r == 0:
        f |= ZF
    if r & (1 << (nbits - 1)):
        f |= SF
    return f


UNCHANGED = "unchanged"
UNDEFINED = "undefined"

FlagValue = Union[int, str]


@dataclass(frozen=True)
class FlagEffect:
    """Per-flag outcome of one instruction: a computed bit, UNCHANGED,
    or UNDEFINED. Undefined entries are materialized from the undef
    pool in fixed CF, PF, AF, ZF, SF, OF order."""
    cf: FlagValue = UNCHANGED
    pf: FlagValue = UNCHANGED
    af: FlagValue = UNCHANGED
    zf: FlagValue = UNCHANGED
    sf: FlagValue = UNCHANGED
    of: FlagValue = UNCHANGED

    ORDER = ("cf", "pf", "af", "zf", "sf", "of")
    BITS = {"cf": CF, "pf": PF, "af": AF, "zf": ZF, "sf": SF, "of": OF}


def arith_flags(op: str, nbits: int, src1: int, src2: int, result: int,
                carry_in: int = 0) -> FlagEffect:
    """Flag effect of an arithmetic/logic operation.

    op is one of add, adc, sub, sbb, cmp, inc, dec, neg, logic; operands
    must already be masked to the operand width. `result` is accepted
    for signature symmetry and cross-checked against the recomputation.
    """
    if op in ("add", "adc"):
        r, f = flags_add(nbits, src1, src2, carry_in if op == "adc" else 0)
    elif op in ("sub", "sbb", "cmp"):
        r, f = flags_sub(nbits, src1, src2, carry_in if op == "sbb" else 0)
    elif op == "inc":
        r, f = flags_add(nbits, src1, 1)
        return FlagEffect(cf=UNCHANGED, pf=1 if f & PF else 0,
                          af=1 if f & AF else 0, zf=1 if f & ZF else 0,
                          sf=1 if f & SF else 0, of=1 if f & OF else 0)
    elif op == "dec":
        r, f = flags_sub(nbits, src1, 1)
        return FlagEffect(cf=UNCHANGED, pf=1 if f & PF else 0,
                          af=1 if f & AF else 0, zf=1 if f & ZF else 0,
                          sf=1 if f & SF else 0, of=1 if f & OF else 0)
    elif op == "neg":
        r, f = flags_sub(nbits, 0, src1)
    elif op == "logic":
        f = flags_logic(nbits, result & ((1 << nbits) - 1))
        return FlagEffect(cf=0, pf=1 if f & PF else 0, af=UNDEFINED,
                          zf=1 if f & ZF else 0, sf=1 if f & SF else 0, of=0)
    else:
        raise ValueError(f"unknown flag op {op!r}")
    return FlagEffect(cf=1 if f & CF else 0, pf=1 if f & PF else 0,
                      af=1 if f & AF else 0, zf=1 if f & ZF else 0,
                      sf=1 if f & SF else 0, of=1 if f & OF else 0)


def apply_flag_effect(state, effect: FlagEffect) -> None:
    """Write a FlagEffect into rflags, drawing one undef value per
    UNDEFINED entry in the fixed flag order."""
    rflags = state.rflags
    for name in FlagEffect.ORDER:
        v = getattr(effect, name)
        if v == UNCHANGED:
            continue
        if v == UNDEFINED:
            v = state.undef_read() & 1
        bit = FlagEffect.BITS[name]
        rflags = (rflags | bit) if v else (rflags & ~bit)
    state.rflags = rflags
