"""Instruction semantic functions.

Each opcode-table row names a handler id; the registered handler is a
factory that, given the machine state and a decoded instruction,
compiles a zero-argument thunk performing the instruction: read
operands, compute the result and flags, write the destination, advance
rip (or record a model status and leave rip alone). The interpreter
caches these thunks by instruction address.

Undefined flags draw from the undef pool in fixed CF, PF, AF, ZF, SF,
OF order so the seed consumption of every instruction is deterministic.
"""

from __future__ import annotations

from .state import MachineState, MsKind, Fault, MASK64, MSR_LSTAR, \
    MSR_FMASK, normalize_rflags
from .decode import DecodedInst, effective_address, sign_extend
from .memory import linear_read, linear_write
from .flags import (PARITY, CF, PF, AF, ZF, SF, OF, STATUS_MASK,
                    flags_add, flags_sub, flags_logic)

HANDLERS = {}


def handler(hid):
    """def-inst-style registration: binds a handler id used by the
    opcode table to its semantic factory."""
    def register(factory):
        HANDLERS[hid] = factory
        return factory
    return register


def build_thunk(state: MachineState, di: DecodedInst):
    factory = HANDLERS[di.handler]
    thunk = factory(state, di)
    if di.modes == "system":
        def gated():
            if state.user_level_mode:
                state.set_ms(MsKind.UNIMPLEMENTED_OPCODE,
                             f"{di.mnemonic} is available only in "
                             f"system-level mode")
                raise Fault(MsKind.UNIMPLEMENTED_OPCODE, di.mnemonic)
            thunk()
        return gated
    return thunk


def exec_instruction(state: MachineState, di: DecodedInst) -> None:
    """Dispatch one decoded instruction; faults land in ms."""
    try:
        build_thunk(state, di)()
    except Fault:
        pass


# ----------------------------------------------------------------------
# operand access compilation
# ----------------------------------------------------------------------

def _gpr_accessors(state, idx, hi, size):
    g = state.gpr
    if size == 8:
        def load():
            return g[idx]

        def store(v):
            g[idx] = v & MASK64
    elif size == 4:
        def load():
            return g[idx] & 0xFFFFFFFF

        def store(v):
            g[idx] = v & 0xFFFFFFFF
    elif size == 2:
        def load():
            return g[idx] & 0xFFFF

        def store(v):
            g[idx] = (g[idx] & ~0xFFFF) | (v & 0xFFFF)
    elif hi:
        def load():
            return (g[idx] >> 8) & 0xFF

        def store(v):
            g[idx] = (g[idx] & ~0xFF00) | ((v & 0xFF) << 8)
    else:
        def load():
            return g[idx] & 0xFF

        def store(v):
            g[idx] = (g[idx] & ~0xFF) | (v & 0xFF)
    return load, store


def _rm_accessors(state, di, size=None):
    size = di.rm_size if size is None else size
    if di.rm_op is not None:
        idx, hi = di.rm_op
        return _gpr_accessors(state, idx, hi, size)
    length = di.length

    def ea():
        return effective_address(di, (state.rip + length) & MASK64, state)

    def load():
        return linear_read(state, ea(), size)

    def store(v):
        linear_write(state, ea(), size, v)
    return load, store


def _reg_accessors(state, di):
    idx, hi = di.reg_op
    return _gpr_accessors(state, idx, hi, di.opsize)


def _imm_const(di):
    if di.immext:
        return sign_extend(di.imm, 8 * di.imm_width) & ((1 << (8 * di.opsize)) - 1)
    return di.imm


def _dst_src(state, di):
    """(load_dst, store_dst, load_src) for two-operand forms."""
    fmt = di.fmt
    if fmt == "rm_r":
        ld, st = _rm_accessors(state, di)
        lr, _ = _reg_accessors(state, di)
        return ld, st, lr
    if fmt == "r_rm":
        lr, sr = _reg_accessors(state, di)
        ld, _ = _rm_accessors(state, di)
        return lr, sr, ld
    if fmt == "rm_imm":
        ld, st = _rm_accessors(state, di)
        imm = _imm_const(di)
        return ld, st, lambda: imm
    if fmt == "acc_imm":
        ld, st = _gpr_accessors(state, 0, False, di.opsize)
        imm = _imm_const(di)
        return ld, st, lambda: imm
    raise ValueError(f"unsupported operand format {fmt}")


# ----------------------------------------------------------------------
# arithmetic / logic family
# ----------------------------------------------------------------------

def _arith_factory(op):
    addlike = op in ("add", "adc")
    sublike = op in ("sub", "sbb", "cmp")
    logiclike = op in ("and", "or", "xor", "test")
    uses_carry = op in ("adc", "sbb")
    stores = op not in ("cmp", "test")

    def factory(state, di):
        length = di.length
        nbits = 8 * di.opsize
        mask = (1 << nbits) - 1
        sign = 1 << (nbits - 1)
        g = state.gpr

        if op == "neg":
            load_dst, store_dst = _rm_accessors(state, di)

            def run():
                r, f = flags_sub(nbits, 0, load_dst())
                store_dst(r)
                state.rflags = (state.rflags & ~STATUS_MASK) | f
                state.rip = (state.rip + length) & MASK64
            return run

        if op in ("inc", "dec"):
            load_dst, store_dst = _rm_accessors(state, di)
            is_inc = op == "inc"
            keep = ~(STATUS_MASK & ~CF)

            def run():
                if is_inc:
                    r, f = flags_add(nbits, load_dst(), 1)
                else:
                    r, f = flags_sub(nbits, load_dst(), 1)
                store_dst(r)
                state.rflags = (state.rflags & keep) | (f & ~CF)
                state.rip = (state.rip + length) & MASK64
            return run

        # plain 32/64-bit register (or immediate) operands take the
        # inlined path; the flag math mirrors flags_add/flags_sub and is
        # cross-checked against them by the brute-force suite
        plan = None
        if di.opsize in (4, 8) and not uses_carry:
            if di.fmt == "rm_r" and di.rm_op is not None:
                plan = (di.rm_op[0], di.reg_op[0], 0)
            elif di.fmt == "r_rm" and di.rm_op is not None:
                plan = (di.reg_op[0], di.rm_op[0], 0)
            elif di.fmt == "rm_imm" and di.rm_op is not None:
                plan = (di.rm_op[0], None, _imm_const(di))
            elif di.fmt == "acc_imm":
                plan = (0, None, _imm_const(di))

        if plan is not None:
            dst_i, src_i, imm = plan
            from_reg = src_i is not None
            wide = di.opsize == 8  # register values are already masked

            if addlike:
                if wide:
                    def run():
                        a = g[dst_i]
                        b = g[src_i] if from_reg else imm
                        t = a + b
                        r = t & MASK64
                        g[dst_i] = r
                        f = PARITY[r & 0xFF]
                        if t > MASK64:
                            f |= CF
                        if (a ^ b ^ r) & 0x10:
                            f |= AF
                        if r == 0:
                            f |= ZF
                        if r >> 63:
                            f |= SF
                        if (a ^ r) & (b ^ r) & sign:
                            f |= OF
                        state.rflags = (state.rflags & ~STATUS_MASK) | f
                        state.rip = (state.rip + length) & MASK64
                    return run

                def run():
                    a = g[dst_i] & mask
                    b = (g[src_i] & mask) if from_reg else imm
                    t = a + b
                    r = t & mask
                    g[dst_i] = r
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
                    state.rflags = (state.rflags & ~STATUS_MASK) | f
                    state.rip = (state.rip + length) & MASK64
                return run

            if sublike:
                if wide:
                    def run():
                        a = g[dst_i]
                        b = g[src_i] if from_reg else imm
                        t = a - b
                        r = t & MASK64
                        if stores:
                            g[dst_i] = r
                        f = PARITY[r & 0xFF]
                        if t < 0:
                            f |= CF
                        if (a ^ b ^ r) & 0x10:
                            f |= AF
                        if r == 0:
                            f |= ZF
                        if r >> 63:
                            f |= SF
                        if (a ^ b) & (a ^ r) & sign:
                            f |= OF
                        state.rflags = (state.rflags & ~STATUS_MASK) | f
                        state.rip = (state.rip + length) & MASK64
                    return run

                def run():
                    a = g[dst_i] & mask
                    b = (g[src_i] & mask) if from_reg else imm
                    t = a - b
                    r = t & mask
                    if stores:
                        g[dst_i] = r
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
                    state.rflags = (state.rflags & ~STATUS_MASK) | f
                    state.rip = (state.rip + length) & MASK64
                return run

            is_and = op in ("and", "test")
            is_or = op == "or"

            if wide:
                def run():
                    a = g[dst_i]
                    b = g[src_i] if from_reg else imm
                    r = (a & b) if is_and else ((a | b) if is_or else (a ^ b))
                    if stores:
                        g[dst_i] = r
                    f = PARITY[r & 0xFF]
                    if r == 0:
                        f |= ZF
                    if r >> 63:
                        f |= SF
                    if state.undef_read() & 1:
                        f |= AF
                    state.rflags = (state.rflags & ~STATUS_MASK) | f
                    state.rip = (state.rip + length) & MASK64
                return run

            def run():
                a = g[dst_i] & mask
                b = (g[src_i] & mask) if from_reg else imm
                r = (a & b) if is_and else ((a | b) if is_or else (a ^ b))
                if stores:
                    g[dst_i] = r
                f = PARITY[r & 0xFF]
                if r == 0:
                    f |= ZF
                if r & sign:
                    f |= SF
                if state.undef_read() & 1:
                    f |= AF
                state.rflags = (state.rflags & ~STATUS_MASK) | f
                state.rip = (state.rip + length) & MASK64
            return run

        load_dst, store_dst, load_src = _dst_src(state, di)

        if addlike:
            def run():
                cin = (state.rflags & CF) if uses_carry else 0
                r, f = flags_add(nbits, load_dst(), load_src(), cin)
                store_dst(r)
                state.rflags = (state.rflags & ~STATUS_MASK) | f
                state.rip = (state.rip + length) & MASK64
            return run

        if sublike:
            def run():
                cin = (state.rflags & CF) if uses_carry else 0
                r, f = flags_sub(nbits, load_dst(), load_src(), cin)
                if stores:
                    store_dst(r)
                state.rflags = (state.rflags & ~STATUS_MASK) | f
                state.rip = (state.rip + length) & MASK64
            return run

        # logic family: AF is undefined and drawn from the undef pool
        is_and = op in ("and", "test")
        is_or = op == "or"

        def run():
            a = load_dst()
            b = load_src()
            r = (a & b) if is_and else ((a | b) if is_or else (a ^ b))
            if stores:
                store_dst(r)
            f = flags_logic(nbits, r)
            if state.undef_read() & 1:
                f |= AF
            state.rflags = (state.rflags & ~STATUS_MASK) | f
            state.rip = (state.rip + length) & MASK64
        return run

    return factory


for _op in ("add", "or", "adc", "sbb", "and", "sub", "xor", "cmp", "test"):
    handler(f"arith.{_op}")(_arith_factory(_op))
handler("arith.neg")(_arith_factory("neg"))
handler("arith.inc")(_arith_factory("inc"))
handler("arith.dec")(_arith_factory("dec"))


@handler("not")
def _not(state, di):
    load_dst, store_dst = _rm_accessors(state, di)
    mask = (1 << (8 * di.opsize)) - 1
    length = di.length

    def run():
        store_dst(load_dst() ^ mask)
        state.rip = (state.rip + length) & MASK64
    return run


# ----------------------------------------------------------------------
# data movement
# ----------------------------------------------------------------------

@handler("mov.store")
def _mov_store(state, di):
    _, store_dst = _rm_accessors(state, di)
    load_src, _ = _reg_accessors(state, di)
    length = di.length

    def run():
        store_dst(load_src())
        state.rip = (state.rip + length) & MASK64
    return run


@handler("mov.load")
def _mov_load(state, di):
    _, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    length = di.length

    # common case: 32/64-bit register to register
    if di.rm_op is not None and di.opsize in (4, 8) and not di.rm_op[1]:
        g = state.gpr
        src = di.rm_op[0]
        dst = di.reg_op[0]
        if di.opsize == 8:
            def run():
                g[dst] = g[src]
                state.rip = (state.rip + length) & MASK64
        else:
            def run():
                g[dst] = g[src] & 0xFFFFFFFF
                state.rip = (state.rip + length) & MASK64
        return run

    def run():
        store_dst(load_src())
        state.rip = (state.rip + length) & MASK64
    return run


@handler("mov.imm")
def _mov_imm(state, di):
    _, store_dst = _rm_accessors(state, di)
    imm = _imm_const(di)
    length = di.length

    def run():
        store_dst(imm)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("mov.opreg")
def _mov_opreg(state, di):
    idx, hi = di.reg_op
    _, store = _gpr_accessors(state, idx, hi, di.opsize)
    imm = di.imm
    length = di.length

    def run():
        store(imm)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("movzx")
def _movzx(state, di):
    _, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    length = di.length

    def run():
        store_dst(load_src())
        state.rip = (state.rip + length) & MASK64
    return run


@handler("movsx")
def _movsx(state, di):
    _, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    src_bits = 8 * di.rm_size
    mask = (1 << (8 * di.opsize)) - 1
    length = di.length

    def run():
        store_dst(sign_extend(load_src(), src_bits) & mask)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("lea")
def _lea(state, di):
    _, store_dst = _reg_accessors(state, di)
    length = di.length
    mask = (1 << (8 * di.opsize)) - 1

    def run():
        ea = effective_address(di, (state.rip + length) & MASK64, state,
                               apply_segment=False)
        store_dst(ea & mask)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("xchg")
def _xchg(state, di):
    load_rm, store_rm = _rm_accessors(state, di)
    load_r, store_r = _reg_accessors(state, di)
    length = di.length

    def run():
        a = load_rm()
        b = load_r()
        store_rm(b)
        store_r(a)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("xchg.acc")
def _xchg_acc(state, di):
    idx, hi = di.reg_op
    load_r, store_r = _gpr_accessors(state, idx, hi, di.opsize)
    load_a, store_a = _gpr_accessors(state, 0, False, di.opsize)
    length = di.length

    def run():
        a = load_a()
        b = load_r()
        store_a(b)
        store_r(a)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("cmovcc")
def _cmovcc(state, di):
    load_dst, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    cond = _cc_predicate(state, di.cc)
    length = di.length

    def run():
        v = load_src()  # source is read regardless of the condition
        if not cond():
            v = load_dst()
        store_dst(v)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("setcc")
def _setcc(state, di):
    _, store_dst = _rm_accessors(state, di)
    cond = _cc_predicate(state, di.cc)
    length = di.length

    def run():
        store_dst(1 if cond() else 0)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("convert")
def _convert(state, di):
    g = state.gpr
    size = di.opsize
    length = di.length

    def run():
        if size == 8:
            g[2] = MASK64 if g[0] & (1 << 63) else 0
        elif size == 4:
            g[2] = 0xFFFFFFFF if g[0] & (1 << 31) else 0
        else:
            g[2] = (g[2] & ~0xFFFF) | (0xFFFF if g[0] & 0x8000 else 0)
        state.rip = (state.rip + length) & MASK64
    return run


# ----------------------------------------------------------------------
# stack
# ----------------------------------------------------------------------

def _push_value(state, size, value):
    rsp = (state.gpr[4] - size) & MASK64
    linear_write(state, rsp, size, value)
    state.gpr[4] = rsp


@handler("push.reg")
def _push_reg(state, di):
    idx, _hi = di.reg_op
    size = di.opsize
    g = state.gpr
    length = di.length

    def run():
        v = g[idx] if size == 8 else g[idx] & 0xFFFF
        _push_value(state, size, v)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("push.imm")
def _push_imm(state, di):
    size = di.opsize
    imm = _imm_const(di)
    length = di.length

    def run():
        _push_value(state, size, imm)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("push.rm")
def _push_rm(state, di):
    load_src, _ = _rm_accessors(state, di)
    size = di.opsize
    length = di.length

    def run():
        _push_value(state, size, load_src())
        state.rip = (state.rip + length) & MASK64
    return run


@handler("pop.reg")
def _pop_reg(state, di):
    idx, _hi = di.reg_op
    size = di.opsize
    _, store = _gpr_accessors(state, idx, False, size)
    g = state.gpr
    length = di.length

    def run():
        v = linear_read(state, g[4], size)
        g[4] = (g[4] + size) & MASK64
        store(v)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("pop.rm")
def _pop_rm(state, di):
    _, store_dst = _rm_accessors(state, di)
    size = di.opsize
    g = state.gpr
    length = di.length

    def run():
        v = linear_read(state, g[4], size)
        g[4] = (g[4] + size) & MASK64
        store_dst(v)
        state.rip = (state.rip + length) & MASK64
    return run


# ----------------------------------------------------------------------
# multiply / divide
# ----------------------------------------------------------------------

def _mul_flags(state, rflags, overflow):
    """CF=OF=overflow; PF, AF, ZF, SF drawn from the undef pool in the
    fixed order."""
    rflags = (rflags | (CF | OF)) if overflow else (rflags & ~(CF | OF))
    for bit in (PF, AF, ZF, SF):
        if state.undef_read() & 1:
            rflags |= bit
        else:
            rflags &= ~bit
    return rflags


def _div_flags(state, rflags):
    for bit in (CF, PF, AF, ZF, SF, OF):
        if state.undef_read() & 1:
            rflags |= bit
        else:
            rflags &= ~bit
    return rflags


def _muldiv_factory(kind):
    def factory(state, di):
        load_src, _ = _rm_accessors(state, di)
        size = di.opsize
        bits = 8 * size
        mask = (1 << bits) - 1
        g = state.gpr
        length = di.length

        def read_pair():
            # (high, low) halves of the implicit dividend/accumulator
            if size == 1:
                return (g[0] >> 8) & 0xFF, g[0] & 0xFF
            return g[2] & mask, g[0] & mask

        def write_pair(hi, lo):
            if size == 1:
                g[0] = (g[0] & ~0xFFFF) | ((hi & 0xFF) << 8) | (lo & 0xFF)
            elif size == 2:
                g[0] = (g[0] & ~0xFFFF) | (lo & 0xFFFF)
                g[2] = (g[2] & ~0xFFFF) | (hi & 0xFFFF)
            elif size == 4:
                g[0] = lo & 0xFFFFFFFF
                g[2] = hi & 0xFFFFFFFF
            else:
                g[0] = lo
                g[2] = hi

        if kind == "mul":
            def run():
                src = load_src()
                _, lo_in = read_pair()
                full = lo_in * src
                hi, lo = full >> bits, full & mask
                write_pair(hi, lo)
                state.rflags = _mul_flags(state, state.rflags, hi != 0)
                state.rip = (state.rip + length) & MASK64
            return run

        if kind == "imul":
            def run():
                src = sign_extend(load_src(), bits)
                _, lo_in = read_pair()
                full = sign_extend(lo_in, bits) * src
                lo = full & mask
                hi = (full >> bits) & mask
                write_pair(hi, lo)
                overflow = sign_extend(lo, bits) != full
                state.rflags = _mul_flags(state, state.rflags, overflow)
                state.rip = (state.rip + length) & MASK64
            return run

        if kind == "div":
            def run():
                src = load_src()
                if src == 0:
                    state.set_ms(MsKind.DIVIDE_ERROR, "division by zero")
                    raise Fault(MsKind.DIVIDE_ERROR, "division by zero")
                hi, lo = read_pair()
                dividend = (hi << bits) | lo
                q, r = divmod(dividend, src)
                if q > mask:
                    state.set_ms(MsKind.DIVIDE_ERROR, "quotient overflow")
                    raise Fault(MsKind.DIVIDE_ERROR, "quotient overflow")
                write_pair(r, q)
                state.rflags = _div_flags(state, state.rflags)
                state.rip = (state.rip + length) & MASK64
            return run

        def run():  # idiv
            src = sign_extend(load_src(), bits)
            if src == 0:
                state.set_ms(MsKind.DIVIDE_ERROR, "division by zero")
                raise Fault(MsKind.DIVIDE_ERROR, "division by zero")
            hi, lo = read_pair()
            dividend = sign_extend((hi << bits) | lo, 2 * bits)
            q = abs(dividend) // abs(src)
            if (dividend < 0) != (src < 0):
                q = -q
            r = dividend - q * src
            if not (-(1 << (bits - 1)) <= q <= (1 << (bits - 1)) - 1):
                state.set_ms(MsKind.DIVIDE_ERROR, "quotient overflow")
                raise Fault(MsKind.DIVIDE_ERROR, "quotient overflow")
            write_pair(r & mask, q & mask)
            state.rflags = _div_flags(state, state.rflags)
            state.rip = (state.rip + length) & MASK64
        return run

    return factory


for _k in ("mul", "imul", "div", "idiv"):
    handler(f"muldiv.{_k}")(_muldiv_factory(_k))


@handler("imul.rr")
def _imul_rr(state, di):
    load_dst, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    bits = 8 * di.opsize
    mask = (1 << bits) - 1
    length = di.length

    def run():
        full = sign_extend(load_dst(), bits) * sign_extend(load_src(), bits)
        lo = full & mask
        store_dst(lo)
        state.rflags = _mul_flags(state, state.rflags,
                                  sign_extend(lo, bits) != full)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("imul.rri")
def _imul_rri(state, di):
    _, store_dst = _reg_accessors(state, di)
    load_src, _ = _rm_accessors(state, di)
    bits = 8 * di.opsize
    mask = (1 << bits) - 1
    imm = sign_extend(_imm_const(di), bits)
    length = di.length

    def run():
        full = sign_extend(load_src(), bits) * imm
        lo = full & mask
        store_dst(lo)
        state.rflags = _mul_flags(state, state.rflags,
                                  sign_extend(lo, bits) != full)
        state.rip = (state.rip + length) & MASK64
    return run


# ----------------------------------------------------------------------
# shifts and rotates
# ----------------------------------------------------------------------

def _shift_factory(kind):
    def factory(state, di):
        load_dst, store_dst = _rm_accessors(state, di)
        bits = 8 * di.opsize
        mask = (1 << bits) - 1
        count_mask = 0x3F if di.opsize == 8 else 0x1F
        length = di.length
        g = state.gpr

        if di.fmt == "rm_imm8":
            raw_count = di.imm

            def get_count():
                return raw_count
        elif di.fmt == "rm_count1":
            def get_count():
                return 1
        else:
            def get_count():
                return g[1] & 0xFF

        def run():
            cnt = get_count() & count_mask
            if cnt == 0:
                state.rip = (state.rip + length) & MASK64
                return
            v = load_dst()
            rflags = state.rflags
            if kind == "shl":
                r = (v << cnt) & mask
                cf = (v >> (bits - cnt)) & 1 if cnt <= bits else 0
                of = ((r >> (bits - 1)) & 1) ^ cf
            elif kind == "shr":
                r = v >> cnt
                cf = (v >> (cnt - 1)) & 1 if cnt <= bits else 0
                of = (v >> (bits - 1)) & 1
            elif kind == "sar":
                s = sign_extend(v, bits)
                r = (s >> cnt) & mask
                cf = (s >> (cnt - 1)) & 1
                of = 0
            elif kind == "rol":
                k = cnt % bits
                r = ((v << k) | (v >> (bits - k))) & mask if k else v
                cf = r & 1
                of = ((r >> (bits - 1)) & 1) ^ cf
            else:  # ror
                k = cnt % bits
                r = ((v >> k) | (v << (bits - k))) & mask if k else v
                cf = (r >> (bits - 1)) & 1
                of = ((r >> (bits - 1)) & 1) ^ ((r >> (bits - 2)) & 1)
            store_dst(r)
            rflags = (rflags | CF) if cf else (rflags & ~CF)
            if kind in ("shl", "shr", "sar"):
                keep = rflags & ~(PF | ZF | SF)
                rflags = keep | PARITY[r & 0xFF] | (ZF if r == 0 else 0) \
                    | (SF if r & (1 << (bits - 1)) else 0)
            # AF undefined whenever the masked count is nonzero
            if state.undef_read() & 1:
                rflags |= AF
            else:
                rflags &= ~AF
            if cnt == 1:
                rflags = (rflags | OF) if of else (rflags & ~OF)
            elif state.undef_read() & 1:
                rflags |= OF
            else:
                rflags &= ~OF
            state.rflags = rflags
            state.rip = (state.rip + length) & MASK64
        return run

    return factory


for _k in ("shl", "shr", "sar", "rol", "ror"):
    handler(f"shift.{_k}")(_shift_factory(_k))


# ----------------------------------------------------------------------
# control flow
# ----------------------------------------------------------------------

def _cc_predicate(state, cc):
    """Condition predicate over rflags for the 16 standard codes."""
    base = cc >> 1
    invert = cc & 1

    if base == 0:  # o
        def test(f):
            return f & OF
    elif base == 1:  # b
        def test(f):
            return f & CF
    elif base == 2:  # e
        def test(f):
            return f & ZF
    elif base == 3:  # be
        def test(f):
            return f & (CF | ZF)
    elif base == 4:  # s
        def test(f):
            return f & SF
    elif base == 5:  # p
        def test(f):
            return f & PF
    elif base == 6:  # l: SF != OF
        def test(f):
            return ((f >> 7) ^ (f >> 11)) & 1
    else:  # le: ZF or SF != OF
        def test(f):
            return (f & ZF) or (((f >> 7) ^ (f >> 11)) & 1)

    if invert:
        def cond():
            return not test(state.rflags)
    else:
        def cond():
            return bool(test(state.rflags))
    return cond


@handler("jcc")
def _jcc(state, di):
    rel = sign_extend(di.imm, 8 * di.imm_width)
    length = di.length
    base = di.cc >> 1
    invert = bool(di.cc & 1)

    if base <= 5:
        # conditions testable with one rflags mask
        test_mask = (OF, CF, ZF, CF | ZF, SF, PF)[base]
        if invert:
            def run():
                nxt = (state.rip + length) & MASK64
                state.rip = nxt if state.rflags & test_mask \
                    else (nxt + rel) & MASK64
        else:
            def run():
                nxt = (state.rip + length) & MASK64
                state.rip = (nxt + rel) & MASK64 \
                    if state.rflags & test_mask else nxt
        return run

    cond = _cc_predicate(state, di.cc)

    def run():
        nxt = (state.rip + length) & MASK64
        state.rip = (nxt + rel) & MASK64 if cond() else nxt
    return run


@handler("jmp")
def _jmp(state, di):
    rel = sign_extend(di.imm, 8 * di.imm_width)
    length = di.length

    def run():
        state.rip = (state.rip + length + rel) & MASK64
    return run


@handler("call")
def _call(state, di):
    rel = sign_extend(di.imm, 8 * di.imm_width)
    size = di.opsize
    length = di.length

    def run():
        nxt = (state.rip + length) & MASK64
        _push_value(state, size, nxt)
        state.rip = (nxt + rel) & MASK64
    return run


@handler("ret")
def _ret(state, di):
    g = state.gpr

    def run():
        v = linear_read(state, g[4], 8)
        g[4] = (g[4] + 8) & MASK64
        state.rip = v
    return run


# ----------------------------------------------------------------------
# misc / system
# ----------------------------------------------------------------------

@handler("nop")
@handler("nop.multi")
def _nop(state, di):
    length = di.length

    def run():
        state.rip = (state.rip + length) & MASK64
    return run


@handler("rdrand")
def _rdrand(state, di):
    _, store_dst = _rm_accessors(state, di)
    length = di.length

    def run():
        store_dst(state.undef_read())
        # success: CF=1, all other status flags cleared
        state.rflags = ((state.rflags & ~STATUS_MASK) | CF)
        state.rip = (state.rip + length) & MASK64
    return run


@handler("syscall")
def _syscall(state, di):
    from .environment import env_syscall
    length = di.length
    g = state.gpr

    def run():
        if state.user_level_mode:
            # extended semantics: the whole call completes here
            env_syscall(state)
            state.rip = (state.rip + length) & MASK64
            return
        nxt = (state.rip + length) & MASK64
        g[1] = nxt
        g[11] = state.rflags
        state.rip = state.msr[MSR_LSTAR]
        state.rflags = normalize_rflags(state.rflags & ~state.msr[MSR_FMASK])
    return run


@handler("sysret")
def _sysret(state, di):
    g = state.gpr

    def run():
        state.rip = g[1]
        state.rflags = normalize_rflags(g[11])
    return run


@handler("mov.fromcr")
def _mov_fromcr(state, di):
    idx = di.rm_op[0]
    creg = di.creg
    g = state.gpr
    length = di.length

    def run():
        g[idx] = {0: state.cr0, 2: state.cr2,
                  3: state.cr3, 4: state.cr4}[creg]
        state.rip = (state.rip + length) & MASK64
    return run


@handler("mov.tocr")
def _mov_tocr(state, di):
    idx = di.rm_op[0]
    creg = di.creg
    g = state.gpr
    length = di.length

    def run():
        v = g[idx]
        if creg == 0:
            state.cr0 = v
        elif creg == 2:
            state.cr2 = v
        elif creg == 3:
            state.cr3 = v
        else:
            state.cr4 = v
        state.rip = (state.rip + length) & MASK64
    return run


def _load_descriptor(state, di):
    ea = effective_address(di, (state.rip + di.length) & MASK64, state)
    limit = linear_read(state, ea, 2)
    base = linear_read(state, ea + 2, 8)
    return base, limit


@handler("lgdt")
def _lgdt(state, di):
    length = di.length

    def run():
        base, limit = _load_descriptor(state, di)
        state.gdtr.base = base
        state.gdtr.limit = limit
        state.rip = (state.rip + length) & MASK64
    return run


@handler("lidt")
def _lidt(state, di):
    length = di.length

    def run():
        base, limit = _load_descriptor(state, di)
        state.idtr.base = base
        state.idtr.limit = limit
        state.rip = (state.rip + length) & MASK64
    return run


def check_dispatch_table():
    """Every opcode-table row must name a registered handler (and the
    registry must not carry dead entries)."""
    from .decode import opcode_table_rows
    used = {row.handler for _m, _o, _r, row in opcode_table_rows()}
    missing = sorted(used - set(HANDLERS))
    unused = sorted(set(HANDLERS) - used)
    return missing, unused


def implemented_report():
    """Rows of the implemented-opcodes table: map, opcode, sub-opcode,
    mnemonic, operand format, and mode availability."""
    from .decode import opcode_table_rows
    rows = []
    for map_name, opcode, modreg, row in opcode_table_rows():
        rows.append({
            "map": map_name,
            "opcode": f"{opcode:02X}",
            "reg": "" if modreg is None else f"/{modreg}",
            "mnemonic": row.mnemonic,
            "format": row.fmt,
            "modes": "system" if row.modes == "system" else "user+system",
        })
    return rows
