import random

import pytest

from x64sim.state import (MachineState, UndefPolicy, MsKind, MASK64,
                          MSR_LSTAR, MSR_FMASK, states_equal)
from x64sim.decode import decode_bytes
from x64sim.semantics import exec_instruction
from x64sim.memory import (write_linear_bytes, linear_read, linear_write,
                           init_system_level_mode)
from x64sim.loader import init_x86_state
from x64sim.interp import x86_run, x86_step

from conftest import load_program
from progen import make_program


def run_one(state, hexcode, rip=0x1000):
    """Place one instruction at rip and execute it."""
    code = bytes.fromhex(hexcode)
    write_linear_bytes(state, rip, code)
    state.rip = rip
    exec_instruction(state, decode_bytes(code))
    return state


class TestArith:
    def test_add_small(self, user_state):
        user_state.gpr[0] = 1
        user_state.gpr[3] = 2
        run_one(user_state, "4801d8")  # add rax, rbx
        assert user_state.gpr[0] == 3
        assert user_state.read_flag("cf") == 0
        assert user_state.read_flag("zf") == 0
        assert user_state.rip == 0x1003

    def test_add_carry_wrap(self, user_state):
        user_state.gpr[0] = 0xFFFFFFFFFFFFFFFF
        user_state.gpr[3] = 1
        run_one(user_state, "4801d8")
        assert user_state.gpr[0] == 0
        assert user_state.read_flag("cf") == 1
        assert user_state.read_flag("zf") == 1
        assert user_state.read_flag("of") == 0

    def test_add_mem_dest(self, user_state):
        linear_write(user_state, 0x600000, 8, 40)
        user_state.gpr[3] = 2
        # add [0x600000], rbx  (sib disp32, no base)
        run_one(user_state, "48011c2500006000")
        assert linear_read(user_state, 0x600000, 8) == 42

    def test_cmp_does_not_store(self, user_state):
        user_state.gpr[0] = 5
        user_state.gpr[3] = 9
        run_one(user_state, "4839d8")  # cmp rax, rbx
        assert user_state.gpr[0] == 5
        assert user_state.read_flag("cf") == 1

    def test_inc_preserves_cf(self, user_state):
        user_state.write_flag("cf", 1)
        user_state.gpr[0] = 0xFF
        run_one(user_state, "fec0")  # inc al
        assert user_state.gpr[0] & 0xFF == 0
        assert user_state.read_flag("cf") == 1
        assert user_state.read_flag("zf") == 1

    def test_neg_sets_cf_for_nonzero(self, user_state):
        user_state.gpr[0] = 5
        run_one(user_state, "48f7d8")  # neg rax
        assert user_state.gpr[0] == (-5) & MASK64
        assert user_state.read_flag("cf") == 1
        run_one(user_state, "48f7d8", rip=0x2000)
        assert user_state.gpr[0] == 5

    def test_adc_uses_carry(self, user_state):
        user_state.write_flag("cf", 1)
        user_state.gpr[0] = 1
        user_state.gpr[3] = 2
        run_one(user_state, "4811d8")  # adc rax, rbx
        assert user_state.gpr[0] == 4

    def test_logic_draws_one_af(self, user_state):
        seed0 = user_state.undef_seed
        user_state.gpr[0] = 0xFF00
        run_one(user_state, "4831c0")  # xor rax, rax
        assert user_state.gpr[0] == 0
        assert user_state.read_flag("zf") == 1
        assert user_state.read_flag("cf") == 0
        assert user_state.read_flag("of") == 0
        assert user_state.read_flag("sf") == 0
        assert user_state.undef_seed == seed0 + 1

    def test_not_touches_no_flags(self, user_state):
        user_state.set_rflags(0x8D7)
        user_state.gpr[0] = 0
        before = user_state.rflags
        run_one(user_state, "48f7d0")  # not rax
        assert user_state.gpr[0] == MASK64
        assert user_state.rflags == before


class TestWidth8BruteForce:
    """Exhaustive 8-bit add/sub vs the wide-integer oracle; the full
    acceptance suite extends this to all eight operations."""

    def test_add8_all_pairs_sample(self, user_state):
        from test_flags import oracle_flags, unpack
        user_state = MachineState(undef_policy=UndefPolicy("zero"))
        code = bytes.fromhex("00d8")  # add al, bl
        write_linear_bytes(user_state, 0x1000, code)
        di = decode_bytes(code)
        for a in range(0, 256, 7):
            for b in range(0, 256, 5):
                user_state.gpr[0] = a
                user_state.gpr[3] = b
                user_state.rip = 0x1000
                exec_instruction(user_state, di)
                er, ecf, epf, eaf, ezf, esf, eof = \
                    oracle_flags("add", 8, a, b)
                assert user_state.gpr[0] & 0xFF == er
                assert user_state.read_flag("cf") == ecf
                assert user_state.read_flag("pf") == epf
                assert user_state.read_flag("af") == eaf
                assert user_state.read_flag("zf") == ezf
                assert user_state.read_flag("sf") == esf
                assert user_state.read_flag("of") == eof


class TestMulDiv:
    def test_div_small(self, user_state):
        user_state.gpr[2] = 0
        user_state.gpr[0] = 7
        user_state.gpr[1] = 2
        run_one(user_state, "48f7f1")  # div rcx
        assert user_state.gpr[0] == 3
        assert user_state.gpr[2] == 1

    def test_div_by_zero(self, user_state):
        user_state.gpr[1] = 0
        run_one(user_state, "48f7f1")
        assert user_state.ms is not None
        assert user_state.ms.kind == MsKind.DIVIDE_ERROR
        assert user_state.ms.at_rip == 0x1000
        assert user_state.rip == 0x1000  # no advance

    def test_div_quotient_overflow(self, user_state):
        user_state.gpr[2] = 5  # rdx:rax / 1 would overflow
        user_state.gpr[0] = 1
        user_state.gpr[1] = 1
        run_one(user_state, "48f7f1")
        assert user_state.ms.kind == MsKind.DIVIDE_ERROR

    def test_mul_wide(self, user_state):
        seed0 = user_state.undef_seed
        user_state.gpr[0] = 1 << 32
        user_state.gpr[1] = 1 << 32
        run_one(user_state, "48f7e1")  # mul rcx
        assert user_state.gpr[2] == 1
        assert user_state.gpr[0] == 0
        assert user_state.read_flag("cf") == 1
        assert user_state.read_flag("of") == 1
        assert user_state.undef_seed == seed0 + 4

    def test_div_draws_six(self, user_state):
        seed0 = user_state.undef_seed
        user_state.gpr[2] = 0
        user_state.gpr[0] = 100
        user_state.gpr[1] = 7
        run_one(user_state, "48f7f1")
        assert user_state.undef_seed == seed0 + 6

    def test_imul_signed(self, user_state):
        user_state.gpr[0] = (-3) & MASK64
        user_state.gpr[1] = 4
        run_one(user_state, "48f7e9")  # imul rcx
        assert user_state.gpr[0] == (-12) & MASK64
        assert user_state.gpr[2] == MASK64  # sign extension of the high half
        assert user_state.read_flag("cf") == 0

    def test_idiv_signed(self, user_state):
        user_state.gpr[0] = (-7) & MASK64
        user_state.gpr[2] = MASK64  # sign-extended dividend
        user_state.gpr[1] = 2
        run_one(user_state, "48f7f9")  # idiv rcx
        assert user_state.gpr[0] == (-3) & MASK64  # truncates toward zero
        assert user_state.gpr[2] == (-1) & MASK64

    def test_div8_uses_ax(self, user_state):
        user_state.gpr[0] = 0x0123  # ax = 291
        user_state.gpr[3] = 0x10
        run_one(user_state, "f6f3")  # div bl
        assert user_state.gpr[0] & 0xFF == 18   # al = quotient
        assert (user_state.gpr[0] >> 8) & 0xFF == 3  # ah = remainder

    def test_imul_rri(self, user_state):
        user_state.gpr[2] = 7
        run_one(user_state, "486bc2ff")  # imul rax, rdx, -1
        assert user_state.gpr[0] == (-7) & MASK64


class TestShifts:
    def test_shl_to_top_bit(self, user_state):
        user_state.gpr[0] = 1
        run_one(user_state, "48c1e03f")  # shl rax, 63
        assert user_state.gpr[0] == 1 << 63
        assert user_state.read_flag("cf") == 0

    def test_shift_count_zero_is_identity(self, user_state):
        user_state.set_rflags(0x8D7)
        user_state.gpr[0] = 0x1234
        seed0 = user_state.undef_seed
        flags0 = user_state.rflags
        run_one(user_state, "48c1e000")  # shl rax, 0
        assert user_state.gpr[0] == 0x1234
        assert user_state.rflags == flags0
        assert user_state.undef_seed == seed0
        assert user_state.rip == 0x1004

    def test_sar_sign_propagation(self, user_state):
        # native oracle: sar 0x80000000,1 -> 0xC0000000 CF=0 OF=0
        user_state.gpr[0] = 0x80000000
        run_one(user_state, "d1f8")  # sar eax, 1
        assert user_state.gpr[0] == 0xC0000000
        assert user_state.read_flag("cf") == 0
        assert user_state.read_flag("of") == 0

    def test_shr_cf_last_bit_out(self, user_state):
        user_state.gpr[0] = 0b110
        run_one(user_state, "48d1e8")  # shr rax, 1
        assert user_state.gpr[0] == 0b11
        assert user_state.read_flag("cf") == 0
        run_one(user_state, "48d1e8", rip=0x2000)
        assert user_state.read_flag("cf") == 1

    def test_count_masked_mod64(self, user_state):
        user_state.gpr[0] = 0x1234
        user_state.gpr[1] = 64  # masked to 0
        seed0 = user_state.undef_seed
        run_one(user_state, "48d3e0")  # shl rax, cl
        assert user_state.gpr[0] == 0x1234
        assert user_state.undef_seed == seed0

    def test_count_masked_mod32(self, user_state):
        user_state.gpr[0] = 0x80000000
        user_state.gpr[1] = 33  # masked to 1 for 32-bit operands
        run_one(user_state, "d3e0")  # shl eax, cl
        assert user_state.gpr[0] == 0
        assert user_state.read_flag("cf") == 1

    def test_undef_draws(self, user_state):
        seed0 = user_state.undef_seed
        user_state.gpr[0] = 3
        run_one(user_state, "48c1e001")  # count 1: AF only
        assert user_state.undef_seed == seed0 + 1
        run_one(user_state, "48c1e005", rip=0x2000)  # count 5: AF and OF
        assert user_state.undef_seed == seed0 + 3

    def test_rol_ror_roundtrip(self, user_state):
        user_state.gpr[0] = 0x8000000000000001
        run_one(user_state, "48c1c004")  # rol rax, 4
        assert user_state.gpr[0] == 0x0000000000000018
        run_one(user_state, "48c1c804", rip=0x2000)  # ror rax, 4
        assert user_state.gpr[0] == 0x8000000000000001

    def test_rotate_preserves_zf_sf_pf(self, user_state):
        user_state.write_flag("zf", 1)
        user_state.write_flag("sf", 1)
        user_state.gpr[0] = 0x10
        run_one(user_state, "48c1c002")  # rol rax, 2
        assert user_state.read_flag("zf") == 1
        assert user_state.read_flag("sf") == 1


class TestBranches:
    def test_jz_taken(self, user_state):
        user_state.write_flag("zf", 1)
        run_one(user_state, "7405")  # jz +5
        assert user_state.rip == 0x1000 + 2 + 5

    def test_jz_not_taken(self, user_state):
        user_state.write_flag("zf", 0)
        run_one(user_state, "7405")
        assert user_state.rip == 0x1002

    def test_jnb_complementary(self, user_state):
        user_state.write_flag("cf", 0)
        run_one(user_state, "7310")  # jae/jnb +0x10
        assert user_state.rip == 0x1012
        user_state.write_flag("cf", 1)
        run_one(user_state, "7310", rip=0x2000)
        assert user_state.rip == 0x2002

    def test_all_16_conditions(self, user_state):
        rng = random.Random(31)
        defs = {
            0: lambda f: f["of"], 1: lambda f: not f["of"],
            2: lambda f: f["cf"], 3: lambda f: not f["cf"],
            4: lambda f: f["zf"], 5: lambda f: not f["zf"],
            6: lambda f: f["cf"] or f["zf"],
            7: lambda f: not (f["cf"] or f["zf"]),
            8: lambda f: f["sf"], 9: lambda f: not f["sf"],
            10: lambda f: f["pf"], 11: lambda f: not f["pf"],
            12: lambda f: f["sf"] != f["of"],
            13: lambda f: f["sf"] == f["of"],
            14: lambda f: f["zf"] or (f["sf"] != f["of"]),
            15: lambda f: not f["zf"] and f["sf"] == f["of"],
        }
        for _ in range(400):
            cc = rng.randrange(16)
            flags = {n: rng.randrange(2) for n in ("cf", "pf", "zf", "sf", "of")}
            for name, bit in flags.items():
                user_state.write_flag(name, bit)
            run_one(user_state, f"{0x70 + cc:02x}08", rip=0x3000)
            expect = 0x300A if defs[cc](flags) else 0x3002
            assert user_state.rip == expect, (cc, flags)

    def test_jmp_rel32_backward(self, user_state):
        run_one(user_state, "e9f6ffffff")  # jmp -10
        assert user_state.rip == 0x1000 + 5 - 10

    def test_call_ret_inverse(self, user_state):
        user_state.gpr[4] = 0x7F000
        write_linear_bytes(user_state, 0x1000, bytes.fromhex("e80b000000"))
        write_linear_bytes(user_state, 0x1010, bytes.fromhex("c3"))
        init_x86_state(user_state, None, 0x1000, None)
        x86_step(user_state)  # call +0x0b -> 0x1010
        assert user_state.rip == 0x1010
        assert user_state.gpr[4] == 0x7F000 - 8
        assert linear_read(user_state, 0x7F000 - 8, 8) == 0x1005
        x86_step(user_state)  # ret
        assert user_state.rip == 0x1005
        assert user_state.gpr[4] == 0x7F000


class TestDataMovement:
    def test_mov_imm64(self, user_state):
        run_one(user_state, "48b8efcdab8967452301")
        assert user_state.gpr[0] == 0x0123456789ABCDEF

    def test_mov32_zero_extends(self, user_state):
        user_state.gpr[3] = MASK64
        run_one(user_state, "89c3")  # mov ebx, eax
        assert user_state.gpr[3] == user_state.gpr[0] & 0xFFFFFFFF

    def test_movzx_movsx(self, user_state):
        user_state.gpr[1] = 0x80
        run_one(user_state, "480fb6c1")  # movzx rax, cl
        assert user_state.gpr[0] == 0x80
        run_one(user_state, "480fbec1", rip=0x2000)  # movsx rax, cl
        assert user_state.gpr[0] == 0xFFFFFFFFFFFFFF80

    def test_movsxd(self, user_state):
        user_state.gpr[1] = 0x80000000
        run_one(user_state, "4863c1")  # movsxd rax, ecx
        assert user_state.gpr[0] == 0xFFFFFFFF80000000

    def test_lea_ignores_segment(self, user_state):
        user_state.fs_base = 0x5000
        user_state.gpr[3] = 0x100
        run_one(user_state, "64488d4310")  # lea rax, fs:[rbx+0x10]
        assert user_state.gpr[0] == 0x110

    def test_xchg(self, user_state):
        user_state.gpr[0] = 1
        user_state.gpr[3] = 2
        run_one(user_state, "4887d8")  # xchg rax, rbx
        assert (user_state.gpr[0], user_state.gpr[3]) == (2, 1)

    def test_push_pop(self, user_state):
        user_state.gpr[4] = 0x7F000
        user_state.gpr[0] = 0xAABB
        run_one(user_state, "50")  # push rax
        assert user_state.gpr[4] == 0x7EFF8
        user_state.gpr[0] = 0
        run_one(user_state, "58", rip=0x2000)  # pop rax
        assert user_state.gpr[0] == 0xAABB
        assert user_state.gpr[4] == 0x7F000

    def test_push_rsp_pushes_old_value(self, user_state):
        user_state.gpr[4] = 0x7F000
        run_one(user_state, "54")  # push rsp
        assert linear_read(user_state, 0x7EFF8, 8) == 0x7F000

    def test_cmov_taken_and_not(self, user_state):
        user_state.gpr[0] = 0
        user_state.gpr[3] = 7
        user_state.write_flag("zf", 1)
        run_one(user_state, "480f44c3")  # cmove rax, rbx
        assert user_state.gpr[0] == 7
        user_state.gpr[3] = 9
        user_state.write_flag("zf", 0)
        run_one(user_state, "480f44c3", rip=0x2000)
        assert user_state.gpr[0] == 7

    def test_cmov32_zero_extends_even_untaken(self, user_state):
        user_state.gpr[0] = MASK64
        user_state.write_flag("zf", 0)
        run_one(user_state, "0f44c3")  # cmove eax, ebx (not taken)
        assert user_state.gpr[0] <= 0xFFFFFFFF

    def test_setcc(self, user_state):
        user_state.write_flag("zf", 1)
        run_one(user_state, "0f94c1")  # sete cl
        assert user_state.gpr[1] & 0xFF == 1
        user_state.write_flag("zf", 0)
        run_one(user_state, "0f94c1", rip=0x2000)
        assert user_state.gpr[1] & 0xFF == 0

    def test_cqo(self, user_state):
        user_state.gpr[0] = 1 << 63
        run_one(user_state, "4899")
        assert user_state.gpr[2] == MASK64


class TestRdrand:
    def test_zero_policy(self):
        s = MachineState(undef_policy=UndefPolicy("zero"))
        s.gpr[0] = 0x1234
        run_one(s, "480fc7f0")  # rdrand rax
        assert s.gpr[0] == 0
        assert s.read_flag("cf") == 1
        for name in ("of", "sf", "zf", "af", "pf"):
            assert s.read_flag(name) == 0

    def test_distinct_values(self, user_state):
        run_one(user_state, "480fc7f0")
        first = user_state.gpr[0]
        run_one(user_state, "480fc7f0", rip=0x2000)
        assert user_state.gpr[0] != first

    def test_one_seed_per_rdrand(self, user_state):
        seed0 = user_state.undef_seed
        run_one(user_state, "480fc7f0")
        assert user_state.undef_seed == seed0 + 1


class TestSystemInstructions:
    def test_mov_cr3_in_user_mode_unimplemented(self, user_state):
        user_state.gpr[0] = 0x1000
        run_one(user_state, "0f22d8")  # mov cr3, rax
        assert user_state.ms.kind == MsKind.UNIMPLEMENTED_OPCODE

    def test_mov_cr_round_trip(self, system_state):
        system_state.gpr[0] = 0x7000
        run_one(system_state, "0f22d8", rip=0x5000)  # mov cr3, rax
        assert system_state.cr3 == 0x7000
        system_state.cr3 = 0  # restore identity map for further runs
        system_state.gpr[3] = 0
        run_one(system_state, "0f20e3", rip=0x5010)  # mov rbx, cr4
        assert system_state.gpr[3] == system_state.cr4

    def test_lgdt_lidt(self, system_state):
        write_linear_bytes(system_state, 0x6000,
                           (0x3FF).to_bytes(2, "little") +
                           (0x12345678).to_bytes(8, "little"))
        system_state.gpr[0] = 0x6000
        run_one(system_state, "0f0110", rip=0x5000)  # lgdt [rax]
        assert system_state.gdtr.base == 0x12345678
        assert system_state.gdtr.limit == 0x3FF
        run_one(system_state, "0f0118", rip=0x5010)  # lidt [rax]
        assert system_state.idtr.base == 0x12345678

    def test_syscall_system_level(self, system_state):
        system_state.msr[MSR_LSTAR] = 0xFFFF800000000000
        system_state.msr[MSR_FMASK] = 1 << 10  # clear DF on entry
        system_state.write_flag("df", 1)
        flags_before = system_state.rflags
        run_one(system_state, "0f05", rip=0x5000)
        assert system_state.rip == 0xFFFF800000000000
        assert system_state.gpr[1] == 0x5002  # rcx holds the return point
        assert system_state.gpr[11] == flags_before
        assert system_state.read_flag("df") == 0
        assert system_state.rflags & 0x2  # reserved bit preserved

    def test_sysret_system_level(self, system_state):
        system_state.gpr[1] = 0x400123
        system_state.gpr[11] = 0x8D7
        run_one(system_state, "0f07", rip=0x5000)
        assert system_state.rip == 0x400123
        assert system_state.rflags == 0x8D7 & ~0x8028 | 0x2

    def test_sysret_user_mode_unimplemented(self, user_state):
        run_one(user_state, "0f07")
        assert user_state.ms.kind == MsKind.UNIMPLEMENTED_OPCODE

    def test_user_syscall_completes_within_instruction(self, user_state):
        # write(1, buf, 5): rax holds the byte count afterwards and rip
        # has moved past the instruction
        write_linear_bytes(user_state, 0x8000, b"hello")
        user_state.gpr[0] = 1   # Linux write
        user_state.gpr[7] = 1
        user_state.gpr[6] = 0x8000
        user_state.gpr[2] = 5
        run_one(user_state, "0f05")
        assert user_state.gpr[0] == 5
        assert bytes(user_state.env.stdout) == b"hello"
        assert user_state.rip == 0x1002
        assert user_state.ms is None

    def test_user_syscall_preserves_rcx_r11(self, user_state):
        write_linear_bytes(user_state, 0x8000, b"x")
        user_state.gpr[1] = 0x1111
        user_state.gpr[11] = 0x2222
        user_state.gpr[0] = 1
        user_state.gpr[7] = 1
        user_state.gpr[6] = 0x8000
        user_state.gpr[2] = 1
        run_one(user_state, "0f05")
        assert user_state.gpr[1] == 0x1111
        assert user_state.gpr[11] == 0x2222

    def test_user_syscall_unknown_number_faults(self, user_state):
        user_state.gpr[0] = 4242
        run_one(user_state, "0f05")
        assert user_state.ms.kind == MsKind.SYSCALL_FAULT
        assert user_state.rip == 0x1000  # no advance past the fault


class TestStateFrame:
    """A handler changes only its documented destinations."""

    def test_register_ops_leave_memory_alone(self):
        rng = random.Random(41)
        state = MachineState(undef_policy=UndefPolicy("seeded", 1))
        code = make_program(17, 40, allow_mem=False, allow_div=False)
        load_program(state, 0x1000, code)
        state.gpr[4] = 0x7F000
        mem_before = state.mem.nonzero_map()
        x86_run(state, 40)
        mem_after = state.mem.nonzero_map()
        assert mem_after == mem_before

    def test_add_frame(self, user_state):
        user_state.gpr[0] = 3
        user_state.gpr[3] = 9
        snap = user_state.clone()
        run_one(user_state, "4801d8")
        # only rax, rflags, rip changed
        assert user_state.gpr[1:3] == snap.gpr[1:3]
        assert user_state.gpr[4:] == snap.gpr[4:]
        assert user_state.undef_seed == snap.undef_seed
        assert user_state.cr3 == snap.cr3


def test_every_handler_advances_rip_or_sets_ms(user_state):
    """Randomized executions: after a step either rip moved or ms is
    set."""
    rng = random.Random(77)
    for trial in range(60):
        state = MachineState(undef_policy=UndefPolicy("seeded", trial))
        code = make_program(1000 + trial, 30)
        load_program(state, 0x1000, code)
        state.gpr[4] = 0x7F800
        for _ in range(30):
            rip_before = state.rip
            x86_step(state)
            if state.ms is not None:
                break
            assert state.rip != rip_before
