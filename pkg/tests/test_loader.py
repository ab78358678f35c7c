import struct

import pytest

from x64sim.state import MachineState, MsKind, ModelStatus
from x64sim.memory import (init_system_level_mode, read_linear_bytes,
                           linear_read)
from x64sim.loader import (parse_elf, parse_elf_file, binary_file_load,
                           init_x86_state, LoadError)
from x64sim.interp import x86_run
from x64sim.state import Fault, states_equal

from conftest import fixture_path


def minimal_elf(vaddr=0x400000, code=b"\x90\x90\x90\x90\xc3",
                memsz=None, entry=None):
    """Hand-built ELF64 with one PT_LOAD segment."""
    memsz = memsz if memsz is not None else len(code)
    entry = entry if entry is not None else vaddr
    ehdr = struct.pack(
        "<4sBBBBB7xHHIQQQIHHHHHH",
        b"\x7fELF", 2, 1, 1, 0, 0,
        2, 0x3E, 1, entry, 64, 0, 0, 64, 56, 1, 0, 0, 0)
    phdr = struct.pack("<IIQQQQQQ", 1, 5, 120, vaddr, vaddr,
                       len(code), memsz, 0x1000)
    return ehdr + phdr + code


class TestParse:
    def test_minimal_fixture(self):
        image = parse_elf(minimal_elf())
        assert image.entry == 0x400000
        assert len(image.segments) == 1
        seg = image.segments[0]
        assert seg.vaddr == 0x400000
        assert seg.data == b"\x90\x90\x90\x90\xc3"
        assert "x" in seg.flags and "r" in seg.flags

    def test_real_fixture_matches_reference_reader(self):
        # fields cross-checked against binutils readelf output for the
        # checked-in fixture
        image = parse_elf_file(fixture_path("popcount.elf"))
        assert image.entry == 0x400650
        text = [s for s in image.segments if "x" in s.flags]
        assert any(s.vaddr <= 0x400650 < s.vaddr + len(s.data) for s in text)

    def test_bad_magic(self):
        data = bytearray(minimal_elf())
        data[0] = 0x7E
        with pytest.raises(LoadError, match="bad magic"):
            parse_elf(bytes(data))

    def test_not_64_bit(self):
        data = bytearray(minimal_elf())
        data[4] = 1
        with pytest.raises(LoadError, match="not 64-bit"):
            parse_elf(bytes(data))

    def test_not_little_endian(self):
        data = bytearray(minimal_elf())
        data[5] = 2
        with pytest.raises(LoadError, match="not little-endian"):
            parse_elf(bytes(data))

    def test_macho_rejected_by_name(self):
        macho = (0xFEEDFACF).to_bytes(4, "little") + bytes(60)
        with pytest.raises(LoadError, match="Mach-O"):
            parse_elf(macho)

    def test_truncated_segment(self):
        data = minimal_elf()[:-3]
        with pytest.raises(LoadError, match="out of bounds"):
            parse_elf(data)


class TestLoad:
    def test_round_trip(self, user_state):
        image = parse_elf(minimal_elf())
        binary_file_load(user_state, image)
        assert read_linear_bytes(user_state, 0x400000, 5) == \
            b"\x90\x90\x90\x90\xc3"

    def test_zero_fill(self, user_state):
        user_state.mem.write_bytes(0x400005, b"\xFF" * 11)  # stale bytes
        image = parse_elf(minimal_elf(memsz=16))
        binary_file_load(user_state, image)
        assert read_linear_bytes(user_state, 0x400005, 11) == bytes(11)

    def test_load_idempotent(self, user_state):
        image = parse_elf(minimal_elf(memsz=16))
        binary_file_load(user_state, image)
        once = user_state.mem.nonzero_map()
        binary_file_load(user_state, image)
        assert user_state.mem.nonzero_map() == once

    def test_system_mode_without_mapping_faults(self):
        s = MachineState()
        s.user_level_mode = False  # no tables at all
        image = parse_elf(minimal_elf())
        with pytest.raises(Fault):
            binary_file_load(s, image)
        assert s.ms.kind == MsKind.PAGE_FAULT

    def test_system_mode_after_init_ok(self):
        s = MachineState()
        init_system_level_mode(s, 0)
        image = parse_elf(minimal_elf())
        binary_file_load(s, image)
        assert linear_read(s, 0x400000, 4) == 0x90909090


class TestInit:
    def test_example_addresses(self, user_state):
        init_x86_state(user_state, None, 0x400650, 0x4006C2)
        assert user_state.rip == 0x400650
        assert user_state.halt_addr == 0x4006C2
        assert user_state.ms is None

    def test_mem_updates(self, user_state):
        init_x86_state(user_state, None, 0x400650, 0x4006C2,
                       mem_updates=[(0x400650, 0x89), (0x400651, 0xFA)])
        assert read_linear_bytes(user_state, 0x400650, 2) == b"\x89\xfa"

    def test_empty_updates_frame(self, user_state):
        user_state.gpr[5] = 77
        before_mem = user_state.mem.nonzero_map()
        init_x86_state(user_state, None, 0x1234, 0x5678)
        assert user_state.gpr[5] == 77
        assert user_state.mem.nonzero_map() == before_mem

    def test_reg_and_flag_inits_in_order(self, user_state):
        init_x86_state(user_state, None, 0, None,
                       reg_inits=[(0, 1), (0, 2)], flag_init=0x41)
        assert user_state.gpr[0] == 2
        assert user_state.read_flag("zf") == 1
        assert user_state.rflags & 0x2  # normalized

    def test_reinit_resets_finished_run(self, user_state):
        # run to halt, then re-init and run again
        from conftest import load_program
        code = bytes.fromhex("4883c001")  # add rax, 1
        load_program(user_state, 0x1000, code)
        assert x86_run(user_state, 10) == 1
        assert user_state.ms.kind == MsKind.HALTED
        init_x86_state(user_state, None, 0x1000, 0x1004)
        assert user_state.ms is None
        assert x86_run(user_state, 10) == 1
        assert user_state.gpr[0] == 2
        assert user_state.ms.kind == MsKind.HALTED
