import json
import os
import subprocess
import sys

import pytest

from x64sim.cli import main

from conftest import fixture_path


def run_cli(args, capsys):
    code = main(args)
    out = capsys.readouterr()
    return code, out.out, out.err


class TestRun:
    def test_popcount_config(self, capsys):
        code, out, _ = run_cli(["run", "--config", fixture_path("popcount.json"),
                                "--set-reg", "rdi=F0F0F0F0F0F0F0F0"], capsys)
        assert code == 0
        assert "halted" in out
        assert "rax:   0x0000000000000020" in out  # popcount = 32

    def test_system_marking_identity_run(self, capsys, tmp_path):
        code, out, _ = run_cli(
            ["run", "--mode", "system-marking", "--pt-base", "0",
             "--elf", fixture_path("popcount.elf"),
             "--rip", "0x400650", "--halt", "0x4006AA",
             "--set-reg", "rsp=7FFFF000", "--set-reg", "rdi=3",
             "--stack-return-to-halt", "--max-steps", "300"], capsys)
        assert code == 0
        assert "rax:   0x0000000000000002" in out

    def test_exhausted_exit_code(self, capsys):
        code, out, _ = run_cli(
            ["run", "--config", fixture_path("popcount.json"),
             "--max-steps", "3"], capsys)
        assert code == 2
        assert "steps: 3" in out

    def test_fault_exit_code(self, capsys, tmp_path):
        # jump straight into zero-filled memory decodes add [rax],al;
        # rax=0 is fine, but an unimplemented byte faults
        elf = fixture_path("popcount.elf")
        code, out, _ = run_cli(
            ["run", "--elf", elf, "--rip", "0x4006AB", "--max-steps", "5"],
            capsys)
        assert code in (2, 3)

    def test_missing_elf(self, capsys):
        code, _, err = run_cli(["run", "--elf", "/nonexistent.elf"], capsys)
        assert code == 1
        assert "error" in err

    def test_bad_magic(self, capsys, tmp_path):
        bad = tmp_path / "bad.elf"
        bad.write_bytes(b"\x7eELF" + bytes(100))
        code, _, err = run_cli(["run", "--elf", str(bad)], capsys)
        assert code == 1
        assert "bad magic" in err

    def test_user_mode_rejects_pt_base(self, capsys):
        code, _, err = run_cli(
            ["run", "--elf", fixture_path("popcount.elf"),
             "--pt-base", "0"], capsys)
        assert code == 1

    def test_state_log_reproducible(self, capsys, tmp_path):
        log_a = tmp_path / "a.log"
        log_b = tmp_path / "b.log"
        base = ["run", "--config", fixture_path("popcount.json"),
                "--set-reg", "rdi=1234", "--undef-policy", "seeded:7"]
        run_cli(base + ["--log-state", str(log_a)], capsys)
        run_cli(base + ["--log-state", str(log_b)], capsys)
        assert log_a.read_bytes() == log_b.read_bytes()
        assert log_a.read_text().startswith("S 0 ")

    def test_mem_log_file(self, capsys, tmp_path):
        log = tmp_path / "mem.log"
        run_cli(["run", "--config", fixture_path("popcount.json"),
                 "--log-mem", str(log)], capsys)
        lines = log.read_text().splitlines()
        # the fixture pops the return address: one stack read
        assert any(line.startswith("M ") and " R " in line for line in lines)


class TestDisasm:
    def test_listing(self, capsys):
        code, out, _ = run_cli(
            ["disasm", "--elf", fixture_path("popcount.elf"), "--count", "3"],
            capsys)
        assert code == 0
        first = out.splitlines()[0]
        assert first.startswith("0x400650:")
        assert "mov rax, rdi" in first

    def test_ret_line(self, capsys):
        code, out, _ = run_cli(
            ["disasm", "--elf", fixture_path("popcount.elf"),
             "--start", "0x4006a9", "--count", "1"], capsys)
        assert "ret" in out

    def test_unknown_byte_fallback(self, capsys, tmp_path):
        import struct
        from test_loader import minimal_elf
        elf = tmp_path / "weird.elf"
        elf.write_bytes(minimal_elf(code=b"\xd8\x90"))  # x87, unimplemented
        code, out, _ = run_cli(["disasm", "--elf", str(elf), "--count", "2"],
                               capsys)
        assert "(db 0xd8)" in out
        assert "nop" in out


class TestOpcodes:
    def test_table(self, capsys):
        code, out, _ = run_cli(["opcodes"], capsys)
        assert code == 0
        lines = out.splitlines()
        assert any("syscall" in line for line in lines)
        sysret_lines = [line for line in lines if "sysret" in line]
        assert sysret_lines and all("user" not in line
                                    for line in sysret_lines)
        mnemonics = {line.split()[3] for line in lines[1:]}
        for name in ("add", "mov", "imul", "rdrand", "lgdt", "push"):
            assert name in mnemonics

    def test_sorted_and_complete(self, capsys):
        from x64sim.semantics import implemented_report
        _, out, _ = run_cli(["opcodes"], capsys)
        assert len(out.splitlines()) == len(implemented_report()) + 1


class TestDebugScript:
    def test_script_transcript(self, capsys, tmp_path):
        script = tmp_path / "cmds.txt"
        script.write_text("stepi\nregs\n# comment line\nquit\n")
        code, out, _ = run_cli(
            ["debug", "--config", fixture_path("popcount.json"),
             "--script", str(script)], capsys)
        assert code == 0
        assert "(dbg) stepi" in out
        assert "rax" in out


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "x64sim.cli", "opcodes"],
        capture_output=True, text=True,
        cwd=os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    assert proc.returncode == 0
    assert "MNEMONIC" in proc.stdout
