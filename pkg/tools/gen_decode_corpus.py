#!/usr/bin/env python3
"""Generate the decoder differential corpus from objdump.

Sweeps every opcode-table row (all 256 ModR/M bytes where one exists,
plus prefix variants), disassembles the blob once with objdump, parses
the reference output into structural operand shapes, and writes
tests/data/decode_corpus.jsonl.gz. The corpus is checked in; tests do
not need objdump.

Usage: python tools/gen_decode_corpus.py [output.jsonl.gz]
"""

import gzip
import json
import re
import subprocess
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from x64sim.decode import ONE_BYTE, TWO_BYTE, Row  # noqa: E402

SLOT = 24
FILLER_POS = bytes.fromhex("785634124523010189ABCDEF00")
FILLER_NEG = bytes.fromhex("887766AA55443322110FEDCB00")

MNEMONIC_ALIASES = {
    "movabs": "mov",
    "sysretd": "sysret",
    "sysretq": "sysret",
    "pushw": "push",
    "popw": "pop",
}

# segment tokens appear standalone when the prefix is irrelevant to the
# operands (register forms); fs/gs only matter inside memory operands,
# where objdump prints them as part of the operand text instead
PREFIX_TOKENS = {"lock", "rep", "repz", "repnz", "data16", "addr32",
                 "bnd", "notrack", "es", "cs", "ss", "ds", "fs", "gs"}

SIZE_MARKERS = [("BYTE PTR", 1), ("WORD PTR", 2), ("DWORD PTR", 4),
                ("QWORD PTR", 8), ("TBYTE PTR", 10), ("XMMWORD PTR", 16)]

REG_TOKENS = set()
for names in (
    ["rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi"],
    [f"r{i}" for i in range(8, 16)],
    ["eax", "ecx", "edx", "ebx", "esp", "ebp", "esi", "edi"],
    [f"r{i}d" for i in range(8, 16)],
    ["ax", "cx", "dx", "bx", "sp", "bp", "si", "di"],
    [f"r{i}w" for i in range(8, 16)],
    ["al", "cl", "dl", "bl", "spl", "bpl", "sil", "dil"],
    [f"r{i}b" for i in range(8, 16)],
    ["ah", "ch", "dh", "bh"],
    [f"cr{i}" for i in range(16)],
):
    REG_TOKENS.update(names)


def build_cases():
    """(head bytes, map, opcode, modreg) for every sweep point."""
    cases = []

    def add(prefix, opmap, opcode, modrm=None, modreg=None):
        head = bytes(prefix)
        if opmap == "0F":
            head += b"\x0f"
        head += bytes([opcode])
        if modrm is not None:
            head += bytes([modrm])
            filler = FILLER_POS if modrm & 1 == 0 else FILLER_NEG
        else:
            filler = FILLER_POS
        head += filler[:15 - len(head)]
        cases.append((head, opmap, opcode, modreg))

    for opmap, table in (("1", ONE_BYTE), ("0F", TWO_BYTE)):
        for opcode in sorted(table):
            entry = table[opcode]
            if isinstance(entry, dict):
                forms = [(reg, row) for reg, row in sorted(entry.items())]
            else:
                forms = [(None, entry)]
            has_modrm = isinstance(entry, dict) or entry.fmt in (
                "rm_r", "r_rm", "rm_imm", "rm", "rm_count1", "rm_cl",
                "rm_imm8", "r_rm_imm", "m", "r_cr", "cr_r")
            for modreg, row in forms:
                variants = [b""]
                if row.size == "b":
                    variants += [b"\x40", b"\x44", b"\x41"]
                else:
                    variants += [b"\x48", b"\x45"]
                    if row.fmt not in ("rel", "none") or row.mnemonic in (
                            "syscall", "cqo"):
                        if row.mnemonic not in ("ret",):
                            variants.append(b"\x66")
                sampled = [b"\x67", b"\x64", b"\x4d"]
                if opmap == "1" and opcode == 0x90:
                    # 66/48 variants of 0x90 are xchg/rex-nop special
                    # cases outside the modeled forms
                    variants = [b"", b"\xf3", b"\x49"]
                    sampled = []
                if not has_modrm:
                    for pfx in variants:
                        if pfx == b"\x66" and row.fmt in ("rel", "none") \
                                and row.mnemonic not in ("syscall", "cqo"):
                            continue
                        add(pfx, opmap, opcode)
                    continue
                for pfx in variants:
                    for m in range(256):
                        if modreg is not None and (m >> 3) & 7 != modreg:
                            continue
                        add(pfx, opmap, opcode, m, modreg)
                for pfx in sampled:
                    for m in range(0, 256, 7):
                        if modreg is not None and (m >> 3) & 7 != modreg:
                            continue
                        add(pfx, opmap, opcode, m, modreg)
    return cases


_LINE_RE = re.compile(r"^\s*([0-9a-f]+):\s*((?:[0-9a-f]{2} )+)\s*\t?(.*)$")


def run_objdump(blob: bytes):
    """offset -> (nbytes, text) for the first instruction of each line."""
    with tempfile.NamedTemporaryFile(suffix=".bin", delete=False) as fh:
        fh.write(blob)
        path = fh.name
    out = subprocess.run(
        ["objdump", "-D", "-b", "binary", "-m", "i386:x86-64",
         "-M", "intel", "-w", path],
        capture_output=True, text=True, check=True).stdout
    lines = {}
    for line in out.splitlines():
        m = _LINE_RE.match(line)
        if not m:
            continue
        off = int(m.group(1), 16)
        nbytes = len(m.group(2).split())
        text = m.group(3).split("#", 1)[0].strip()
        lines[off] = (nbytes, text)
    return lines


def _norm_int(tok: str) -> int:
    v = int(tok, 0)
    if v >= 1 << 63:
        v -= 1 << 64
    return v


def _parse_mem(inner: str, size, seg):
    base = None
    index = None
    scale = None
    disp = 0
    for sign, term in re.findall(r"([+-]?)([^+-]+)", inner):
        term = term.strip()
        if "*" in term:
            r, s = term.split("*")
            r = "rip" if r == "eip" else r
            if r in ("riz", "eiz"):
                continue
            index = r
            scale = int(s)
        elif re.fullmatch(r"0x[0-9a-f]+|\d+", term):
            v = _norm_int(term)
            disp = -v if sign == "-" else v
        else:
            term = "rip" if term == "eip" else term
            base = term
    return ["mem", {"size": size, "base": base, "index": index,
                    "scale": scale, "disp": disp, "seg": seg}]


def parse_operand(tok: str):
    tok = tok.strip()
    size = None
    for marker, sz in SIZE_MARKERS:
        if tok.startswith(marker):
            size = sz
            tok = tok[len(marker):].strip()
            break
    seg = None
    m = re.match(r"^(es|cs|ss|ds|fs|gs):(.*)$", tok)
    if m:
        if m.group(1) in ("fs", "gs"):
            seg = m.group(1)
        tok = m.group(2).strip()
    if tok.startswith("["):
        return _parse_mem(tok[1:-1], size, seg)
    if re.fullmatch(r"-?0x[0-9a-fA-F]+|-?\d+", tok):
        v = _norm_int(tok)
        if size is not None or seg is not None or m:
            return ["mem", {"size": size, "base": None, "index": None,
                            "scale": None, "disp": v, "seg": seg}]
        return ["imm", v & ((1 << 64) - 1)]
    tok = "rip" if tok == "eip" else tok
    return ["reg", tok]


def parse_text(text: str):
    """(status, mnemonic, ops) from one objdump text field."""
    if not text or "(bad)" in text:
        return "bad", None, None
    tokens = text.split()
    while tokens and (tokens[0] in PREFIX_TOKENS
                      or tokens[0].startswith("rex")):
        tokens = tokens[1:]
    if not tokens:
        return "bad", None, None
    mnemonic = tokens[0]
    mnemonic = MNEMONIC_ALIASES.get(mnemonic, mnemonic)
    rest = " ".join(tokens[1:])
    ops = [parse_operand(t) for t in rest.split(",")] if rest else []
    return "ok", mnemonic, ops


def main():
    out_path = Path(sys.argv[1]) if len(sys.argv) > 1 else \
        Path(__file__).resolve().parent.parent / "tests" / "data" / \
        "decode_corpus.jsonl.gz"
    cases = build_cases()
    blob = bytearray()
    offsets = []
    for head, _m, _o, _r in cases:
        offsets.append(len(blob))
        blob += head + b"\x90" * (SLOT - len(head))
    decoded = run_objdump(bytes(blob))

    out_path.parent.mkdir(parents=True, exist_ok=True)
    rows = 0
    with gzip.open(out_path, "wt") as out:
        for (head, opmap, opcode, modreg), off in zip(cases, offsets):
            entry = decoded.get(off)
            if entry is None:
                status, mnemonic, ops, nbytes = "bad", None, None, 0
            else:
                nbytes, text = entry
                status, mnemonic, ops = parse_text(text)
            row = {"bytes": head.hex(), "vma": off, "map": opmap,
                   "opcode": opcode, "reg": modreg, "status": status,
                   "length": nbytes, "mnemonic": mnemonic, "ops": ops}
            out.write(json.dumps(row, separators=(",", ":")) + "\n")
            rows += 1
    print(f"wrote {rows} cases to {out_path}")


if __name__ == "__main__":
    main()
