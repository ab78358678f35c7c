import { describe, expect, it } from "vitest";
import { memoryPane, registersPane } from "../src/panes";
import { parseScriptFile } from "../src/scripted";
import { SessionState } from "../src/client";

function sampleState(): SessionState {
  return {
    rip_hex: "0000000000400650",
    gpr_hex: Array.from({ length: 16 }, (_v, i) =>
      i.toString(16).padStart(16, "0")),
    gpr_names: [
      "rax", "rcx", "rdx", "rbx", "rsp", "rbp", "rsi", "rdi",
      "r8", "r9", "r10", "r11", "r12", "r13", "r14", "r15",
    ],
    rflags_hex: "0000000000000246",
    flags: { cf: 0, pf: 1, af: 0, zf: 1, sf: 0, df: 0, of: 0 },
    ms: null,
    steps: 3,
    undef_seed: 0,
    pt_digest: null,
    mode: "user",
    os: "linux",
  };
}

describe("registers pane", () => {
  it("shows rip, all sixteen registers, and decoded flags", () => {
    const lines = registersPane(sampleState());
    const text = lines.join("\n");
    expect(text).toContain("rip");
    expect(text).toContain("0000000000400650");
    for (const name of ["rax", "rsp", "r8", "r15"]) {
      expect(text).toContain(name);
    }
    expect(text).toContain("ZF=1");
  });
});

describe("memory pane", () => {
  it("renders hex rows with ascii gutter", () => {
    const lines = memoryPane(0x1000, "48656c6c6f00ff41");
    expect(lines).toHaveLength(1);
    expect(lines[0]).toContain("0x0000000000001000:");
    expect(lines[0]).toContain("48 65 6c 6c 6f 00 ff 41");
    expect(lines[0]).toContain("Hello..A");
  });

  it("reports unmapped windows", () => {
    expect(memoryPane(0x2000, null)[0]).toContain("<unmapped>");
  });
});

describe("script files", () => {
  it("drops blanks and comments", () => {
    expect(parseScriptFile("stepi\n\n# note\n  regs\nquit\n")).toEqual([
      "stepi",
      "regs",
      "quit",
    ]);
  });
});
