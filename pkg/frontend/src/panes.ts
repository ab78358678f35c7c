// Character-cell pane rendering. Every pane is drawn from the state
// delivered by the most recently completed command, never from cached
// display data.

import { SessionState } from "./client";

const ANSI = {
  clear: "\x1b[2J\x1b[H",
  dim: "\x1b[2m",
  bold: "\x1b[1m",
  inverse: "\x1b[7m",
  reset: "\x1b[0m",
};

export function registersPane(state: SessionState): string[] {
  const lines: string[] = [];
  lines.push(`${ANSI.bold}rip${ANSI.reset} ${state.rip_hex}`);
  for (let i = 0; i < state.gpr_names.length; i += 2) {
    const left = `${state.gpr_names[i].padEnd(3)} ${state.gpr_hex[i]}`;
    const right = i + 1 < state.gpr_names.length
      ? `${state.gpr_names[i + 1].padEnd(3)} ${state.gpr_hex[i + 1]}`
      : "";
    lines.push(`${left}   ${right}`);
  }
  const flags = Object.entries(state.flags)
    .map(([name, bit]) => `${name.toUpperCase()}=${bit}`)
    .join(" ");
  lines.push(`rflags ${state.rflags_hex}  ${flags}`);
  return lines;
}

export function disasmPane(text: string): string[] {
  return text.split("\n").map((line) =>
    line.startsWith("=> ") ? `${ANSI.inverse}${line}${ANSI.reset}` : line);
}

export function memoryPane(addr: number, hex: string | null): string[] {
  if (hex === null) return [`memory at 0x${addr.toString(16)}: <unmapped>`];
  const lines: string[] = [];
  for (let off = 0; off < hex.length; off += 32) {
    const chunk = hex.slice(off, off + 32);
    const bytes = chunk.match(/../g) ?? [];
    const ascii = bytes
      .map((b) => {
        const v = parseInt(b, 16);
        return v >= 0x20 && v < 0x7f ? String.fromCharCode(v) : ".";
      })
      .join("");
    const lineAddr = (addr + off / 2).toString(16).padStart(16, "0");
    lines.push(`0x${lineAddr}: ${bytes.join(" ").padEnd(47)}  ${ascii}`);
  }
  return lines;
}

export function feedPane(feed: string[], height: number): string[] {
  return feed.slice(-height);
}

export function banner(state: SessionState, title: string): string {
  const ms = state.ms
    ? `  ms=${state.ms.kind}@0x${state.ms.at_rip.toString(16)}`
    : "";
  return `${ANSI.bold}${title}${ANSI.reset}  mode=${state.mode} ` +
    `os=${state.os} steps=${state.steps}${ms}`;
}

export function section(name: string): string {
  return `${ANSI.dim}── ${name} ${"─".repeat(Math.max(0, 60 - name.length))}${ANSI.reset}`;
}

export function clearScreen(): string {
  return ANSI.clear;
}
