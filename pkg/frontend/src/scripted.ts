// Headless script driver: execute debugger commands against a session
// and emit a deterministic transcript. The transcript's final state
// block is the "S <n> ..." line the quit command returns, which is the
// service's bit-exact state-log format.

import { Client, RunConfig } from "./client";

export interface ScriptResult {
  transcript: string;
  finalStateLine: string | null;
  stepsExecuted: number;
}

export async function runScript(
  client: Client,
  config: RunConfig,
  commands: string[],
): Promise<ScriptResult> {
  const sessionId = await client.createSession(config);
  const lines: string[] = [
    `x64sim debug session: ${config.elf ?? "<no image>"} ` +
      `mode=${config.mode ?? "user"} os=${config.os ?? "linux"}`,
  ];
  let steps = 0;
  let finalStateLine: string | null = null;
  let sawQuit = false;

  const execute = async (command: string) => {
    lines.push(`(dbg) ${command}`);
    const result = await client.command(sessionId, command);
    if (result.output) lines.push(result.output);
    steps = result.state.steps;
    if (result.quit) {
      const stateLines = result.output
        .split("\n")
        .filter((l) => l.startsWith("S "));
      finalStateLine = stateLines[stateLines.length - 1] ?? null;
      sawQuit = true;
    }
    return result;
  };

  for (const command of commands) {
    const result = await execute(command);
    if (result.quit) break;
  }
  if (!sawQuit) await execute("quit");

  return {
    transcript: lines.join("\n") + "\n",
    finalStateLine,
    stepsExecuted: steps,
  };
}

export function parseScriptFile(content: string): string[] {
  return content
    .split("\n")
    .map((l) => l.trim())
    .filter((l) => l.length > 0 && !l.startsWith("#"));
}
