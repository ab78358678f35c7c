#!/usr/bin/env node
// Entry point: interactive TUI by default, headless transcript mode
// with --script.

import * as fs from "fs";
import { Client, RunConfig } from "./client";
import { runScript, parseScriptFile } from "./scripted";
import { Tui } from "./tui";

interface Args {
  url: string;
  config: string | null;
  script: string | null;
}

function parseArgs(argv: string[]): Args {
  const args: Args = { url: "http://127.0.0.1:8642", config: null,
                       script: null };
  for (let i = 0; i < argv.length; i++) {
    const a = argv[i];
    if (a === "--url") args.url = argv[++i];
    else if (a === "--config") args.config = argv[++i];
    else if (a === "--script") args.script = argv[++i];
    else if (a === "--help" || a === "-h") {
      console.log(
        "usage: x64sim-tui --url URL --config CONFIG.json [--script FILE]");
      process.exit(0);
    } else {
      console.error(`unknown argument: ${a}`);
      process.exit(1);
    }
  }
  return args;
}

async function main(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  if (!args.config) {
    console.error("a --config file (run-config JSON) is required");
    return 1;
  }
  const config: RunConfig = JSON.parse(fs.readFileSync(args.config, "utf8"));
  const client = new Client(args.url);
  if (!(await client.health())) {
    console.error(`no x64sim service at ${args.url} ` +
      "(start one with: x64sim serve)");
    return 1;
  }
  if (args.script) {
    const commands = parseScriptFile(fs.readFileSync(args.script, "utf8"));
    const result = await runScript(client, config, commands);
    process.stdout.write(result.transcript);
    return 0;
  }
  await new Tui(client, config).run();
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err instanceof Error ? err.message : String(err));
    process.exit(1);
  },
);
