// Interactive terminal debugger: panes over the session state plus a
// command line with history. The core owns all machine state; this
// loop only forwards commands and redraws from the responses.

import * as readline from "readline";
import { Client, RunConfig, SessionState } from "./client";
import {
  banner,
  clearScreen,
  disasmPane,
  feedPane,
  memoryPane,
  registersPane,
  section,
} from "./panes";

const FEED_HEIGHT = 8;

export class Tui {
  private feed: string[] = [];
  private memAddr: string | null = null;
  private sessionId = "";

  constructor(
    private readonly client: Client,
    private readonly config: RunConfig,
    private readonly out: NodeJS.WritableStream = process.stdout,
  ) {}

  private pushFeed(text: string) {
    for (const line of text.split("\n")) this.feed.push(line);
  }

  private async redraw(state: SessionState) {
    const parts: string[] = [clearScreen()];
    parts.push(banner(state, "x64sim debugger"));
    parts.push(section("registers"));
    parts.push(...registersPane(state));
    parts.push(section("disassembly"));
    try {
      const dis = await this.client.disasm(this.sessionId, undefined, 10);
      parts.push(...disasmPane(dis.text));
    } catch {
      parts.push("<disassembly unavailable>");
    }
    if (this.memAddr !== null) {
      parts.push(section(`memory ${this.memAddr}`));
      const mem = await this.client.mem(this.sessionId, this.memAddr, 64);
      parts.push(...memoryPane(mem.addr, mem.hex));
    }
    parts.push(section("events"));
    parts.push(...feedPane(this.feed, FEED_HEIGHT));
    this.out.write(parts.join("\n") + "\n");
  }

  async run(): Promise<void> {
    this.sessionId = await this.client.createSession(this.config);
    this.pushFeed("session started; 'help' lists commands, 'quit' leaves");
    await this.redraw(await this.client.state(this.sessionId));

    const rl = readline.createInterface({
      input: process.stdin,
      output: process.stdout,
      prompt: "(dbg) ",
      historySize: 200,
    });
    rl.prompt();

    for await (const raw of rl) {
      const line = raw.trim();
      if (line.startsWith("view mem ")) {
        // client-side pane control, not a machine command
        this.memAddr = line.slice("view mem ".length).trim();
        await this.redraw(await this.client.state(this.sessionId));
        rl.prompt();
        continue;
      }
      const result = await this.client.command(this.sessionId, line);
      if (line) this.pushFeed(`(dbg) ${line}`);
      if (result.output) this.pushFeed(result.output);
      for (const ev of result.new_events.slice(-FEED_HEIGHT)) {
        this.pushFeed(ev);
      }
      if (result.quit) {
        this.out.write(result.output + "\n");
        rl.close();
        return;
      }
      await this.redraw(result.state);
      rl.prompt();
    }
    await this.client.deleteSession(this.sessionId);
  }
}
