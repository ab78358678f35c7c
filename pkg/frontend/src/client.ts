// Typed HTTP client for the x64sim service. All 64-bit machine values
// are consumed from the *_hex string fields; plain JSON numbers lose
// integer precision above 2^53.

export interface MsInfo {
  kind: string;
  at_rip: number;
  detail: string;
}

export interface SessionState {
  rip_hex: string;
  gpr_hex: string[];
  gpr_names: string[];
  rflags_hex: string;
  flags: Record<string, number>;
  ms: MsInfo | null;
  steps: number;
  undef_seed: number;
  pt_digest: string | null;
  mode: string;
  os: string;
}

export interface CommandResponse {
  output: string;
  error: boolean;
  quit: boolean;
  stopped: string | null;
  state: SessionState;
  new_state_log: string[];
  new_events: string[];
}

export interface RunConfig {
  mode?: string;
  os?: string;
  elf?: string;
  pt_base?: number | string;
  rip?: number | string;
  halt?: number | string;
  max_steps?: number;
  set_reg?: Record<string, number | string>;
  oracle?: string;
  fs?: Record<string, string>;
  stdin?: string;
  undef_policy?: string;
  stack_return_to_halt?: boolean;
  base_dir?: string;
}

export interface RunResponse {
  status: string;
  exit_code: number;
  ms: MsInfo | null;
  steps: number;
  state_log: string[] | null;
  mem_log: string[] | null;
}

export class ServiceError extends Error {}

async function expectOk(res: Response): Promise<any> {
  if (!res.ok) {
    let detail = `${res.status}`;
    try {
      const body = await res.json();
      if (body.detail) detail = `${body.detail}`;
    } catch {
      /* non-JSON error body */
    }
    throw new ServiceError(detail);
  }
  return res.json();
}

export class Client {
  constructor(readonly baseUrl: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  async health(): Promise<boolean> {
    try {
      const res = await fetch(this.url("/health"));
      return res.ok;
    } catch {
      return false;
    }
  }

  async run(config: RunConfig, returnStateLog = false): Promise<RunResponse> {
    const res = await fetch(this.url("/run"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ ...config, return_state_log: returnStateLog }),
    });
    return expectOk(res);
  }

  async createSession(config: RunConfig): Promise<string> {
    const res = await fetch(this.url("/sessions"), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ config }),
    });
    const body = await expectOk(res);
    return body.session_id;
  }

  async command(sessionId: string, line: string): Promise<CommandResponse> {
    const res = await fetch(this.url(`/sessions/${sessionId}/command`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ line }),
    });
    return expectOk(res);
  }

  async state(sessionId: string): Promise<SessionState> {
    return expectOk(await fetch(this.url(`/sessions/${sessionId}/state`)));
  }

  async disasm(sessionId: string, addr?: string, count = 12):
      Promise<{ addr: number; text: string }> {
    const params = new URLSearchParams({ count: String(count) });
    if (addr !== undefined) params.set("addr", addr);
    return expectOk(await fetch(
      this.url(`/sessions/${sessionId}/disasm?${params}`)));
  }

  async mem(sessionId: string, addr: string, length = 64):
      Promise<{ addr: number; hex: string | null }> {
    const params = new URLSearchParams({ addr, length: String(length) });
    return expectOk(await fetch(
      this.url(`/sessions/${sessionId}/mem?${params}`)));
  }

  async deleteSession(sessionId: string): Promise<void> {
    await fetch(this.url(`/sessions/${sessionId}`), { method: "DELETE" });
  }
}
