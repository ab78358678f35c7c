"""HTTP service over the simulator: one-shot runs, disassembly, the
implemented-opcodes table, and interactive debug sessions.

Sessions follow the command/response contract of the debugger: one
command in flight at a time (enforced with a per-session lock), every
response carrying the machine view the client needs to redraw."""

from __future__ import annotations

import hashlib
import threading
import uuid
from typing import Dict, List, Optional, Tuple, Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__
from .state import GPR_NAMES, FLAG_BITS
from .memory import read_linear_bytes_quiet, PAGE_SIZE
from .decode import decode_bytes, disasm_text, DecodeError, Truncated
from .semantics import implemented_report
from .config import RunConfig, ConfigError, config_from_dict
from .loader import parse_elf_file, LoadError
from .runner import execute_run
from .debugger import DebugSession

IntLike = Union[int, str]


class RunRequest(BaseModel):
    """Mirror of the RunConfig file schema, plus response options."""
    mode: str = "user"
    os: str = "linux"
    elf: Optional[str] = None
    pt_base: Optional[IntLike] = None
    rip: Optional[IntLike] = None
    halt: Optional[IntLike] = None
    max_steps: int = 1_000_000
    set_reg: Dict[str, IntLike] = Field(default_factory=dict)
    oracle: Optional[str] = None
    fs: Dict[str, str] = Field(default_factory=dict)
    stdin: Optional[str] = None
    undef_policy: str = "injective"
    log_state: Optional[str] = None
    log_mem: Optional[str] = None
    stack_return_to_halt: bool = False
    base_dir: str = "."
    return_state_log: bool = False
    return_mem_log: bool = False

    def to_config(self) -> RunConfig:
        data = self.model_dump(exclude={"return_state_log", "return_mem_log",
                                        "base_dir"})
        data = {k: v for k, v in data.items() if v not in (None, {}, [])}
        data.setdefault("mode", "user")
        cfg = config_from_dict(data, base_dir=self.base_dir)
        return cfg


class MsModel(BaseModel):
    kind: str
    at_rip: int
    detail: str


class RunResponse(BaseModel):
    status: str
    exit_code: int
    ms: Optional[MsModel]
    rip: int
    rax: int
    steps: int
    state_log: Optional[List[str]] = None
    mem_log: Optional[List[str]] = None


class DisasmRequest(BaseModel):
    elf: str
    base_dir: str = "."
    start: Optional[IntLike] = None
    count: int = 32


class DisasmLine(BaseModel):
    addr: int
    raw: str
    text: str


class DisasmResponse(BaseModel):
    lines: List[DisasmLine]


class OpcodeRow(BaseModel):
    map: str
    opcode: str
    reg: str
    mnemonic: str
    format: str
    modes: str


class SessionCreate(BaseModel):
    config: RunRequest


class SessionStateModel(BaseModel):
    """64-bit values are duplicated as zero-padded hex strings; JSON
    numbers lose integer precision above 2^53 in JavaScript clients."""
    rip: int
    rip_hex: str
    gpr: List[int]
    gpr_hex: List[str]
    gpr_names: List[str] = Field(default_factory=lambda: list(GPR_NAMES))
    rflags: int
    rflags_hex: str
    flags: Dict[str, int]
    ms: Optional[MsModel]
    steps: int
    undef_seed: int
    pt_digest: Optional[str]
    mode: str
    os: str


class CommandRequest(BaseModel):
    line: str


class CommandResponse(BaseModel):
    output: str
    error: bool
    quit: bool
    stopped: Optional[str]
    state: SessionStateModel
    new_state_log: List[str]
    new_events: List[str]


def _ms_model(ms) -> Optional[MsModel]:
    if ms is None:
        return None
    return MsModel(kind=ms.kind.value, at_rip=ms.at_rip, detail=ms.detail)


def _pt_digest(session: DebugSession) -> Optional[str]:
    cfg = session.config
    if cfg.mode == "user" or cfg.pt_base is None:
        return None
    data = session.state.mem.read_bytes(cfg.pt_base, 2 * PAGE_SIZE)
    return hashlib.sha256(data).hexdigest()


def _session_state(session: DebugSession) -> SessionStateModel:
    s = session.state
    return SessionStateModel(
        rip=s.rip, rip_hex=f"{s.rip:016X}",
        gpr=list(s.gpr), gpr_hex=[f"{v:016X}" for v in s.gpr],
        rflags=s.rflags, rflags_hex=f"{s.rflags:016X}",
        flags={n: (s.rflags >> b) & 1 for n, b in FLAG_BITS.items()},
        ms=_ms_model(s.ms), steps=session.steps, undef_seed=s.undef_seed,
        pt_digest=_pt_digest(session), mode=session.config.mode,
        os=session.config.os)


def disassemble_image(path: str, start: Optional[int], count: int) -> List[DisasmLine]:
    """Static disassembly of a loadable image; decode errors become
    one-byte data lines and the listing continues."""
    image = parse_elf_file(path)
    blob = {}
    for seg in image.segments:
        for i, b in enumerate(seg.data):
            blob[seg.vaddr + i] = b
    pos = start if start is not None else image.entry
    lines: List[DisasmLine] = []
    for _ in range(count):
        if pos not in blob:
            break
        data = bytes(blob.get(pos + i, 0) for i in range(15))
        try:
            di = decode_bytes(data)
        except (DecodeError, Truncated):
            lines.append(DisasmLine(addr=pos, raw=f"{data[0]:02x}",
                                    text=f"(db 0x{data[0]:02x})"))
            pos += 1
            continue
        lines.append(DisasmLine(addr=pos, raw=di.raw.hex(" "),
                                text=disasm_text(di, pos + di.length)))
        pos += di.length
    return lines


class _Session:
    def __init__(self, session: DebugSession):
        self.session = session
        self.lock = threading.Lock()


def create_app() -> FastAPI:
    app = FastAPI(title="x64sim", version=__version__)
    sessions: Dict[str, _Session] = {}

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__}

    @app.post("/run", response_model=RunResponse)
    def run(req: RunRequest):
        try:
            cfg = req.to_config()
            result = execute_run(cfg, collect_logs=req.return_state_log
                                 or req.return_mem_log)
        except (ConfigError, LoadError, OSError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        state = result.state
        return RunResponse(
            status=result.status, exit_code=result.exit_code,
            ms=_ms_model(state.ms), rip=state.rip, rax=state.gpr[0],
            steps=result.steps,
            state_log=result.state_log if req.return_state_log else None,
            mem_log=result.mem_log if req.return_mem_log else None)

    @app.post("/disasm", response_model=DisasmResponse)
    def disasm(req: DisasmRequest):
        import os
        path = req.elf if os.path.isabs(req.elf) \
            else os.path.join(req.base_dir, req.elf)
        start = None if req.start is None else (
            req.start if isinstance(req.start, int) else int(req.start, 0))
        try:
            return DisasmResponse(lines=disassemble_image(path, start,
                                                          req.count))
        except (LoadError, OSError) as e:
            raise HTTPException(status_code=400, detail=str(e))

    @app.get("/opcodes", response_model=List[OpcodeRow])
    def opcodes():
        return [OpcodeRow(**row) for row in implemented_report()]

    @app.post("/sessions")
    def create_session(req: SessionCreate):
        try:
            session = DebugSession(req.config.to_config())
        except (ConfigError, LoadError, OSError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        session_id = uuid.uuid4().hex[:12]
        sessions[session_id] = _Session(session)
        return {"session_id": session_id}

    def _get(session_id: str) -> _Session:
        holder = sessions.get(session_id)
        if holder is None:
            raise HTTPException(status_code=404, detail="no such session")
        return holder

    @app.get("/sessions/{session_id}/state",
             response_model=SessionStateModel)
    def session_state(session_id: str):
        holder = _get(session_id)
        with holder.lock:
            return _session_state(holder.session)

    @app.post("/sessions/{session_id}/command",
              response_model=CommandResponse)
    def session_command(session_id: str, req: CommandRequest):
        holder = _get(session_id)
        with holder.lock:
            result = holder.session.execute(req.line)
            response = CommandResponse(
                output=result.output, error=result.error, quit=result.quit,
                stopped=result.stopped,
                state=_session_state(holder.session),
                new_state_log=result.new_state_log,
                new_events=result.new_events)
        if result.quit:
            sessions.pop(session_id, None)
        return response

    @app.get("/sessions/{session_id}/mem")
    def session_mem(session_id: str, addr: str, length: int = 64):
        holder = _get(session_id)
        with holder.lock:
            a = int(addr, 0)
            data = read_linear_bytes_quiet(holder.session.state, a,
                                           min(length, 4096))
        return {"addr": a, "hex": data.hex() if data is not None else None}

    @app.get("/sessions/{session_id}/disasm")
    def session_disasm(session_id: str, addr: Optional[str] = None,
                       count: int = 16):
        holder = _get(session_id)
        with holder.lock:
            session = holder.session
            a = session.state.rip if addr is None else int(addr, 0)
            text = session._disas_text(a, min(count, 64))
        return {"addr": a, "text": text}

    @app.delete("/sessions/{session_id}")
    def delete_session(session_id: str):
        sessions.pop(session_id, None)
        return {"ok": True}

    return app


app = create_app()
