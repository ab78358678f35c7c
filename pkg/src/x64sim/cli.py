"""Command-line entry point.

`run`, `disasm`, and `opcodes` call the service layer in process;
`serve` starts the HTTP service; `debug` launches the terminal UI
against a local service instance (falling back to a built-in line-mode
client when the UI bundle is not installed)."""

from __future__ import annotations

import argparse
import json
import os
import socket
import subprocess
import sys
import threading

from .config import (RunConfig, ConfigError, config_from_dict,
                     load_config_file, MODES)
from .loader import LoadError
from .runner import execute_run, summarize, EXIT_USAGE
from .semantics import implemented_report


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON run-config file (flags override it)")
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--os", dest="os_name", choices=["linux", "freebsd"])
    p.add_argument("--elf", help="ELF64 executable to load")
    p.add_argument("--pt-base", help="physical base for the identity page "
                                     "tables (system modes)")
    p.add_argument("--rip", help="start address (default: ELF entry)")
    p.add_argument("--halt", help="halt address")
    p.add_argument("--max-steps", type=int)
    p.add_argument("--set-reg", action="append", default=[],
                   metavar="NAME=HEX", help="initial register value "
                                            "(repeatable)")
    p.add_argument("--oracle", help="oracle init file (hex addr + values)")
    p.add_argument("--fs", action="append", default=[], metavar="SIM=HOST",
                   help="map a host file into the simulated FS (repeatable)")
    p.add_argument("--stdin", help="host file backing simulated stdin")
    p.add_argument("--undef-policy",
                   help="injective | zero | seeded:N")
    p.add_argument("--log-state", help="state log output file")
    p.add_argument("--log-mem", help="memory log output file")
    p.add_argument("--stack-return-to-halt", action="store_true",
                   default=None,
                   help="store the halt address at [rsp] so a final ret "
                        "lands on it")


def _config_from_args(args) -> RunConfig:
    if args.config:
        cfg = load_config_file(args.config)
    else:
        cfg = RunConfig(base_dir=os.getcwd())
    if args.mode:
        cfg.mode = args.mode
    if args.os_name:
        cfg.os = args.os_name
    if args.elf:
        cfg.elf = os.path.abspath(args.elf)
    for attr, value in (("pt_base", args.pt_base), ("rip", args.rip),
                        ("halt", args.halt)):
        if value is not None:
            setattr(cfg, attr, int(value, 0))
    if args.max_steps is not None:
        cfg.max_steps = args.max_steps
    for item in args.set_reg:
        name, _, value = item.partition("=")
        if not value:
            raise ConfigError(f"bad --set-reg {item!r}, want NAME=HEX")
        cfg.set_reg[name] = int(value, 16)
    if args.oracle:
        cfg.oracle = os.path.abspath(args.oracle)
    for item in args.fs:
        sim, _, host = item.partition("=")
        if not host:
            raise ConfigError(f"bad --fs {item!r}, want SIM=HOST")
        cfg.fs.append((sim, os.path.abspath(host)))
    if args.stdin:
        cfg.stdin = os.path.abspath(args.stdin)
    if args.undef_policy:
        cfg.undef_policy = args.undef_policy
    if args.log_state:
        cfg.log_state = args.log_state
    if args.log_mem:
        cfg.log_mem = args.log_mem
    if args.stack_return_to_halt is not None:
        cfg.stack_return_to_halt = args.stack_return_to_halt
    return cfg


def cmd_run(args) -> int:
    cfg = _config_from_args(args)
    result = execute_run(cfg)
    print(summarize(result))
    return result.exit_code


def cmd_disasm(args) -> int:
    from .service import disassemble_image
    start = int(args.start, 0) if args.start else None
    for line in disassemble_image(os.path.abspath(args.elf), start,
                                  args.count):
        print(f"0x{line.addr:x}: {line.raw:<21} {line.text}")
    return 0


def cmd_opcodes(_args) -> int:
    rows = implemented_report()
    print(f"{'MAP':<4} {'OP':<4} {'REG':<4} {'MNEMONIC':<10} "
          f"{'FORMAT':<10} MODES")
    for row in rows:
        print(f"{row['map']:<4} {row['opcode']:<4} {row['reg']:<4} "
              f"{row['mnemonic']:<10} {row['format']:<10} {row['modes']}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn
    from .service import app
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _free_port() -> int:
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def _find_tui() -> str | None:
    candidate = os.environ.get("X64SIM_TUI")
    if candidate:
        return candidate
    here = os.path.dirname(os.path.abspath(__file__))
    for root in (os.getcwd(), os.path.join(here, "..", "..", "..")):
        path = os.path.abspath(os.path.join(root, "frontend", "dist",
                                            "main.js"))
        if os.path.exists(path):
            return path
    return None


def _serve_background(port: int):
    import uvicorn
    from .service import app
    config = uvicorn.Config(app, host="127.0.0.1", port=port,
                            log_level="error")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return server


def cmd_debug(args) -> int:
    cfg = _config_from_args(args)
    if args.script:
        from .debugger import scripted_session
        with open(args.script) as fh:
            commands = [line.rstrip("\n") for line in fh
                        if line.strip() and not line.lstrip().startswith("#")]
        sys.stdout.write(scripted_session(commands, cfg))
        return 0

    tui = _find_tui()
    if tui and not args.no_tui:
        port = _free_port()
        server = _serve_background(port)
        cfg_json = {
            "mode": cfg.mode, "os": cfg.os, "elf": cfg.elf,
            "pt_base": cfg.pt_base, "rip": cfg.rip, "halt": cfg.halt,
            "max_steps": cfg.max_steps,
            "set_reg": {k: hex(v) for k, v in cfg.set_reg.items()},
            "oracle": cfg.oracle, "fs": dict(cfg.fs), "stdin": cfg.stdin,
            "undef_policy": cfg.undef_policy,
            "stack_return_to_halt": cfg.stack_return_to_halt,
            "base_dir": cfg.base_dir,
        }
        cfg_json = {k: v for k, v in cfg_json.items()
                    if v not in (None, {}, [])}
        import tempfile
        with tempfile.NamedTemporaryFile("w", suffix=".json",
                                         delete=False) as fh:
            json.dump(cfg_json, fh)
            cfg_path = fh.name
        try:
            return subprocess.run(
                ["node", tui, "--url", f"http://127.0.0.1:{port}",
                 "--config", cfg_path]).returncode
        finally:
            server.should_exit = True
            os.unlink(cfg_path)

    # line-mode fallback client
    from .debugger import DebugSession
    session = DebugSession(cfg)
    print("x64sim debugger (line mode; 'help' lists commands)")
    while True:
        try:
            line = input("(dbg) ")
        except EOFError:
            break
        result = session.execute(line)
        if result.output:
            print(result.output)
        if result.quit:
            break
    return 0


def cmd_bench(args) -> int:
    from .bench import run_benchmark, format_report
    print(format_report(run_benchmark(args.user_steps, args.system_steps)))
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="x64sim",
        description="x86-64 instruction-set simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="load a program and run it")
    _add_run_flags(p_run)
    p_run.set_defaults(fn=cmd_run)

    p_dis = sub.add_parser("disasm", help="disassemble an ELF image")
    p_dis.add_argument("--elf", required=True)
    p_dis.add_argument("--start", help="start address (default: entry)")
    p_dis.add_argument("--count", type=int, default=32)
    p_dis.set_defaults(fn=cmd_disasm)

    p_ops = sub.add_parser("opcodes", help="print the implemented-opcodes "
                                           "table")
    p_ops.set_defaults(fn=cmd_opcodes)

    p_dbg = sub.add_parser("debug", help="interactive debugger")
    _add_run_flags(p_dbg)
    p_dbg.add_argument("--script", help="run a command script headlessly "
                                        "and print the transcript")
    p_dbg.add_argument("--no-tui", action="store_true",
                       help="use the built-in line-mode client")
    p_dbg.set_defaults(fn=cmd_debug)

    p_srv = sub.add_parser("serve", help="start the HTTP service")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8642)
    p_srv.set_defaults(fn=cmd_serve)

    p_bench = sub.add_parser("bench", help="interpreter throughput "
                                           "benchmark")
    p_bench.add_argument("--user-steps", type=int, default=10_000_000)
    p_bench.add_argument("--system-steps", type=int, default=10_000_000)
    p_bench.set_defaults(fn=cmd_bench)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except BrokenPipeError:
        return 0
    except (ConfigError, LoadError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
