"""Run configuration: one declarative record that fully determines a
run, loadable from CLI flags or a JSON file (the file form is
canonical for fixtures, so acceptance runs are one command)."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .state import MachineState, UndefPolicy, GPR_INDEX, OS_LINUX, OS_FREEBSD
from .memory import init_system_level_mode, write_linear_bytes
from .loader import parse_elf_file, binary_file_load, init_x86_state, LoadError
from .environment import load_oracle_file

MODE_USER = "user"
MODE_SYSTEM_MARKING = "system-marking"
MODE_SYSTEM_NONMARKING = "system-nonmarking"
MODES = (MODE_USER, MODE_SYSTEM_MARKING, MODE_SYSTEM_NONMARKING)


class ConfigError(ValueError):
    pass


def _to_int(value, name="value") -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        try:
            return int(value, 0)
        except ValueError:
            raise ConfigError(f"bad integer for {name}: {value!r}") from None
    raise ConfigError(f"bad integer for {name}: {value!r}")


def parse_undef_policy(text: str) -> UndefPolicy:
    if text == "injective":
        return UndefPolicy("injective")
    if text == "zero":
        return UndefPolicy("zero")
    if text.startswith("seeded"):
        _, _, seed = text.partition(":")
        return UndefPolicy("seeded", _to_int(seed or "0", "undef seed"))
    raise ConfigError(f"unknown undef policy {text!r}")


@dataclass
class RunConfig:
    mode: str = MODE_USER
    os: str = OS_LINUX
    elf: Optional[str] = None
    pt_base: Optional[int] = None
    rip: Optional[int] = None
    halt: Optional[int] = None
    max_steps: int = 1_000_000
    set_reg: Dict[str, int] = field(default_factory=dict)
    oracle: Optional[str] = None
    fs: List[Tuple[str, str]] = field(default_factory=list)
    stdin: Optional[str] = None
    undef_policy: str = "injective"
    log_state: Optional[str] = None
    log_mem: Optional[str] = None
    stack_return_to_halt: bool = False
    base_dir: str = "."

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.os not in (OS_LINUX, OS_FREEBSD):
            raise ConfigError(f"unknown os {self.os!r}")
        if self.mode == MODE_USER and self.pt_base is not None:
            raise ConfigError("user mode does not take a page-table base")
        if self.mode != MODE_USER and self.pt_base is None:
            raise ConfigError(f"{self.mode} mode requires a page-table base")
        for name in self.set_reg:
            if name.lower() not in GPR_INDEX:
                raise ConfigError(f"unknown register {name!r}")
        parse_undef_policy(self.undef_policy)

    def _path(self, p: str) -> str:
        return p if os.path.isabs(p) else os.path.join(self.base_dir, p)

    def build_state(self) -> MachineState:
        """Construct the initial machine state this config describes."""
        self.validate()
        state = MachineState(os_info=self.os,
                             undef_policy=parse_undef_policy(self.undef_policy))
        if self.mode != MODE_USER:
            init_system_level_mode(state, self.pt_base)
            state.marking_mode = self.mode == MODE_SYSTEM_MARKING

        entry = None
        if self.elf:
            image = parse_elf_file(self._path(self.elf))
            binary_file_load(state, image)
            entry = image.entry

        if self.oracle:
            state.env.oracle = load_oracle_file(self._path(self.oracle))
        for sim_path, host_path in self.fs:
            with open(self._path(host_path), "rb") as fh:
                state.env.files[sim_path] = bytearray(fh.read())
        if self.stdin:
            with open(self._path(self.stdin), "rb") as fh:
                state.env.stdin = bytearray(fh.read())

        start = self.rip if self.rip is not None else entry
        if start is None:
            raise ConfigError("no start address: give --rip or an ELF entry")
        reg_inits = [(GPR_INDEX[name.lower()], value)
                     for name, value in self.set_reg.items()]
        init_x86_state(state, None, start, self.halt, reg_inits)
        if self.stack_return_to_halt:
            if self.halt is None:
                raise ConfigError("stack_return_to_halt needs a halt address")
            rsp = state.gpr[4]
            write_linear_bytes(state, rsp, self.halt.to_bytes(8, "little"))
        return state


def config_from_dict(data: dict, base_dir: str = ".") -> RunConfig:
    cfg = RunConfig(base_dir=base_dir)
    known = {"mode", "os", "elf", "pt_base", "rip", "halt", "max_steps",
             "set_reg", "oracle", "fs", "stdin", "undef_policy",
             "log_state", "log_mem", "stack_return_to_halt"}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if key in ("pt_base", "rip", "halt") and value is not None:
            value = _to_int(value, key)
        elif key == "max_steps":
            value = _to_int(value, key)
        elif key == "set_reg":
            value = {name: _to_int(v, f"set_reg.{name}")
                     for name, v in value.items()}
        elif key == "fs":
            if isinstance(value, dict):
                value = sorted(value.items())
            else:
                value = [tuple(pair) for pair in value]
        setattr(cfg, key, value)
    return cfg


def load_config_file(path: str) -> RunConfig:
    with open(path) as fh:
        data = json.load(fh)
    return config_from_dict(data, base_dir=os.path.dirname(os.path.abspath(path)))


__all__ = ["RunConfig", "ConfigError", "config_from_dict", "load_config_file",
           "parse_undef_policy", "MODE_USER", "MODE_SYSTEM_MARKING",
           "MODE_SYSTEM_NONMARKING", "LoadError"]
