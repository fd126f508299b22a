"""Disassembly listing types and the JSONL listing reader."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from typing import Optional

from .archs import Arch, ArchProfile, get_profile
from .errors import ConfigError, ParseError, ValidationError

STRIPPED_NAME = re.compile(r"^sub_[0-9A-Fa-f]+$")
_LABEL = re.compile(r"^(?:sub|loc|locret|j_sub|nullsub)_([0-9A-Fa-f]+)$")
_HEX = re.compile(r"^(?:0x([0-9A-Fa-f]+)|([0-9][0-9A-Fa-f]*)h)$")
_PREFIXES = ("short ", "near ptr ", "far ptr ", "near ", "far ")


class InstrKind(str, Enum):
    FALLTHROUGH = "FALLTHROUGH"
    JUMP_UNCOND = "JUMP_UNCOND"
    JUMP_COND = "JUMP_COND"
    CALL = "CALL"
    RETURN = "RETURN"
    INDIRECT_JUMP = "INDIRECT_JUMP"


@dataclass
class Instruction:
    address: int
    mnemonic: str
    operands: list = field(default_factory=list)
    kind: InstrKind = InstrKind.FALLTHROUGH
    target: Optional[int] = None

    def text(self):
        return f"{self.mnemonic} {', '.join(self.operands)}".strip()


@dataclass
class DisasmFunction:
    name: str
    start_addr: int
    end_addr: int
    arch: Arch
    instructions: list = field(default_factory=list)
    strings: list = field(default_factory=list)
    pseudo: Optional[str] = None
    # (start, end) of the binary's own code section, when the listing declares it
    text_range: Optional[tuple] = None

    @property
    def is_stripped(self):
        return bool(STRIPPED_NAME.match(self.name))

    @property
    def boundaries(self):
        return (self.start_addr, self.end_addr)

    def contains(self, addr):
        return addr is not None and self.start_addr <= addr < self.end_addr

    @cached_property
    def index_of(self):
        """Map from instruction address to its position."""
        return {ins.address: i for i, ins in enumerate(self.instructions)}


def parse_address(text):
    """Parse a literal code address or IDA-style label; None when not an address."""
    if text is None:
        return None
    if isinstance(text, int):
        return text
    s = str(text).strip()
    low = s.lower()
    for p in _PREFIXES:
        if low.startswith(p):
            s = s[len(p):].strip()
            low = s.lower()
    if s.startswith("#"):
        s = s[1:]
    m = _LABEL.match(s)
    if m:
        return int(m.group(1), 16)
    m = _HEX.match(s)
    if m:
        return int(m.group(1) or m.group(2), 16)
    if s.isdigit():
        return int(s)
    return None


def _is_register_or_memory(operand, profile):
    op = operand.strip().lower()
    for p in _PREFIXES:
        if op.startswith(p):
            op = op[len(p):]
    return "[" in op or op in profile.registers or op.split(":")[0] in profile.registers and ":" in op


def classify(mnemonic, operands, profile: ArchProfile) -> InstrKind:
    """Control-flow kind of an instruction from the architecture's mnemonic table."""
    m = mnemonic.lower()
    ops = [o.strip().lower() for o in operands]
    if m in profile.return_mnemonics:
        return InstrKind.RETURN
    if m in profile.call_mnemonics:
        return InstrKind.CALL
    if profile.arch is Arch.ARM:
        if m in ("bx", "br"):
            if ops and ops[-1] == "lr":
                return InstrKind.RETURN
            return InstrKind.INDIRECT_JUMP
        if m.startswith("pop") or m.startswith("ldm"):
            if any("pc" in re.split(r"[^a-z0-9]+", o) for o in ops):
                return InstrKind.RETURN
            return InstrKind.FALLTHROUGH
        if m in ("mov", "ldr") and ops and ops[0] == "pc":
            if m == "mov" and len(ops) > 1 and ops[1] == "lr":
                return InstrKind.RETURN
            return InstrKind.INDIRECT_JUMP
    if m in profile.cond_jump_mnemonics:
        return InstrKind.JUMP_COND
    if m in profile.jump_mnemonics:
        if ops and _is_register_or_memory(operands[-1], profile):
            return InstrKind.INDIRECT_JUMP
        return InstrKind.JUMP_UNCOND
    return InstrKind.FALLTHROUGH


def function_from_record(rec, arch=None, line=None, path=None) -> DisasmFunction:
    """Build and validate a DisasmFunction from one decoded listing record."""
    try:
        rec_arch = Arch.parse(rec.get("arch", arch.value if isinstance(arch, Arch) else arch))
    except ConfigError:
        raise
    if arch is not None and Arch.parse(arch) is not rec_arch:
        raise ConfigError(f"line {line}: record arch {rec_arch.value} does not match requested {Arch.parse(arch).value}")
    profile = get_profile(rec_arch)
    try:
        name = str(rec["name"])
        start = parse_address(rec["start_addr"])
        end = parse_address(rec["end_addr"])
        raw = rec.get("instructions", [])
        if start is None or end is None:
            raise ValueError("start_addr/end_addr must be hex strings")
        text_range = None
        if rec.get("text_start") is not None and rec.get("text_end") is not None:
            text_range = (parse_address(rec["text_start"]), parse_address(rec["text_end"]))
        instrs = []
        for item in raw:
            addr = parse_address(item["addr"])
            if addr is None:
                raise ValueError(f"bad instruction address {item['addr']!r}")
            operands = [str(o) for o in item.get("operands", [])]
            mnemonic = str(item["mnemonic"]).lower()
            kind = classify(mnemonic, operands, profile)
            target = parse_address(item["target"]) if item.get("target") is not None else None
            if target is None and kind in (InstrKind.JUMP_COND, InstrKind.JUMP_UNCOND, InstrKind.CALL) and operands:
                target = parse_address(operands[-1])
            instrs.append(Instruction(addr, mnemonic, operands, kind, target))
        strings = [str(s) for s in rec.get("strings", [])]
        pseudo = rec.get("pseudo")
    except (KeyError, TypeError, ValueError, AttributeError) as e:
        raise ParseError(f"malformed listing record: {e}", line=line, path=path) from None

    if end < start:
        raise ValidationError(f"{name}: end_addr {end:#x} precedes start_addr {start:#x}")
    instrs.sort(key=lambda i: i.address)
    seen = set()
    for ins in instrs:
        if not start <= ins.address < end:
            raise ValidationError(
                f"{name}: instruction at {ins.address:#x} outside boundaries [{start:#x}, {end:#x})")
        if ins.address in seen:
            raise ValidationError(f"{name}: duplicate instruction address {ins.address:#x}")
        seen.add(ins.address)
    for ins in instrs:
        if ins.kind in (InstrKind.JUMP_COND, InstrKind.JUMP_UNCOND) and start <= (ins.target or -1) < end:
            if ins.target not in seen:
                raise ValidationError(
                    f"{name}: jump at {ins.address:#x} targets {ins.target:#x}, not an instruction boundary")
        if ins.kind is InstrKind.RETURN:
            ins.target = None
    return DisasmFunction(name, start, end, rec_arch, instrs, strings,
                          None if pseudo is None else str(pseudo), text_range)


def function_to_record(f: DisasmFunction) -> dict:
    rec = {
        "name": f.name,
        "start_addr": hex(f.start_addr),
        "end_addr": hex(f.end_addr),
        "arch": f.arch.value,
        "instructions": [],
        "strings": list(f.strings),
    }
    for ins in f.instructions:
        item = {"addr": hex(ins.address), "mnemonic": ins.mnemonic, "operands": list(ins.operands)}
        if ins.target is not None:
            item["target"] = hex(ins.target)
        rec["instructions"].append(item)
    if f.pseudo is not None:
        rec["pseudo"] = f.pseudo
    if f.text_range is not None:
        rec["text_start"], rec["text_end"] = hex(f.text_range[0]), hex(f.text_range[1])
    return rec


def iter_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e.msg}", line=lineno, path=path) from None


def parse_listing(path, arch=None) -> list:
    """Read a JSONL listing, one DisasmFunction per record."""
    if arch is not None:
        arch = Arch.parse(arch)
    out = []
    for lineno, rec in iter_jsonl(path):
        if not isinstance(rec, dict):
            raise ParseError("record is not a JSON object", line=lineno, path=path)
        out.append(function_from_record(rec, arch, line=lineno, path=path))
    return out


def write_listing(functions, path):
    with open(path, "w", encoding="utf-8") as fh:
        for f in functions:
            fh.write(json.dumps(function_to_record(f)) + "\n")
