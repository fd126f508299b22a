"""Per-architecture register and control-flow mnemonic tables."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError


class Arch(str, Enum):
    X86 = "x86"
    X64 = "x64"
    ARM = "arm"

    @classmethod
    def parse(cls, value):
        if isinstance(value, Arch):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown architecture {value!r} (expected x86, x64 or arm)") from None


@dataclass(frozen=True)
class ArchProfile:
    arch: Arch
    registers: frozenset
    jump_mnemonics: frozenset
    call_mnemonics: frozenset
    return_mnemonics: frozenset
    cond_jump_mnemonics: frozenset
    # operand words that are neither registers nor values (size hints, shift kinds)
    keywords: frozenset = frozenset()

    def __post_init__(self):
        if not self.registers:
            raise ConfigError(f"{self.arch}: empty register set")
        groups = (self.jump_mnemonics, self.call_mnemonics, self.return_mnemonics)
        for i, a in enumerate(groups):
            for b in groups[i + 1:]:
                if a & b:
                    raise ConfigError(f"{self.arch}: overlapping mnemonic sets {sorted(a & b)}")
        if not self.cond_jump_mnemonics <= self.jump_mnemonics:
            raise ConfigError(f"{self.arch}: conditional jumps must be a subset of jumps")


def _x86_regs(wide):
    regs = {"ax", "bx", "cx", "dx", "si", "di", "sp", "bp", "ip",
            "al", "ah", "bl", "bh", "cl", "ch", "dl", "dh",
            "eax", "ebx", "ecx", "edx", "esi", "edi", "esp", "ebp", "eip",
            "cs", "ds", "es", "fs", "gs", "ss", "st", "eflags"}
    regs |= {f"st{i}" for i in range(8)}
    regs |= {f"mm{i}" for i in range(8)}
    regs |= {f"xmm{i}" for i in range(8)}
    regs |= {f"cr{i}" for i in range(8)} | {f"dr{i}" for i in range(8)}
    if wide:
        regs |= {"rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rsp", "rbp", "rip",
                 "sil", "dil", "spl", "bpl", "rflags"}
        for i in range(8, 16):
            regs |= {f"r{i}", f"r{i}d", f"r{i}w", f"r{i}b"}
        regs |= {f"xmm{i}" for i in range(32)} | {f"ymm{i}" for i in range(32)} | {f"zmm{i}" for i in range(32)}
        regs |= {f"k{i}" for i in range(8)}
    else:
        regs |= {f"ymm{i}" for i in range(8)}
    return frozenset(regs)


_X86_CC = ["a", "ae", "b", "be", "c", "e", "z", "g", "ge", "l", "le", "na", "nae", "nb",
           "nbe", "nc", "ne", "ng", "nge", "nl", "nle", "no", "np", "ns", "nz", "o", "p",
           "pe", "po", "s"]
_X86_COND = frozenset([f"j{cc}" for cc in _X86_CC] + ["jcxz", "jecxz", "jrcxz", "loop", "loope",
                                                      "loopne", "loopz", "loopnz"])
_X86_KEYWORDS = frozenset(["byte", "word", "dword", "qword", "tbyte", "oword", "xmmword", "ymmword",
                           "zmmword", "fword", "ptr", "short", "near", "far", "offset", "large", "small"])


def _arm_regs():
    regs = {f"r{i}" for i in range(16)} | {"sp", "lr", "pc", "fp", "ip", "sl", "sb", "apsr", "cpsr", "spsr"}
    regs |= {f"s{i}" for i in range(32)} | {f"d{i}" for i in range(32)} | {f"q{i}" for i in range(16)}
    # AArch64 names, for listings that mix conventions
    regs |= {f"x{i}" for i in range(31)} | {f"w{i}" for i in range(31)} | {"xzr", "wzr"}
    return frozenset(regs)


_ARM_CC = ["eq", "ne", "cs", "hs", "cc", "lo", "mi", "pl", "vs", "vc", "hi", "ls", "ge", "lt", "gt", "le"]
_ARM_COND = frozenset([f"b{cc}" for cc in _ARM_CC] + [f"b.{cc}" for cc in _ARM_CC]
                      + [f"b{cc}.w" for cc in _ARM_CC] + ["cbz", "cbnz", "tbz", "tbnz"])

PROFILES = {
    Arch.X86: ArchProfile(
        arch=Arch.X86,
        registers=_x86_regs(wide=False),
        jump_mnemonics=frozenset({"jmp"}) | _X86_COND,
        call_mnemonics=frozenset({"call"}),
        return_mnemonics=frozenset({"ret", "retn", "retf", "iret", "iretd"}),
        cond_jump_mnemonics=_X86_COND,
        keywords=_X86_KEYWORDS,
    ),
    Arch.X64: ArchProfile(
        arch=Arch.X64,
        registers=_x86_regs(wide=True),
        jump_mnemonics=frozenset({"jmp"}) | _X86_COND,
        call_mnemonics=frozenset({"call"}),
        return_mnemonics=frozenset({"ret", "retn", "retf", "iretq"}),
        cond_jump_mnemonics=_X86_COND,
        keywords=_X86_KEYWORDS,
    ),
    Arch.ARM: ArchProfile(
        arch=Arch.ARM,
        registers=_arm_regs(),
        jump_mnemonics=frozenset({"b", "b.w", "bx", "br"}) | _ARM_COND,
        call_mnemonics=frozenset({"bl", "blx", "blr"}),
        return_mnemonics=frozenset({"ret"}),
        cond_jump_mnemonics=_ARM_COND,
        keywords=frozenset({"lsl", "lsr", "asr", "ror", "rrx", "sxtw", "uxtw", "sxtx", "uxtx"}),
    ),
}


def get_profile(arch) -> ArchProfile:
    return PROFILES[Arch.parse(arch)]
