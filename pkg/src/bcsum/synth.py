"""Seeded synthetic functions, instructions and toy corpora for tests and demos."""
from __future__ import annotations

import numpy as np

from .archs import Arch, get_profile
from .bicfg import build_bicfg, edge_kind_id
from .data import Example
from .listing import DisasmFunction, Instruction, classify
from .vocab import BOS, EOS

_X86_ALU = ["mov", "add", "sub", "xor", "and", "or", "cmp", "test", "lea", "imul", "shl", "shr", "push", "pop"]
_X64_REGS = ["rax", "rbx", "rcx", "rdx", "rsi", "rdi", "rbp", "rsp", "r8", "r9", "r12", "eax", "ecx", "edx"]
_X86_REGS = ["eax", "ebx", "ecx", "edx", "esi", "edi", "ebp", "esp", "al", "cl"]
_ARM_ALU = ["mov", "add", "sub", "ldr", "str", "cmp", "and", "orr", "eor", "lsl", "ldrb", "strb"]
_ARM_REGS = ["r0", "r1", "r2", "r3", "r4", "r5", "r6", "r7", "sp", "lr", "fp", "ip"]
_EXTERNAL = ["strlen", "malloc", "free", "memcpy", "printf", "_errno", "gss_release_buffer"]


def _literal(rng, arm=False):
    v = int(rng.choice([0, 1, -1, 8, -8, 255, 4096, -65536, 2 ** 31 - 1, -(2 ** 31)]))
    if rng.random() < 0.5:
        v = int(rng.integers(-10 ** 6, 10 ** 6))
    style = rng.integers(3)
    if style == 0:
        s = str(v)
    elif style == 1:
        s = ("-" if v < 0 else "") + hex(abs(v))
    else:
        s = ("-" if v < 0 else "") + f"{abs(v):X}h"
        if not s.lstrip("-")[0].isdigit():
            s = s.replace(s.lstrip("-"), "0" + s.lstrip("-"))
    return "#" + s if arm else s


def random_operand(rng, arch: Arch):
    """One plausible operand string for ``arch``."""
    arm = arch is Arch.ARM
    regs = _ARM_REGS if arm else (_X64_REGS if arch is Arch.X64 else _X86_REGS)
    r = rng.random()
    if r < 0.35:
        return str(rng.choice(regs)).upper() if rng.random() < 0.1 else str(rng.choice(regs))
    if r < 0.6:
        return _literal(rng, arm)
    if arm:
        base = str(rng.choice(regs))
        shape = rng.integers(4)
        if shape == 0:
            return f"[{base}]"
        if shape == 1:
            return f"[{base}, {_literal(rng, True)}]" + ("!" if rng.random() < 0.3 else "")
        if shape == 2:
            return f"[{base}, {rng.choice(regs)}, lsl #{rng.integers(1, 4)}]"
        lo = rng.integers(0, 6)
        return "{" + f"r{lo}-r{lo + rng.integers(1, 4)}" + "}"
    size = str(rng.choice(["", "dword ptr ", "qword ptr ", "byte ptr "]))
    base = str(rng.choice(regs))
    shape = rng.integers(5)
    if shape == 0:
        return f"{size}[{base}]"
    if shape == 1:
        return f"{size}[{base}+{_literal(rng)}]"
    if shape == 2:
        return f"{size}[{base}-{abs(int(rng.integers(1, 4096)))}]"
    if shape == 3:
        return f"{size}[{base}+{rng.choice(regs)}*{rng.choice([1, 2, 4, 8])}+{_literal(rng)}]"
    return f"{size}fs:[{base}+{rng.integers(0, 64)}]"


def random_instruction(rng, arch: Arch, start=0x1000, end=0x1100):
    """(mnemonic, operands) drawn from a broad mix, including control flow."""
    arm = arch is Arch.ARM
    r = rng.random()
    if r < 0.12:
        m = str(rng.choice(["beq", "bne", "b", "bgt"] if arm else ["jz", "jnz", "jmp", "jg", "jle"]))
        tgt = int(rng.integers(start, end))
        label = f"loc_{tgt:X}" if rng.random() < 0.5 else hex(tgt)
        return m, [label]
    if r < 0.22:
        m = "bl" if arm else "call"
        pick = rng.random()
        if pick < 0.4:
            return m, [f"sub_{int(rng.integers(0x400000, 0x500000)):X}"]
        if pick < 0.8:
            return m, [str(rng.choice(_EXTERNAL))]
        return m, [str(rng.choice(_ARM_REGS if arm else _X64_REGS))]
    if r < 0.26:
        return ("bx", ["lr"]) if arm else ("ret", [])
    alu = _ARM_ALU if arm else _X86_ALU
    m = str(rng.choice(alu))
    n = int(rng.integers(0, 4 if arm else 3))
    return m, [random_operand(rng, arch) for _ in range(n)]


def random_function(rng, arch=Arch.X64, n_min=1, n_max=40, p_branch=0.2, name=None) -> DisasmFunction:
    """Random function with a mix of resolved, external, unresolved and indirect branches."""
    arch = Arch.parse(arch)
    profile = get_profile(arch)
    n = int(rng.integers(n_min, n_max + 1))
    start = 0x401000 + 0x1000 * int(rng.integers(0, 64))
    sizes = rng.integers(1, 8, size=n)
    addrs = [start + int(s) for s in np.concatenate([[0], np.cumsum(sizes)[:-1]])]
    end = start + int(sizes.sum())
    instrs = []
    arm = arch is Arch.ARM
    jmp, jcc = ("b", "bne") if arm else ("jmp", "jz")
    for i, a in enumerate(addrs):
        r = rng.random()
        if r < p_branch:
            m = jcc if rng.random() < 0.6 else jmp
            pick = rng.random()
            if pick < 0.75:
                tgt = addrs[int(rng.integers(0, n))]
                instrs.append(Instruction(a, m, [f"loc_{tgt:X}"], classify(m, [f"loc_{tgt:X}"], profile), tgt))
            elif pick < 0.9:
                tgt = end + int(rng.integers(0x10, 0x1000))
                instrs.append(Instruction(a, m, [hex(tgt)], classify(m, [hex(tgt)], profile), tgt))
            else:
                ops = ["r3"] if arm else ["rax"]
                m2 = "bx" if arm else "jmp"
                instrs.append(Instruction(a, m2, ops, classify(m2, ops, profile), None))
        elif r < p_branch + 0.05:
            m = "bx" if arm else "ret"
            ops = ["lr"] if arm else []
            instrs.append(Instruction(a, m, ops, classify(m, ops, profile), None))
        elif r < p_branch + 0.12:
            m = "bl" if arm else "call"
            if rng.random() < 0.5:
                tgt = 0x400000 + int(rng.integers(0, 0x10000))
                ops = [f"sub_{tgt:X}"]
            else:
                tgt, ops = None, [str(rng.choice(_EXTERNAL))]
            instrs.append(Instruction(a, m, ops, classify(m, ops, profile), tgt))
        else:
            m, ops = random_instruction(rng, arch)
            while m in profile.jump_mnemonics or m in profile.call_mnemonics or m in profile.return_mnemonics \
                    or classify(m, ops, profile).value != "FALLTHROUGH":
                m, ops = random_instruction(rng, arch)
            instrs.append(Instruction(a, m, ops, classify(m, ops, profile), None))
    return DisasmFunction(name or f"sub_{start:X}", start, end, arch, instrs,
                          [str(s) for s in rng.choice(_EXTERNAL, size=int(rng.integers(0, 3)))])


def toy_examples(n=32, seed=0, vocab=20, max_summary=8, src_len=(4, 10), max_nodes=5, node_tokens=3):
    """Random id-level examples over a ``vocab``-sized id space (ids >= 4 are content)."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        asm = rng.integers(4, vocab, size=int(rng.integers(*src_len))).tolist()
        pseudo = rng.integers(4, vocab, size=int(rng.integers(*src_len))).tolist()
        f = random_function(rng, Arch.X64, 1, max_nodes, p_branch=0.3)
        g = build_bicfg(f)
        nodes = [rng.integers(4, vocab, size=int(rng.integers(1, node_tokens + 1))).tolist() for _ in range(g.q)]
        edges = [(e.src, e.dst, edge_kind_id(e.etype, e.direction)) for e in g.edges]
        summary = rng.integers(4, vocab, size=int(rng.integers(1, max_summary + 1))).tolist()
        out.append(Example(f"toy{i}", asm, pseudo, nodes, edges, [BOS] + summary + [EOS], [str(t) for t in summary]))
    return out


def toy_vocabs(vocab=20):
    """Vocabularies whose content tokens are the decimal ids themselves."""
    from .data import Vocabs
    from .tokens import Origin
    from .vocab import SPECIALS, Vocab
    words = SPECIALS + [str(i) for i in range(len(SPECIALS), vocab)]
    return Vocabs(Vocab(Origin.ASM, words, 1), Vocab(Origin.PSEUDO, words, 1), Vocab(Origin.SUMMARY, words, 1))
