"""Assembly normalization into closed-vocabulary token streams.

Rules, applied per operand fragment in priority order: registers kept
verbatim; internal call targets become ``<ICall>``; local jump destinations
become ``<JumpAddress>``; integer constants become ``<Positive>``,
``<Negative>`` or ``<Zero>``. Memory operands are split into structural
tokens. String features follow a single ``<STR>`` separator.
"""
from __future__ import annotations

import re
from collections import Counter

from .archs import get_profile
from .listing import STRIPPED_NAME, DisasmFunction, Instruction, InstrKind, parse_address
from .tokens import Origin, TokenSeq

POSITIVE, NEGATIVE, ZERO = "<Positive>", "<Negative>", "<Zero>"
ICALL, JUMP_ADDRESS, STR_SEP = "<ICall>", "<JumpAddress>", "<STR>"
PLACEHOLDERS = frozenset({POSITIVE, NEGATIVE, ZERO, ICALL, JUMP_ADDRESS, STR_SEP})
STRUCTURAL = frozenset({"[", "]", "+", "-", "*", ":", "{", "}", "!"})

_LOCAL_LABEL = re.compile(r"^(?:loc|locret)_[0-9A-Fa-f]+$")
_LEX = re.compile(r"""
    (?P<ws>\s+)
  | (?P<ph><[A-Za-z]+>)
  | (?P<num>\#?-?(?:0[xX][0-9A-Fa-f]+|[0-9][0-9A-Fa-f]*[hH](?![\w])|\d+\.\d+|\d+)(?![\w]))
  | (?P<ident>[A-Za-z_$?@.][\w$?@.]*)
  | (?P<punct>[\[\]+\-*:{}!,\#])
  | (?P<other>.)
""", re.VERBOSE)
_UNARY_CONTEXT = {None, "[", "+", "-", "*", ":", ",", "{"}
_SPLIT_STR = re.compile(r"[^0-9A-Za-z]+")


def sign_token(value) -> str:
    if value > 0:
        return POSITIVE
    if value < 0:
        return NEGATIVE
    return ZERO


def parse_literal(text):
    """Numeric value of an immediate in decimal, 0x-hex, h-suffixed hex or ARM ``#`` form."""
    s = text.lstrip("#")
    neg = s.startswith("-")
    if neg:
        s = s[1:]
    try:
        if s[:2].lower() == "0x":
            v = int(s[2:], 16)
        elif s[-1:] in "hH" and len(s) > 1:
            v = int(s[:-1], 16)
        elif "." in s:
            v = float(s)
        else:
            v = int(s, 10)
    except ValueError:
        return None
    return -v if neg else v


def normalize_operand(text, profile, counters=None):
    """Tokens for one operand string (or any space-joined token stream)."""
    out = []
    depth = 0
    prev = None
    pos = 0
    src = text.strip()
    while pos < len(src):
        m = _LEX.match(src, pos)
        pos = m.end()
        kind = m.lastgroup
        tok = m.group(kind)
        if kind == "ws":
            continue
        if kind == "num":
            if tok.lstrip("#").startswith("-") and prev not in _UNARY_CONTEXT:
                # binary minus glued to a literal: `rbp-8`
                out.append("-")
                tok = tok.replace("-", "", 1)
            value = parse_literal(tok)
            if value is None:
                out.append(tok)
                if counters is not None:
                    counters["unparsed"] += 1
            else:
                out.append(sign_token(value))
        elif kind == "ph":
            out.append(tok)
        elif kind == "ident":
            low = tok.lower()
            if low in profile.registers or low in profile.keywords:
                out.append(low)
            elif STRIPPED_NAME.match(tok):
                out.append(ICALL)
            elif _LOCAL_LABEL.match(tok):
                out.append(JUMP_ADDRESS)
            else:
                out.append(tok)
                if counters is not None:
                    counters["retained"] += 1
        elif kind == "punct":
            if tok == "[":
                depth += 1
                out.append(tok)
            elif tok == "]":
                depth = max(0, depth - 1)
                out.append(tok)
            elif tok == ",":
                # ARM `[r0, #4]` is base + offset; shift clauses and lists drop the comma
                rest = src[pos:].lstrip().split(" ", 1)[0].lower()
                if depth > 0 and rest and rest not in profile.keywords and not rest.startswith("]"):
                    out.append("+")
            elif tok == "#":
                pass
            else:
                out.append(tok)
        else:
            out.append(tok)
            if counters is not None:
                counters["unparsed"] += 1
        # a dropped comma still opens a fresh operand for unary minus
        prev = "," if tok == "," else (out[-1] if out else None)
    return out


def _strip_prefixes(operand):
    s = operand.strip()
    low = s.lower()
    for p in ("short ", "near ptr ", "far ptr ", "near ", "far "):
        if low.startswith(p):
            return s[len(p):].strip()
    return s


def is_internal_call(instr: Instruction, f: DisasmFunction) -> bool:
    """True when a call lands inside the binary being summarized."""
    if instr.kind is not InstrKind.CALL or not instr.operands:
        return False
    callee = _strip_prefixes(instr.operands[-1])
    if STRIPPED_NAME.match(callee):
        return True
    target = instr.target
    if target is None:
        return False
    if parse_address(callee) is None:
        # named, non-placeholder callee: an external symbol
        return False
    if f.text_range is not None and f.text_range[0] <= target < f.text_range[1]:
        return True
    return f.contains(target)


def _is_local_jump(instr, f):
    if instr.kind not in (InstrKind.JUMP_COND, InstrKind.JUMP_UNCOND) or not instr.operands:
        return False
    if f.contains(instr.target):
        return True
    return bool(_LOCAL_LABEL.match(_strip_prefixes(instr.operands[-1])))


def normalize_instruction(instr: Instruction, f: DisasmFunction, profile=None, counters=None) -> list:
    profile = profile or get_profile(f.arch)
    tokens = [instr.mnemonic.lower()]
    ops = instr.operands
    for i, op in enumerate(ops):
        last = i == len(ops) - 1
        if last and instr.kind is InstrKind.CALL and is_internal_call(instr, f):
            tokens.append(ICALL)
        elif last and _is_local_jump(instr, f):
            tokens.append(JUMP_ADDRESS)
        else:
            tokens.extend(normalize_operand(op, profile, counters))
    return tokens


def instruction_tokens(f: DisasmFunction, profile=None, counters=None) -> list:
    """Per-instruction normalized token lists (node labels for the graph)."""
    profile = profile or get_profile(f.arch)
    return [normalize_instruction(ins, f, profile, counters) for ins in f.instructions]


def string_tokens(strings, split=True) -> list:
    out = []
    for s in strings:
        if split:
            out.extend(t for t in _SPLIT_STR.split(s) if t)
        else:
            out.extend(s.split())
    return out


def normalize_function(f: DisasmFunction, profile=None, split_strings=True, counters=None) -> TokenSeq:
    """Flat normalized token stream: instructions, then ``<STR>`` and string features."""
    profile = profile or get_profile(f.arch)
    tokens = []
    for toks in instruction_tokens(f, profile, counters):
        tokens.extend(toks)
    extra = string_tokens(f.strings, split_strings)
    if extra:
        tokens.append(STR_SEP)
        tokens.extend(extra)
    return TokenSeq(tokens, Origin.ASM)


def normalize_text(line, arch) -> list:
    """Normalize a bare instruction line with no function context."""
    profile = get_profile(arch)
    parts = line.strip().split(None, 1)
    if not parts:
        return []
    tokens = [parts[0].lower()]
    if len(parts) > 1:
        tokens.extend(normalize_operand(parts[1], profile))
    return tokens


def new_counters():
    return Counter(unparsed=0, retained=0)
