"""Pseudo-code lexing and pluggable identifier refinement."""
from __future__ import annotations

import logging
import re
import urllib.error
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import ConfigError
from .tokens import Origin, TokenSeq

log = logging.getLogger(__name__)

C_KEYWORDS = frozenset("""
auto break case char const continue default do double else enum extern float for goto if
inline int long register restrict return short signed sizeof static struct switch typedef
union unsigned void volatile while _Bool __int8 __int16 __int32 __int64 __fastcall __cdecl
__stdcall __thiscall __usercall __userpurge
""".split())

_OPERATORS = ["<<=", ">>=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==", "!=", "&&", "||",
              "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "::"]
_PSEUDO_LEX = re.compile(r"""
    (?P<ws>\s+)
  | (?P<comment>//[^\n]*|/\*.*?(?:\*/|\Z))
  | (?P<string>"(?:\\.|[^"\\\n])*"?)
  | (?P<char>'(?:\\.|[^'\\\n])*'?)
  | (?P<number>(?:0[xX][0-9A-Fa-f]+|\d+\.\d*(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?|\d+(?:[eE][+-]?\d+)?)[uUlLfFiI0-9]*)
  | (?P<ident>[A-Za-z_]\w*)
  | (?P<op>""" + "|".join(re.escape(o) for o in _OPERATORS) + r""")
  | (?P<punct>.)
""", re.VERBOSE | re.DOTALL)


class TokenClass(str, Enum):
    KEYWORD = "keyword"
    IDENT = "ident"
    NUMBER = "number"
    STRING = "string"
    CHAR = "char"
    OPERATOR = "operator"
    PUNCT = "punct"


def lex_pseudo(text):
    """Yield (token, TokenClass) pairs. String literals become ``"``, words, ``"``."""
    pos = 0
    while pos < len(text):
        m = _PSEUDO_LEX.match(text, pos)
        pos = m.end()
        kind = m.lastgroup
        tok = m.group(kind)
        if kind in ("ws", "comment"):
            continue
        if kind == "string":
            body = tok[1:-1] if len(tok) > 1 and tok.endswith('"') else tok[1:]
            yield '"', TokenClass.STRING
            for w in body.split():
                yield w, TokenClass.STRING
            yield '"', TokenClass.STRING
        elif kind == "char":
            yield "".join(tok.split()), TokenClass.CHAR
        elif kind == "ident":
            yield tok, TokenClass.KEYWORD if tok in C_KEYWORDS else TokenClass.IDENT
        elif kind == "number":
            yield tok, TokenClass.NUMBER
        elif kind == "op":
            yield tok, TokenClass.OPERATOR
        else:
            yield tok, TokenClass.PUNCT


def tokenize_pseudo(text) -> TokenSeq:
    return TokenSeq([t for t, _ in lex_pseudo(text or "")], Origin.PSEUDO)


class RefinerMode(str, Enum):
    PASSTHROUGH = "passthrough"
    MAPPING_FILE = "mapping"
    REMOTE = "remote"


@dataclass
class RefinerSpec:
    mode: RefinerMode = RefinerMode.PASSTHROUGH
    mapping_path: Optional[str] = None
    endpoint: Optional[str] = None
    timeout: float = 10.0
    max_connections: int = 4

    def __post_init__(self):
        try:
            self.mode = RefinerMode(self.mode)
        except ValueError:
            raise ConfigError(f"unknown refiner mode {self.mode!r}") from None
        if self.mode is RefinerMode.MAPPING_FILE and not self.mapping_path:
            raise ConfigError("mapping mode requires a mapping file")
        if self.mode is RefinerMode.REMOTE and not self.endpoint:
            raise ConfigError("remote mode requires an endpoint URL")
        if self.timeout <= 0:
            raise ConfigError("timeout must be positive")


def parse_duration(text) -> float:
    """Seconds from ``10``, ``10s``, ``500ms`` or ``2m``."""
    m = re.fullmatch(r"\s*(\d+(?:\.\d+)?)\s*(ms|s|m)?\s*", str(text))
    if not m:
        raise ConfigError(f"bad duration {text!r}")
    value = float(m.group(1))
    return value * {"ms": 1e-3, "s": 1.0, "m": 60.0, None: 1.0}[m.group(2)]


def load_mapping(path) -> dict:
    """Read a ``placeholder<TAB>name`` file."""
    mapping = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise ConfigError(f"{path}:{lineno}: expected 'placeholder<TAB>name'")
                mapping[parts[0].strip()] = parts[1].strip()
    except OSError as e:
        raise ConfigError(f"cannot read mapping file {path}: {e.strerror}") from None
    return mapping


def apply_mapping(text, mapping) -> str:
    # walk the lexer so "identifier" means exactly what tokenize_pseudo sees
    out, pos = [], 0
    while pos < len(text):
        m = _PSEUDO_LEX.match(text, pos)
        tok = m.group(0)
        out.append(mapping.get(tok, tok) if m.lastgroup == "ident" else tok)
        pos = m.end()
    return "".join(out)


def _post(text, endpoint, timeout):
    req = urllib.request.Request(endpoint, data=text.encode("utf-8"), method="POST",
                                 headers={"Content-Type": "text/plain; charset=utf-8"})
    with urllib.request.urlopen(req, timeout=timeout) as resp:
        if not 200 <= resp.status < 300:
            raise urllib.error.HTTPError(endpoint, resp.status, resp.reason, resp.headers, None)
        return resp.read().decode("utf-8")


class Refiner:
    """Reusable refiner; loads the mapping file once."""

    def __init__(self, spec: RefinerSpec):
        self.spec = spec
        self.mapping = load_mapping(spec.mapping_path) if spec.mode is RefinerMode.MAPPING_FILE else None
        self.warnings = []

    def __call__(self, text):
        if text is None:
            return None
        mode = self.spec.mode
        if mode is RefinerMode.PASSTHROUGH:
            return text
        if mode is RefinerMode.MAPPING_FILE:
            return apply_mapping(text, self.mapping)
        try:
            return _post(text, self.spec.endpoint, self.spec.timeout)
        except Exception as e:  # any transport failure degrades to passthrough
            msg = f"remote refiner failed ({type(e).__name__}: {e}); passing text through"
            log.warning(msg)
            self.warnings.append(msg)
            return text

    def many(self, texts):
        """Refine a batch; order of results follows order of ``texts``."""
        texts = list(texts)
        if self.spec.mode is not RefinerMode.REMOTE or len(texts) <= 1:
            return [self(t) for t in texts]
        with ThreadPoolExecutor(max_workers=max(1, self.spec.max_connections)) as pool:
            futures = {i: pool.submit(self, t) for i, t in enumerate(texts)}
            return [futures[i].result() for i in range(len(texts))]


def refine(text, spec: RefinerSpec) -> str:
    return Refiner(spec)(text)
