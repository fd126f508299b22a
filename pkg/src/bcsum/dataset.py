"""Doc-comment summary extraction and {stripped function, summary} pairing."""
from __future__ import annotations

import json
import logging
import os
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

import numpy as np

from .archs import Arch
from .errors import AmbiguityError, ConfigError, EmptyDatasetError
from .listing import DisasmFunction, function_to_record
from .normalize import normalize_function

log = logging.getLogger(__name__)

C_SUFFIXES = (".c", ".h", ".cc", ".cpp", ".inc")


class OptLevel(str, Enum):
    O1 = "O1"
    O2 = "O2"
    O3 = "O3"


class Split(str, Enum):
    TRAIN = "TRAIN"
    VALID = "VALID"
    TEST = "TEST"


@dataclass(frozen=True)
class SummaryRecord:
    function_name: str
    summary: str
    source_path: str

    def __post_init__(self):
        if not self.summary or "\n" in self.summary:
            raise ValueError("summary must be a non-empty single line")


@dataclass
class DatasetSample:
    id: str
    arch: Arch
    opt_level: OptLevel
    function: DisasmFunction
    summary: str
    split: Optional[Split] = None
    name: str = ""  # the unstripped function name, kept for bookkeeping
    source_path: str = ""


# ---------------------------------------------------------------- extraction

_C_LEX = re.compile(r"""
    (?P<doc>/\*\*(?!/).*?\*/)
  | (?P<block>/\*.*?\*/)
  | (?P<line>//[^\n]*)
  | (?P<string>"(?:\\.|[^"\\\n])*")
  | (?P<char>'(?:\\.|[^'\\\n])*')
  | (?P<pp>^[ \t]*\#(?:[^\n]*\\\n)*[^\n]*)
  | (?P<open>\{)
  | (?P<close>\})
""", re.VERBOSE | re.DOTALL | re.MULTILINE)
_DECL_STOP = re.compile(r"/\*|//|[;{}#=]|\(")
_IDENT_BEFORE_PAREN = re.compile(r"([A-Za-z_]\w*)\s*$")
_TAG = re.compile(r"^[@\\][A-Za-z]+")
_GTKDOC_NAME = re.compile(r"^[A-Za-z_]\w*:\s*(?:\([^)]*\)\s*)*$")
_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def clean_comment(raw) -> list:
    """Comment body lines with ``/**``, ``*/``, leading ``*`` and doc-tag blocks removed."""
    body = raw[3:-2] if raw.endswith("*/") else raw[3:]
    lines = []
    in_tag = False
    for line in body.splitlines():
        s = line.strip()
        while s.startswith("*"):
            s = s[1:].lstrip()
        if _TAG.match(s):
            in_tag = True
            continue
        if not s:
            in_tag = False
            lines.append("")
            continue
        if not in_tag:
            lines.append(s)
    while lines and not lines[0]:
        lines.pop(0)
    # gtk-doc style comments open with "name:" on a line of its own
    if lines and _GTKDOC_NAME.match(lines[0]):
        lines.pop(0)
        while lines and not lines[0]:
            lines.pop(0)
    return lines


def first_sentence(lines) -> Optional[str]:
    """Text up to the first ``.``/``!``/``?`` outside parentheses; else the first line."""
    if not lines:
        return None
    text = " ".join(l for l in lines if l)
    depth = 0
    for i, ch in enumerate(text):
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth = max(0, depth - 1)
        elif depth == 0 and _SENTENCE_END.match(text, i):
            out = text[:i].strip()
            return out or None
    out = lines[0].strip().rstrip(".!?").strip()
    return out or None


def _declared_name(text, pos):
    """Name of the function declared right after ``pos``, or None."""
    m = _DECL_STOP.search(text, pos)
    if not m or m.group(0) != "(":
        return None
    head = text[pos:m.start()]
    if not head.strip():
        return None
    name = _IDENT_BEFORE_PAREN.search(head)
    if not name:
        return None
    if name.group(1) in ("if", "while", "for", "switch", "return", "sizeof"):
        return None
    return name.group(1)


def summaries_from_text(text, path="<string>") -> list:
    out = []
    depth = 0
    for m in _C_LEX.finditer(text):
        kind = m.lastgroup
        if kind == "open":
            depth += 1
        elif kind == "close":
            depth = max(0, depth - 1)
        elif kind == "doc" and depth == 0:
            name = _declared_name(text, m.end())
            if name is None:
                continue
            sentence = first_sentence(clean_comment(m.group(0)))
            if not sentence:
                log.info("%s: no summary sentence for %s", path, name)
                continue
            out.append(SummaryRecord(name, " ".join(sentence.split()), str(path)))
    return out


def extract_summaries(source_root) -> list:
    """SummaryRecords for every documented file-scope function under ``source_root``."""
    paths = []
    if os.path.isfile(source_root):
        paths = [source_root]
    else:
        for root, _, files in os.walk(source_root):
            paths.extend(os.path.join(root, f) for f in files if f.endswith(C_SUFFIXES))
    out = []
    for path in sorted(paths):
        try:
            with open(path, encoding="utf-8", errors="replace") as fh:
                text = fh.read()
        except OSError as e:
            log.warning("skipping unreadable source %s: %s", path, e.strerror)
            continue
        out.extend(summaries_from_text(text, path))
    return out


# ------------------------------------------------------------------- pairing

def _index_by_boundary(functions, what):
    index = {}
    dupes = {}
    for f in functions:
        key = f.boundaries
        if key in index:
            dupes.setdefault(key, [index[key].name]).append(f.name)
        else:
            index[key] = f
    if dupes:
        shown = ", ".join(f"[{a:#x},{b:#x}) ({', '.join(n)})" for (a, b), n in sorted(dupes.items())[:10])
        raise AmbiguityError(f"duplicate function boundaries in {what} listing: {shown}")
    return index


def make_pairs(stripped, named, summaries, opt_level="O1", binary=None):
    """Join stripped to named functions on boundaries, then to summaries on name.

    Returns (samples, counts); unmatched entries are dropped and tallied.
    """
    stripped, named = list(stripped), list(named)
    s_index = _index_by_boundary(stripped, "stripped")
    n_index = _index_by_boundary(named, "named")
    by_name = {}
    dup_names = 0
    for rec in summaries:
        if rec.function_name in by_name:
            dup_names += 1
            continue
        by_name[rec.function_name] = rec
    counts = Counter(stripped=len(stripped), named=len(named), summaries=len(by_name),
                     duplicate_summaries=dup_names)
    samples = []
    opt = OptLevel(opt_level)
    for key in sorted(n_index):
        nf = n_index[key]
        sf = s_index.get(key)
        if sf is None:
            counts["no_boundary_match"] += 1
            continue
        rec = by_name.get(nf.name)
        if rec is None:
            counts["no_summary"] += 1
            continue
        prefix = f"{binary}:" if binary else ""
        sid = f"{prefix}{sf.arch.value}-{opt.value}-{sf.name}"
        samples.append(DatasetSample(sid, sf.arch, opt, sf, rec.summary, None, nf.name, rec.source_path))
    counts["no_named_match"] = sum(1 for k in s_index if k not in n_index)
    counts["pairs"] = len(samples)
    if not samples:
        raise EmptyDatasetError(f"no {{stripped function, summary}} pairs could be made: {dict(counts)}")
    ids = Counter(s.id for s in samples)
    clash = [i for i, c in ids.items() if c > 1]
    if clash:
        raise AmbiguityError(f"duplicate sample ids: {', '.join(clash[:10])}")
    return samples, dict(counts)


def parse_ratios(text):
    try:
        parts = tuple(float(x) for x in str(text).split(","))
    except ValueError:
        raise ConfigError(f"bad ratios {text!r}; expected e.g. 0.8,0.1,0.1") from None
    return parts


def check_ratios(ratios):
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative fractions summing to 1, got {ratios}")
    return ratios


def split_sizes(n, ratios):
    ratios = check_ratios(ratios)
    n_train = int(round(n * ratios[0]))
    n_valid = min(int(round(n * ratios[1])), n - n_train)
    return n_train, n_valid, n - n_train - n_valid


def split_dataset(samples, ratios=(0.8, 0.1, 0.1), seed=0, group_of: Callable = None):
    """Seeded shuffle then contiguous TRAIN/VALID/TEST assignment.

    With ``group_of`` the shuffle is over groups (e.g. source projects), so a
    group never straddles two splits; sizes then follow the ratios only approximately.
    """
    samples = list(samples)
    ratios = check_ratios(ratios)
    rng = np.random.default_rng(seed)
    labels = [Split.TRAIN, Split.VALID, Split.TEST]
    if group_of is None:
        order = rng.permutation(len(samples))
        n_train, n_valid, _ = split_sizes(len(samples), ratios)
        for rank, i in enumerate(order):
            samples[i].split = labels[0] if rank < n_train else labels[1] if rank < n_train + n_valid else labels[2]
        return samples
    groups = {}
    for s in samples:
        groups.setdefault(group_of(s), []).append(s)
    keys = sorted(groups)
    order = rng.permutation(len(keys))
    bounds = np.cumsum(ratios) * len(samples)
    seen = 0
    for gi in order:
        members = groups[keys[gi]]
        mid = seen + len(members) / 2
        label = labels[0] if mid <= bounds[0] else labels[1] if mid <= bounds[1] else labels[2]
        for s in members:
            s.split = label
        seen += len(members)
    return samples


def summary_words(text):
    return text.lower().split()


def sample_record(s: DatasetSample, split_strings=True) -> dict:
    return {
        "id": s.id,
        "arch": s.arch.value,
        "opt": s.opt_level.value,
        "tokens_asm": normalize_function(s.function, split_strings=split_strings).tokens,
        "pseudo": s.function.pseudo,
        "summary": summary_words(s.summary),
        "split": s.split.value if s.split else None,
        "name": s.name,
        "function": function_to_record(s.function),
    }


def write_dataset(samples, out_dir, split_strings=True) -> str:
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "dataset.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(sample_record(s, split_strings), ensure_ascii=False) + "\n")
    return path
