from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum


class Origin(str, Enum):
    ASM = "ASM"
    PSEUDO = "PSEUDO"
    SUMMARY = "SUMMARY"


@dataclass
class TokenSeq:
    tokens: list = field(default_factory=list)
    origin: Origin = Origin.ASM

    def __post_init__(self):
        self.origin = Origin(self.origin)
        for t in self.tokens:
            if not t or any(c.isspace() for c in t):
                raise ValueError(f"invalid token {t!r}: tokens must be non-empty and whitespace-free")

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


def summary_tokens(text: str) -> TokenSeq:
    """Lowercase, whitespace-split summary words."""
    return TokenSeq(text.lower().split(), Origin.SUMMARY)
