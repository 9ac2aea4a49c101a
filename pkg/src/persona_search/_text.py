import hashlib
import re

_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; hyphenated compounds stay whole."""
    return _TOKEN_RE.findall(text.lower())


def stable_hash(*parts: object, seed: int = 0) -> int:
    """64-bit hash that is stable across processes (unlike ``hash``)."""
    h = hashlib.blake2b(digest_size=8, key=str(seed).encode()[:64] or b"0")
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "big")


def overlap_fraction(query_tokens: set[str], other_tokens: set[str]) -> float:
    """Share of query tokens that also occur in ``other_tokens``."""
    if not query_tokens:
        return 0.0
    return len(query_tokens & other_tokens) / len(query_tokens)


def overlap_coefficient(a: set[str], b: set[str]) -> float:
    if not a or not b:
        return 0.0
    return len(a & b) / min(len(a), len(b))
