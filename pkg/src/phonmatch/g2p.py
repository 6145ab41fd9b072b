"""Text to ARPAbet phoneme sequences, plus phoneme edit distance.

Pronunciations come from a CMUdict-style lexicon. Words missing from the
lexicon fall back to a fixed one-phoneme-per-letter table
(:data:`LETTER_TO_PHONEME`); the resulting sequence records which words
took the fallback so out-of-lexicon trials can be filtered.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from types import MappingProxyType
from typing import Iterator, Mapping, Sequence, Tuple

PAD = "<pad>"

# Stress-free ARPAbet inventory; list position + 1 is the phoneme id, 0 is PAD.
PHONEMES: Tuple[str, ...] = (
    "AA", "AE", "AH", "AO", "AW", "AY", "B", "CH", "D", "DH", "EH", "ER", "EY",
    "F", "G", "HH", "IH", "IY", "JH", "K", "L", "M", "N", "NG", "OW", "OY", "P",
    "R", "S", "SH", "T", "TH", "UH", "UW", "V", "W", "Y", "Z", "ZH",
)
PHONEME_TO_ID = {p: i + 1 for i, p in enumerate(PHONEMES)}
VOCAB_SIZE = len(PHONEMES) + 1

LETTER_TO_PHONEME = {
    "a": "AE", "b": "B", "c": "K", "d": "D", "e": "EH", "f": "F", "g": "G",
    "h": "HH", "i": "IH", "j": "JH", "k": "K", "l": "L", "m": "M", "n": "N",
    "o": "AA", "p": "P", "q": "K", "r": "R", "s": "S", "t": "T", "u": "AH",
    "v": "V", "w": "W", "x": "K", "y": "Y", "z": "Z",
}

_STRESS = re.compile(r"^([A-Z]+)[0-2]?$")
_ALTERNATE = re.compile(r"\(\d+\)$")
_NON_WORD = re.compile(r"[^a-z0-9']+")


class LexiconError(ValueError):
    pass


@dataclass(frozen=True)
class PhonemeSequence:
    phonemes: Tuple[str, ...]
    oov: Tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        for p in self.phonemes:
            if p not in PHONEME_TO_ID:
                raise ValueError(f"not a phoneme: {p!r}")

    @property
    def ids(self) -> Tuple[int, ...]:
        return tuple(PHONEME_TO_ID[p] for p in self.phonemes)

    def __len__(self) -> int:
        return len(self.phonemes)

    def __iter__(self) -> Iterator[str]:
        return iter(self.phonemes)

    def __getitem__(self, i):
        return self.phonemes[i]

    def __str__(self) -> str:
        return " ".join(self.phonemes)


class Lexicon(Mapping):
    """Read-only, case-insensitive word -> PhonemeSequence map."""

    def __init__(self, entries: Mapping[str, PhonemeSequence] | None = None):
        self._entries = MappingProxyType({k.lower(): v for k, v in (entries or {}).items()})

    def __getitem__(self, word: str) -> PhonemeSequence:
        return self._entries[word.lower()]

    def __contains__(self, word) -> bool:
        return isinstance(word, str) and word.lower() in self._entries

    def __iter__(self):
        return iter(self._entries)

    def __len__(self) -> int:
        return len(self._entries)


def _parse_phoneme(symbol: str, lineno: int) -> str:
    match = _STRESS.match(symbol)
    if not match or match.group(1) not in PHONEME_TO_ID:
        raise LexiconError(f"line {lineno}: unknown phoneme symbol {symbol!r}")
    return match.group(1)


def parse_lexicon(lines: Sequence[str]) -> Lexicon:
    entries = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith(";;;"):
            continue
        parts = line.split()
        if len(parts) < 2:
            raise LexiconError(f"line {lineno}: malformed entry {line!r}")
        word = parts[0]
        if _ALTERNATE.search(word):
            continue
        word = word.lower()
        if word in entries:
            continue
        entries[word] = PhonemeSequence(tuple(_parse_phoneme(p, lineno) for p in parts[1:]))
    return Lexicon(entries)


def load_lexicon(path) -> Lexicon:
    with open(path, encoding="utf-8") as fh:
        return parse_lexicon(fh.read().splitlines())


def default_lexicon() -> Lexicon:
    text = resources.files("phonmatch.resources").joinpath("lexicon.txt").read_text(encoding="utf-8")
    return parse_lexicon(text.splitlines())


def normalize_text(text: str) -> list:
    """Lower-case, strip punctuation, split on whitespace."""
    words = _NON_WORD.sub(" ", text.lower()).split()
    return [w.strip("'") for w in words if w.strip("'")]


def g2p_convert(text: str, lexicon: Lexicon) -> PhonemeSequence:
    words = normalize_text(text)
    if not words:
        raise ValueError(f"no pronounceable words in {text!r}")
    phonemes = []
    oov = []
    for word in words:
        if word in lexicon:
            phonemes.extend(lexicon[word])
            continue
        letters = [LETTER_TO_PHONEME[c] for c in word if c in LETTER_TO_PHONEME]
        if letters:
            oov.append(word)
            phonemes.extend(letters)
    if not phonemes:
        raise ValueError(f"no pronounceable words in {text!r}")
    return PhonemeSequence(tuple(phonemes), oov=tuple(oov))


def edit_distance(a: Sequence, b: Sequence) -> int:
    """Unit-cost Levenshtein distance (two-row dynamic programme)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        cur = [i]
        for j, y in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


def normalized_levenshtein(a: Sequence, b: Sequence) -> float:
    if len(a) == 0 or len(b) == 0:
        raise ValueError("normalized_levenshtein needs two non-empty sequences")
    return edit_distance(tuple(a), tuple(b)) / max(len(a), len(b))
