"""Chinese modeling units: initial/final with tone, syllable with tone, character.

A character transcript converts into one of three token inventories. The
initial/final rendering appends a `#` separator after every character so
token runs stay aligned to characters (zero-initial syllables emit the
final-with-tone token alone before their `#`). The packaged lexicon is a
plain TSV so no third-party pinyin dependency is needed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from importlib import resources

from .errors import OovError

BLANK_TOKEN = "<blank>"
BLANK_ID = 0
SEPARATOR = "#"
TONE_DIGITS = "12345"


class ModelingUnit(enum.Enum):
    INITIAL_FINAL_TONE = "initial_final_tone"
    SYLLABLE_TONE = "syllable_tone"
    CHARACTER = "character"

    @property
    def needs_lexicon(self) -> bool:
        return self is not ModelingUnit.CHARACTER

    @property
    def max_label_len(self) -> int:
        return 119 if self is ModelingUnit.INITIAL_FINAL_TONE else 40

    @classmethod
    def parse(cls, name: str) -> "ModelingUnit":
        try:
            return cls(name)
        except ValueError:
            choices = ", ".join(u.value for u in cls)
            raise ValueError(f"unknown modeling unit {name!r}; choose from {choices}")


class Lexicon:
    """Character -> syllable-with-tone map plus per-syllable initial/final split."""

    def __init__(self, char_to_syllable, syllable_split):
        self._char_to_syllable = dict(char_to_syllable)
        self._syllable_split = dict(syllable_split)

    @classmethod
    def from_tsv(cls, path) -> "Lexicon":
        """Rows: character, syllable with tone digit, initial, bare final."""
        char_to_syllable = {}
        syllable_split = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 TSV columns")
                char, syllable, initial, final = parts
                if syllable[-1] not in TONE_DIGITS:
                    raise ValueError(
                        f"{path}:{lineno}: syllable {syllable!r} lacks a tone digit"
                    )
                char_to_syllable.setdefault(char, syllable)
                syllable_split[syllable] = (initial, final)
        return cls(char_to_syllable, syllable_split)

    @classmethod
    def default(cls) -> "Lexicon":
        with resources.as_file(
            resources.files("ttasr.data").joinpath("lexicon.tsv")
        ) as path:
            return cls.from_tsv(path)

    def __contains__(self, char: str) -> bool:
        return char in self._char_to_syllable

    def syllable(self, char: str) -> str:
        return self._char_to_syllable[char]

    def split(self, syllable: str) -> tuple[str, str]:
        """Return (initial, final-with-tone); initial is '' for zero-initial."""
        initial, final = self._syllable_split[syllable]
        return initial, final + syllable[-1]


def to_units(text: str, unit: ModelingUnit, lexicon: Lexicon | None = None) -> list[str]:
    """Convert a character transcript into unit tokens.

    Character mode needs no lexicon; both syllable modes raise OovError
    (with the character and its offset) on lexicon gaps.
    """
    if unit is ModelingUnit.CHARACTER:
        return list(text)
    if lexicon is None:
        raise ValueError(f"{unit.value} conversion requires a lexicon")
    tokens: list[str] = []
    for offset, char in enumerate(text):
        if char not in lexicon:
            raise OovError(char, offset)
        syllable = lexicon.syllable(char)
        if unit is ModelingUnit.SYLLABLE_TONE:
            tokens.append(syllable)
        else:
            initial, final_tone = lexicon.split(syllable)
            if initial:
                tokens.append(initial)
            tokens.append(final_tone)
            tokens.append(SEPARATOR)
    return tokens


@dataclass(frozen=True)
class Vocabulary:
    """Dense token ids with the blank fixed at id 0."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens or self.tokens[0] != BLANK_TOKEN:
            raise ValueError(f"token 0 must be {BLANK_TOKEN!r}")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        object.__setattr__(
            self, "_ids", {tok: i for i, tok in enumerate(self.tokens)}
        )

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(f"token {token!r} not in vocabulary")

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh if line.rstrip("\n")]
        return cls(tuple(tokens))


@dataclass(frozen=True)
class TokenSequence:
    """Label ids (never blank) under one modeling unit."""

    ids: tuple[int, ...]
    unit: ModelingUnit

    def __post_init__(self):
        if any(i < 1 for i in self.ids):
            raise ValueError("label sequences may not contain the blank id 0")
        if len(self.ids) > self.unit.max_label_len:
            raise ValueError(
                f"label length {len(self.ids)} exceeds the "
                f"{self.unit.max_label_len}-token cap for {self.unit.value}"
            )

    def __len__(self) -> int:
        return len(self.ids)


def build_vocabulary(corpus, unit: ModelingUnit, lexicon: Lexicon | None = None) -> Vocabulary:
    """Blank plus all distinct unit tokens of the corpus, in first-seen order."""
    tokens = [BLANK_TOKEN]
    seen = {BLANK_TOKEN}
    empty = True
    for text in corpus:
        empty = False
        for token in to_units(text, unit, lexicon):
            if token not in seen:
                seen.add(token)
                tokens.append(token)
    if empty:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    return Vocabulary(tuple(tokens))


def encode(
    text: str,
    unit: ModelingUnit,
    vocab: Vocabulary,
    lexicon: Lexicon | None = None,
) -> TokenSequence:
    ids = tuple(vocab.id_of(tok) for tok in to_units(text, unit, lexicon))
    return TokenSequence(ids=ids, unit=unit)


def decode(ids, vocab: Vocabulary) -> list[str]:
    """Map label ids back to token strings; the blank id is not a label."""
    out = []
    for i in ids:
        if i == BLANK_ID:
            raise ValueError("blank id 0 is not a label token")
        out.append(vocab.token_of(i))
    return out


def default_phrases() -> list[str]:
    """Built-in short phrases fully covered by the packaged lexicon."""
    text = resources.files("ttasr.data").joinpath("phrases.txt").read_text("utf-8")
    return [line for line in text.splitlines() if line]
