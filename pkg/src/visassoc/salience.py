"""Salient visual elements: content words gated by a concreteness lexicon.

A salient element is a noun, verb, or adjective from the short caption whose
concreteness rating meets the threshold.  Part-of-speech annotation is an
injected interface: either pre-tagged sidecar files or the built-in
dictionary tagger.
"""

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, NamedTuple

CONTENT_POS = ("noun", "verb", "adjective")

COARSE_TAGS = frozenset(
    CONTENT_POS
    + (
        "adverb",
        "pronoun",
        "determiner",
        "adposition",
        "conjunction",
        "numeral",
        "particle",
        "interjection",
        "other",
    )
)

_TOKEN_RE = re.compile(r"[A-Za-z0-9]+(?:['’-][A-Za-z0-9]+)*")


@dataclass(frozen=True)
class SalientElement:
    surface: str
    pos: str
    concreteness: float
    offset: int

    def __post_init__(self):
        if self.pos not in CONTENT_POS:
            raise ValueError(f"pos must be one of {CONTENT_POS}, got {self.pos!r}")
        if not 1.0 <= self.concreteness <= 5.0:
            raise ValueError(f"concreteness out of range: {self.concreteness}")

    def to_json(self) -> dict:
        return {
            "element": self.surface,
            "pos": self.pos,
            "concreteness": self.concreteness,
            "offset": self.offset,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SalientElement":
        return cls(
            surface=obj["element"],
            pos=obj["pos"],
            concreteness=obj["concreteness"],
            offset=obj["offset"],
        )


class ConcretenessLexicon:
    """Word -> concreteness rating in [1, 5]; lookups are case-insensitive."""

    def __init__(self, entries: Mapping[str, float]):
        self._entries: dict[str, float] = {}
        for word, rating in entries.items():
            rating = float(rating)
            if not 1.0 <= rating <= 5.0:
                raise ValueError(f"rating for {word!r} out of [1, 5]: {rating}")
            self._entries[word.lower()] = rating

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, word: str) -> bool:
        return word.lower() in self._entries

    def get(self, word: str) -> float | None:
        """Rating for ``word``, or None when the word is unrated."""
        return self._entries.get(word.lower())

    @classmethod
    def from_tsv(cls, path: str | Path) -> "ConcretenessLexicon":
        """Load a tab-separated norm release: one header line, word in the
        first column, rating in the second (or in a ``Conc.M`` column when the
        header names one)."""
        entries: dict[str, float] = {}
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            rating_col = header.index("Conc.M") if "Conc.M" in header else 1
            for lineno, line in enumerate(fh, start=2):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) <= rating_col:
                    raise ValueError(f"{path}:{lineno}: too few columns")
                entries[parts[0]] = float(parts[rating_col])
        return cls(entries)


class TokenTag(NamedTuple):
    text: str
    pos: str
    offset: int


@dataclass(frozen=True)
class PosAnnotation:
    """Ordered (token, coarse tag, character offset) triples for one caption."""

    tokens: tuple[TokenTag, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "tokens", tuple(TokenTag(*t) for t in self.tokens)
        )
        last = -1
        for token in self.tokens:
            if token.pos not in COARSE_TAGS:
                raise ValueError(f"unknown coarse tag {token.pos!r}")
            if token.offset <= last:
                raise ValueError("token offsets must be strictly increasing")
            last = token.offset


def tokenize(text: str) -> list[tuple[str, int]]:
    """Word tokens with character offsets; apostrophes and hyphens are
    internal characters."""
    return [(m.group(0), m.start()) for m in _TOKEN_RE.finditer(text)]


# Function words and a starter set of very common content tags; anything
# unlisted falls back to "noun".
_BUILTIN_TAGS: dict[str, str] = {}
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "a an the this that these those some any each every no another".split(),
        "determiner",
    )
)
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "of on in at by with from to into over under near between through "
        "across against around behind beside above below during before after "
        "off onto up down out for about as".split(),
        "adposition",
    )
)
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "i you he she it we they him her them his hers its their our my your "
        "who which what something someone".split(),
        "pronoun",
    )
)
_BUILTIN_TAGS.update(dict.fromkeys("and or but nor so yet while".split(), "conjunction"))
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "is are was were be been being am has have had do does did will would "
        "can could may might shall should must".split(),
        "verb",
    )
)
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "sitting standing walking running playing holding riding eating "
        "flying looking wearing jumping sleeping driving surfing skiing "
        "reading talking smiling waiting resting grazing parked covered "
        "filled".split(),
        "verb",
    )
)
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "red blue green yellow white black brown orange purple pink gray "
        "grey small large big little old young new tall short long wide "
        "open closed empty full dark bright wooden sandy snowy rainy sunny".split(),
        "adjective",
    )
)
_BUILTIN_TAGS.update(
    dict.fromkeys("not very too also just only there here now then".split(), "adverb"),
)
_BUILTIN_TAGS.update(
    dict.fromkeys(
        "one two three four five six seven eight nine ten".split(), "numeral"
    )
)


class LexiconTagger:
    """Dictionary tagger with noun fallback; ``overrides`` extend or replace
    the built-in tag table (useful for fixtures and domain tweaks)."""

    def __init__(self, overrides: Mapping[str, str] | None = None):
        self._tags = dict(_BUILTIN_TAGS)
        if overrides:
            for word, tag in overrides.items():
                if tag not in COARSE_TAGS:
                    raise ValueError(f"unknown coarse tag {tag!r} for {word!r}")
                self._tags[word.lower()] = tag

    def annotate(self, caption: str) -> PosAnnotation:
        tokens = [
            TokenTag(text, self._tags.get(text.lower(), "noun"), offset)
            for text, offset in tokenize(caption)
        ]
        return PosAnnotation(tuple(tokens))


class SidecarTagger:
    """Pre-tagged captions from a JSONL sidecar of
    ``{image_id, tokens: [{t, pos, off}]}``."""

    def __init__(self, annotations: Mapping[str, PosAnnotation]):
        self._annotations = dict(annotations)

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "SidecarTagger":
        annotations: dict[str, PosAnnotation] = {}
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
                tokens = tuple(
                    TokenTag(t["t"], t["pos"], t["off"]) for t in obj["tokens"]
                )
                annotations[str(obj["image_id"])] = PosAnnotation(tokens)
        return cls(annotations)

    def annotate(self, image_id: str) -> PosAnnotation:
        try:
            return self._annotations[image_id]
        except KeyError:
            raise KeyError(f"no pre-tagged tokens for image {image_id!r}") from None


def extract_salient_elements(
    short_caption: str,
    annotation: PosAnnotation,
    lexicon: ConcretenessLexicon,
    threshold: float = 3.0,
) -> list[SalientElement]:
    """Nouns, verbs, and adjectives rated at or above ``threshold``.

    Unrated words are excluded.  Duplicates collapse to the first occurrence;
    output preserves caption order.
    """
    if not 1.0 <= threshold <= 5.0:
        raise ValueError(f"threshold out of [1, 5]: {threshold}")
    for token in annotation.tokens:
        end = token.offset + len(token.text)
        if short_caption[token.offset:end] != token.text:
            raise ValueError(
                f"annotation does not cover caption at offset {token.offset}"
            )
    elements: list[SalientElement] = []
    seen: set[str] = set()
    for token in annotation.tokens:
        if token.pos not in CONTENT_POS:
            continue
        surface = token.text.lower()
        rating = lexicon.get(surface)
        if rating is None or rating < threshold:
            continue
        if surface in seen:
            continue
        seen.add(surface)
        elements.append(SalientElement(surface, token.pos, rating, token.offset))
    return elements
