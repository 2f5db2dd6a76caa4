"""Creative caption generation with constraint enforcement.

Every (image, element, association, degree) combination yields one caption.
The association word is a hard constraint (retried, then fatal flag); the
length guidance is advisory (flagged, caption kept).
"""

import json
import re
import string
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import ImageRecord
from .gateway import Gateway, ModelRequest, vision_params
from .ladder import DEGREES, AssociationLadder
from .prompts import render
from .salience import SalientElement

MAX_WORDS = 10  # "fewer than 10 words": a 10-word caption is over length
REQUIRED_WORD_RETRIES = 2

FLAG_MISSING_WORD = "missing_required_word"
FLAG_OVER_LENGTH = "over_length"
FLAG_GENERATION_FAILED = "generation_failed"
FATAL_FLAGS = frozenset({FLAG_MISSING_WORD, FLAG_GENERATION_FAILED})


@dataclass(frozen=True)
class CreativeCaption:
    image_id: str
    element_surface: str
    association: str
    degree: int
    text: str
    word_count: int
    flags: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "flags", frozenset(self.flags))
        object.__setattr__(self, "degree", int(self.degree))
        if not self.text and FLAG_GENERATION_FAILED not in self.flags:
            raise ValueError("caption text must be non-empty")
        if self.degree not in {int(d) for d in DEGREES}:
            raise ValueError(f"degree out of range: {self.degree}")

    @property
    def admitted(self) -> bool:
        """Eligible for the final dataset: no fatal constraint violation."""
        return not (self.flags & FATAL_FLAGS)

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "element": self.element_surface,
            "association": self.association,
            "degree": self.degree,
            "caption": self.text,
            "flags": sorted(self.flags),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CreativeCaption":
        return cls(
            image_id=obj["image_id"],
            element_surface=obj["element"],
            association=obj["association"],
            degree=obj["degree"],
            text=obj["caption"],
            word_count=count_words(obj["caption"]),
            flags=frozenset(obj.get("flags", ())),
        )


def build_all_words(
    elements: Sequence[SalientElement],
    target_element: SalientElement,
    association: str,
) -> str:
    """Comma-joined salient words with the target's surface replaced by the
    association word."""
    if target_element not in elements:
        raise ValueError(
            f"target element {target_element.surface!r} not among the image's elements"
        )
    return ", ".join(
        association if element == target_element else element.surface
        for element in elements
    )


def count_words(text: str) -> int:
    """Whitespace tokens that are non-empty after stripping punctuation."""
    count = 0
    for token in text.split():
        if token.strip(string.punctuation):
            count += 1
    return count


def _contains_word(text: str, word: str) -> bool:
    # Lookarounds rather than \b so the required word may itself contain
    # hyphens or apostrophes and still match as one unit.
    pattern = rf"(?<!\w){re.escape(word)}(?!\w)"
    return re.search(pattern, text, re.IGNORECASE) is not None


def validate_caption(text: str, new_word: str) -> set[str]:
    """Constraint flags for a generated caption.

    The required-word check is a case-insensitive whole-word match (a
    possessive like "journey's" still matches "journey"); the word count is
    over whitespace tokens after stripping punctuation.
    """
    flags: set[str] = set()
    if not _contains_word(text, new_word):
        flags.add(FLAG_MISSING_WORD)
    if count_words(text) >= MAX_WORDS:
        flags.add(FLAG_OVER_LENGTH)
    return flags


def creative_caption_request(
    record: ImageRecord,
    elements: Sequence[SalientElement],
    target_element: SalientElement,
    association: str,
    degree: int,
    backend_id: str,
    attempt: int = 0,
) -> ModelRequest:
    prompt = render(
        "creative_caption",
        {
            "all_words": build_all_words(elements, target_element, association),
            "level": str(int(degree)),
            "new_word": association,
        },
    )
    if attempt:
        # Content-addressed caching would replay the failed answer verbatim;
        # the retry marker makes each reprompt a distinct logical request.
        prompt += f"\n\n(attempt {attempt})"
    return ModelRequest(
        backend_id=backend_id,
        prompt=prompt,
        image_uri=record.image_uri,
        params=vision_params(),
    )


def generate_creative_caption(
    record: ImageRecord,
    elements: Sequence[SalientElement],
    target_element: SalientElement,
    association: str,
    degree: int,
    gateway: Gateway,
    retries: int = REQUIRED_WORD_RETRIES,
) -> CreativeCaption:
    """One validated caption; the required-word check is retried up to
    ``retries`` times and any surviving violation is flagged."""
    text = ""
    flags: set[str] = set()
    for attempt in range(retries + 1):
        request = creative_caption_request(
            record, elements, target_element, association, degree,
            gateway.backend.backend_id, attempt,
        )
        response = gateway.one(request)
        if not response.ok or not response.text.strip():
            return CreativeCaption(
                image_id=record.image_id,
                element_surface=target_element.surface,
                association=association,
                degree=degree,
                text="",
                word_count=0,
                flags=frozenset({FLAG_GENERATION_FAILED}),
            )
        text = response.text.strip()
        flags = validate_caption(text, association)
        if FLAG_MISSING_WORD not in flags:
            break
    return CreativeCaption(
        image_id=record.image_id,
        element_surface=target_element.surface,
        association=association,
        degree=degree,
        text=text,
        word_count=count_words(text),
        flags=frozenset(flags),
    )


def forge_captions(
    record: ImageRecord,
    ladders: Sequence[AssociationLadder],
    gateway: Gateway,
    retries: int = REQUIRED_WORD_RETRIES,
) -> list[CreativeCaption]:
    """All captions for one image: |elements| x 5 degrees x 3 associations,
    in element, degree, rung order."""
    elements = [ladder.element for ladder in ladders]
    captions: list[CreativeCaption] = []
    for ladder in ladders:
        for degree in DEGREES:
            for association in ladder.associations(degree):
                captions.append(
                    generate_creative_caption(
                        record, elements, ladder.element, association,
                        int(degree), gateway, retries,
                    )
                )
    return captions


def save_captions(captions: Iterable[CreativeCaption], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for caption in captions:
            fh.write(json.dumps(caption.to_json(), ensure_ascii=False) + "\n")


def load_captions(path) -> list[CreativeCaption]:
    captions = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                captions.append(CreativeCaption.from_json(json.loads(line)))
    return captions
