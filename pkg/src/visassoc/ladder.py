"""Association ladders: detailed captioning and per-element association mining
at five degrees of abstraction, with strict parsing and validation of model
output.

A valid ladder holds exactly three associations for every degree 1..5, none
of which echo the element itself.  Invalid model output earns one repair
reprompt (the diagnostics appended to the original prompt); after that the
element is dropped with a recorded reason.
"""

import dataclasses
import enum
import json
import re
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .corpus import ImageRecord
from .gateway import Gateway, ModelRequest, text_params, vision_params
from .prompts import render
from .salience import SalientElement


class AbstractionDegree(enum.IntEnum):
    NEAR_SYNONYMS = 1
    SLIGHT_ABSTRACTION = 2
    BROADER_CONTEXT = 3
    CONCEPTUAL_ASSOCIATION = 4
    FULL_ABSTRACTION = 5

    @property
    def label(self) -> str:
        return self.name.lower()


DEGREES = tuple(AbstractionDegree)
RUNG_SIZE = 3

_FENCE_RE = re.compile(r"^```[a-zA-Z]*\s*\n(.*)\n```\s*$", re.DOTALL)
_DEGREE_KEY_RE = re.compile(r"(?:degree)?[\s_]*([1-5])")


@dataclass(frozen=True)
class Diagnostic:
    """One validation problem in mined-ladder output."""

    kind: str  # non_json | missing_word | missing_degree | wrong_arity
    #            | bad_entry | original_word_echo | gateway_error
    word: str | None = None
    degree: int | None = None
    detail: str | None = None

    def __str__(self) -> str:
        parts = [self.kind]
        if self.word is not None:
            parts.append(f"word={self.word}")
        if self.degree is not None:
            parts.append(f"degree={self.degree}")
        if self.detail:
            parts.append(self.detail)
        return " ".join(parts)


def normalize_association(text: str) -> str:
    """Lowercased, whitespace-collapsed canonical form."""
    return " ".join(text.lower().split())


def validate_rungs(
    element_surface: str, rungs: Mapping[int, Sequence[str]]
) -> list[Diagnostic]:
    """Diagnostics for every violated ladder invariant; empty means valid."""
    diagnostics: list[Diagnostic] = []
    surface = element_surface.lower()
    for degree in DEGREES:
        entries = rungs.get(int(degree))
        if entries is None:
            diagnostics.append(Diagnostic("missing_degree", surface, int(degree)))
            continue
        if len(entries) != RUNG_SIZE:
            diagnostics.append(
                Diagnostic(
                    "wrong_arity",
                    surface,
                    int(degree),
                    f"expected {RUNG_SIZE} entries, got {len(entries)}",
                )
            )
            continue
        for entry in entries:
            if not isinstance(entry, str) or not entry.strip():
                diagnostics.append(
                    Diagnostic("bad_entry", surface, int(degree), repr(entry))
                )
            elif normalize_association(entry) == surface:
                diagnostics.append(
                    Diagnostic("original_word_echo", surface, int(degree))
                )
    return diagnostics


@dataclass(frozen=True)
class AssociationLadder:
    """Per-element map from degree 1..5 to exactly three association strings."""

    image_id: str
    element: SalientElement
    rungs: Mapping[int, tuple[str, ...]]

    def __post_init__(self):
        normalized = {
            int(degree): tuple(normalize_association(e) for e in entries)
            for degree, entries in self.rungs.items()
        }
        problems = validate_rungs(self.element.surface, normalized)
        if problems:
            raise ValueError(
                f"invalid ladder for {self.element.surface!r}: "
                + "; ".join(str(p) for p in problems)
            )
        object.__setattr__(self, "rungs", normalized)

    def associations(self, degree: int | AbstractionDegree) -> tuple[str, ...]:
        return self.rungs[int(degree)]

    def to_json(self) -> dict:
        obj = {"image_id": self.image_id}
        obj.update(self.element.to_json())
        obj["rungs"] = {str(int(d)): list(self.rungs[int(d)]) for d in DEGREES}
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "AssociationLadder":
        return cls(
            image_id=obj["image_id"],
            element=SalientElement.from_json(obj),
            rungs={int(k): tuple(v) for k, v in obj["rungs"].items()},
        )


def _strip_fences(raw: str) -> str:
    stripped = raw.strip()
    match = _FENCE_RE.match(stripped)
    return match.group(1) if match else stripped


def _degree_from_key(key: str) -> int | None:
    match = _DEGREE_KEY_RE.fullmatch(key.strip().lower())
    return int(match.group(1)) if match else None


def parse_ladder_json(
    raw: str, elements: Sequence[SalientElement]
) -> tuple[dict[str, dict[int, list[str]]], list[Diagnostic]]:
    """Strict parse of ``{word: {degree: [w, w, w]}}`` model output.

    Tolerates code-fence wrapping and degree keys spelled "1", "Degree 1", or
    "degree_1"; anything else is a diagnostic.  Returns rungs only for
    elements that parsed and validated cleanly, plus diagnostics for the rest.
    """
    try:
        payload = json.loads(_strip_fences(raw))
    except json.JSONDecodeError as exc:
        return {}, [Diagnostic("non_json", detail=exc.msg)]
    if not isinstance(payload, dict):
        return {}, [Diagnostic("non_json", detail="top-level value is not an object")]

    by_word = {str(key).strip().lower(): value for key, value in payload.items()}
    parsed: dict[str, dict[int, list[str]]] = {}
    diagnostics: list[Diagnostic] = []
    for element in elements:
        surface = element.surface
        entry = by_word.get(surface)
        if entry is None:
            diagnostics.append(Diagnostic("missing_word", surface))
            continue
        if not isinstance(entry, dict):
            diagnostics.append(
                Diagnostic("missing_degree", surface, detail="value is not an object")
            )
            continue
        rungs: dict[int, list] = {}
        for key, value in entry.items():
            degree = _degree_from_key(str(key))
            if degree is None:
                continue
            rungs[degree] = value if isinstance(value, list) else [value]
        problems = validate_rungs(surface, rungs)
        if problems:
            diagnostics.extend(problems)
        else:
            parsed[surface] = {
                degree: [normalize_association(e) for e in entries]
                for degree, entries in rungs.items()
            }
    return parsed, diagnostics


def detailed_caption_request(record: ImageRecord, backend_id: str) -> ModelRequest:
    return ModelRequest(
        backend_id=backend_id,
        prompt=render("detailed_caption"),
        image_uri=record.image_uri,
        params=vision_params(),
    )


def apply_detailed_caption(record: ImageRecord, response) -> ImageRecord:
    """Fold a captioning response into the record; failure flags it."""
    if not response.ok or not response.text.strip():
        return dataclasses.replace(record, skip_reason="caption_failed")
    return dataclasses.replace(
        record, detailed_caption=response.text.strip(), skip_reason=None
    )


def generate_detailed_caption(
    record: ImageRecord, gateway: Gateway, overwrite: bool = False
) -> ImageRecord:
    """Record with its detailed caption set; skipped when already present and
    ``overwrite`` is false.  Gateway failure flags the record instead of
    raising."""
    if record.detailed_caption and not overwrite:
        return record
    response = gateway.one(
        detailed_caption_request(record, gateway.backend.backend_id)
    )
    return apply_detailed_caption(record, response)


def mining_request(
    record: ImageRecord,
    elements: Sequence[SalientElement],
    backend_id: str,
) -> ModelRequest:
    """Association-mining request: the rendered rubric plus the word list.

    The rubric prompt carries the scene context; the words to expand ride
    after it since the template itself has no word-list slot.
    """
    rendered = render(
        "mine_associations",
        {
            "context_caption": record.detailed_caption or "",
            "original_caption": record.short_caption,
        },
    )
    words = ", ".join(element.surface for element in elements)
    return ModelRequest(
        backend_id=backend_id,
        prompt=f"{rendered}\n\nWords: {words}",
        params=text_params(),
    )


def repair_request(original: ModelRequest, problems: Sequence[Diagnostic]) -> ModelRequest:
    lines = "\n".join(f"- {p}" for p in problems)
    return dataclasses.replace(
        original,
        prompt=f"{original.prompt}\n\nYour previous output was invalid:\n{lines}\n"
        "Regenerate the JSON fixing these problems.",
    )


def mine_associations(
    record: ImageRecord,
    elements: Sequence[SalientElement],
    gateway: Gateway,
) -> tuple[list[AssociationLadder], dict[str, list[Diagnostic]]]:
    """One validated ladder per element, plus per-element failure diagnostics
    for anything that survived neither the first pass nor the single repair
    reprompt."""
    if not record.detailed_caption:
        raise ValueError(f"record {record.image_id!r} has no detailed caption")
    if not elements:
        raise ValueError("elements must be non-empty")

    request = mining_request(record, elements, gateway.backend.backend_id)
    response = gateway.one(request)
    if not response.ok:
        failure = [Diagnostic("gateway_error", detail=response.error)]
        return [], {e.surface: failure for e in elements}

    parsed, diagnostics = parse_ladder_json(response.text, elements)
    failures: dict[str, list[Diagnostic]] = {}
    missing = [e for e in elements if e.surface not in parsed]
    if missing:
        repair = repair_request(request, diagnostics)
        repair_response = gateway.one(repair)
        if repair_response.ok:
            repaired, repair_diags = parse_ladder_json(repair_response.text, missing)
            parsed.update(repaired)
            for element in missing:
                if element.surface not in parsed:
                    failures[element.surface] = [
                        d for d in repair_diags if d.word in (element.surface, None)
                    ] or [Diagnostic("missing_word", element.surface)]
        else:
            for element in missing:
                failures[element.surface] = [
                    Diagnostic("gateway_error", detail=repair_response.error)
                ]

    ladders = [
        AssociationLadder(record.image_id, element, parsed[element.surface])
        for element in elements
        if element.surface in parsed
    ]
    return ladders, failures


def save_ladders(ladders: Iterable[AssociationLadder], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ladder in ladders:
            fh.write(json.dumps(ladder.to_json(), ensure_ascii=False) + "\n")


def load_ladders(path) -> list[AssociationLadder]:
    ladders = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                ladders.append(AssociationLadder.from_json(json.loads(line)))
    return ladders
