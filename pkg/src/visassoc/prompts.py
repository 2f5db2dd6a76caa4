"""Prompt templates for every model call, rendered byte-for-byte.

Template bodies are frozen contracts: tests pin them against golden files
under tests/data/golden/.  ``render`` substitutes ``{name}`` placeholders and
refuses to render with any placeholder unbound; it never introduces extra
whitespace.
"""

import re
from typing import Mapping


class PromptError(Exception):
    """Unknown template or unbound placeholder."""


DETAILED_CAPTION = (
    "USER: <image> Please generate a detailed caption of this image. ASSISTANT:"
)

MINE_ASSOCIATIONS = """For a given list of words, generate a new list for each word using the same part of speech. The words should follow a semantic abstraction scale where degrees increase from near-synonyms to abstract concepts.

Approach:

1. Degree 1 – Near Synonyms: Close in meaning or form (e.g., Ball → Sphere).

2. Degree 2 – Slight Abstraction: Slightly broader category (e.g., Ball → Toy).

3. Degree 3 – Broader Context: Indirectly linked through situational and emotional context (e.g., Ball → Game).

4. Degree 4 – Conceptual Association: More abstract or theme-related (e.g., Ball → Competition).

5. Degree 5 – Full Abstraction: Highly abstract or metaphorical (e.g., Ball → Journey).

Generate three words each for degrees 1 to 5. Generated words should fit into the overall emotional and situational context of this context caption: {context_caption}.

Generated words, when replaced with the original word in this short caption {original_caption}, should be semantically correct.

Do not generate the original word in the new generations.

Output format: Use JSON. The key is the original word, and the value is a dictionary with degrees as keys and lists of generated words as values."""

CREATIVE_CAPTION = """USER: <image>
Write a short caption grounded in this image and semantically correct, using fewer than 10 words. Choose some or all of these words: {all_words} to best represent the image.

Steer the caption's style toward the abstraction level _{level}_ following these rules:

- Degree 1 – Near Synonyms: Close in meaning to the original image
- Degree 2 – Slight Abstraction: Slightly more abstract than the image
- Degree 3 – Broader Context: Indirectly linked through situational or emotional context
- Degree 4 – Conceptual Association: More abstract, theme-related to the image
- Degree 5 – Full Abstraction: Highly abstract or metaphorical

The caption MUST include the word: {new_word}.

ASSISTANT:"""

ERROR_ANALYSIS = (
    "{captions} For this image count the number of errors for each sentence "
    "where errors are mistakes that significantly alter meaning of the image. "
    "Abstract elements are not errors if they do not alter the meaning of the "
    "image. Give an explanation for each sentence's score."
)

TEMPLATES: dict[str, str] = {
    "detailed_caption": DETAILED_CAPTION,
    "mine_associations": MINE_ASSOCIATIONS,
    "creative_caption": CREATIVE_CAPTION,
    "error_analysis": ERROR_ANALYSIS,
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z_]+)\}")


def placeholders(template_id: str) -> tuple[str, ...]:
    """Placeholder names of a template, in order of first appearance."""
    body = _template(template_id)
    seen: list[str] = []
    for match in _PLACEHOLDER_RE.finditer(body):
        if match.group(1) not in seen:
            seen.append(match.group(1))
    return tuple(seen)


def render(template_id: str, bindings: Mapping[str, str] | None = None) -> str:
    """Template body with all ``{name}`` placeholders substituted.

    Raises PromptError naming the first unbound placeholder.  Bindings the
    template does not use are ignored.
    """
    body = _template(template_id)
    bindings = bindings or {}

    def substitute(match: re.Match) -> str:
        name = match.group(1)
        if name not in bindings:
            raise PromptError(
                f"unbound placeholder {{{name}}} in template {template_id!r}"
            )
        return str(bindings[name])

    return _PLACEHOLDER_RE.sub(substitute, body)


def _template(template_id: str) -> str:
    try:
        return TEMPLATES[template_id]
    except KeyError:
        raise PromptError(f"unknown template {template_id!r}") from None
