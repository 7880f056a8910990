"""Heuristic caption rewriting for synthetic pairs.

Turning "a blue plate holding a frosted cake and knife" into "a plate holding
a pizza and knife" takes three passes: drop color words anywhere in the
caption, drop adjectives/nouns that sit within a small token radius of the
word being replaced (its stale description), then swap the candidate word for
the novel word while keeping grammatical number.

Tagging is lexicon-based rather than statistical: adjective/noun word lists
ship with the package and can be overridden, which keeps the rewrite
deterministic and auditable.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Sequence

from .dataset import find_mention_spans
from .errors import RewriteError
from .lexicon import ObjectClass, RewriteLexicons, pluralize


class Tag(str, Enum):
    ADJ = "ADJ"
    NOUN = "NOUN"
    OTHER = "OTHER"


@dataclass(frozen=True)
class RewriteConfig:
    """Token radii around the replaced word inside which stale words are dropped."""

    adjective_radius: int = 2
    noun_radius: int = 1

    def __post_init__(self):
        if self.adjective_radius < 0 or self.noun_radius < 0:
            raise ValueError("radii must be >= 0")


def tag_tokens(tokens: Sequence[str], lexicons: RewriteLexicons) -> list[Tag]:
    """Tag each token ADJ / NOUN / OTHER by lexicon membership (ADJ wins ties)."""
    tags = []
    for token in tokens:
        if token in lexicons.adjectives:
            tags.append(Tag.ADJ)
        elif token in lexicons.nouns:
            tags.append(Tag.NOUN)
        else:
            tags.append(Tag.OTHER)
    return tags


def _replacement_form(matched_form: str, candidate: ObjectClass, novel: ObjectClass,
                      lexicons: RewriteLexicons) -> list[str]:
    if candidate.is_plural_form(matched_form, lexicons.irregular_plurals):
        return pluralize(novel.name, lexicons.irregular_plurals).split()
    return novel.name.split()


def rewrite_caption(
    tokens: Sequence[str],
    candidate_class: ObjectClass,
    novel_class: ObjectClass,
    lexicons: RewriteLexicons,
    config: RewriteConfig = RewriteConfig(),
) -> list[str]:
    """Rewrite a caption of the candidate object into one of the novel object.

    Every occurrence of a candidate mention word is replaced (number
    preserved); color words are removed everywhere; adjectives within
    ``adjective_radius`` and nouns within ``noun_radius`` token positions of a
    candidate occurrence are removed.  Radii are measured on the caption after
    color removal, which happens first.  Raises :class:`RewriteError` when the
    caption never mentions the candidate class.
    """
    tokens = [t.lower() for t in tokens]
    spans = find_mention_spans(tokens, candidate_class)
    if not spans:
        raise RewriteError(
            f"caption does not mention candidate class {candidate_class.name!r}: "
            f"{' '.join(tokens)!r}")

    anchored = set()
    for start, end, _ in spans:
        anchored.update(range(start, end))

    # Pass 1: color removal everywhere except inside candidate mentions.
    kept: list[tuple[str, int | None]] = []  # (token, span index or None)
    span_of = {}
    for idx, (start, end, _) in enumerate(spans):
        for pos in range(start, end):
            span_of[pos] = idx
    for pos, token in enumerate(tokens):
        if pos not in anchored and token in lexicons.color_words:
            continue
        kept.append((token, span_of.get(pos)))

    # Locate candidate spans on the color-free sequence.
    color_free = [t for t, _ in kept]
    span_positions: dict[int, list[int]] = {}
    for pos, (_, idx) in enumerate(kept):
        if idx is not None:
            span_positions.setdefault(idx, []).append(pos)

    def distance_to_nearest_span(pos: int) -> int:
        best = None
        for positions in span_positions.values():
            lo, hi = positions[0], positions[-1]
            d = lo - pos if pos < lo else (pos - hi if pos > hi else 0)
            if best is None or d < best:
                best = d
        return best

    # Pass 2: radius-based adjective/noun removal around each occurrence.
    tags = tag_tokens(color_free, lexicons)
    in_span = {p for positions in span_positions.values() for p in positions}
    out: list[str] = []
    emitted_span: set[int] = set()
    for pos, (token, idx) in enumerate(kept):
        if pos in in_span:
            if idx not in emitted_span:
                emitted_span.add(idx)
                matched_form = spans[idx][2]
                out.extend(_replacement_form(matched_form, candidate_class,
                                             novel_class, lexicons))
            continue
        d = distance_to_nearest_span(pos)
        if tags[pos] is Tag.ADJ and d <= config.adjective_radius:
            continue
        if tags[pos] is Tag.NOUN and d <= config.noun_radius:
            continue
        out.append(token)
    return out
