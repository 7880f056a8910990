"""Candidate-object ranking for replacement.

For a held-out class, candidate in-domain classes are ranked by how often a
baseline captioner mentions them when describing validation images that
contain the held-out object.  A mention counts once per caption, so
repetitive decoding cannot inflate a class.  A static candidate mapping can
be supplied instead to bypass counting entirely.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .dataset import CaptionRecord, caption_mentions
from .lexicon import ObjectClass, ObjectLexicon

logger = logging.getLogger(__name__)


@dataclass
class CandidateRanking:
    novel_class: ObjectClass
    counts: dict[str, int]
    selected: list[ObjectClass]


def count_candidate_occurrences(
    generated_captions: Iterable[CaptionRecord | Sequence[str]],
    in_domain_classes: Sequence[ObjectClass],
) -> dict[ObjectClass, int]:
    """Count, per in-domain class, the captions that mention it (once per caption)."""
    counts = {cls: 0 for cls in in_domain_classes}
    for caption in generated_captions:
        for cls in in_domain_classes:
            if caption_mentions(caption, cls):
                counts[cls] += 1
    return counts


def select_candidates(
    counts: Mapping[ObjectClass, int],
    m: int,
    bbox_filter: bool = True,
) -> list[ObjectClass]:
    """Top-m classes by count; classes without box annotations are dropped when
    ``bbox_filter`` is set, zero counts never qualify, ties break alphabetically."""
    if m < 1:
        raise ValueError("m must be >= 1")
    eligible = [
        (cls, n) for cls, n in counts.items()
        if n > 0 and (cls.has_bbox_annotations or not bbox_filter)
    ]
    if not eligible:
        logger.warning("no candidate class has a positive mention count")
        return []
    eligible.sort(key=lambda item: (-item[1], item[0].name))
    return [cls for cls, _ in eligible[:m]]


def rank_candidates(
    novel_class: ObjectClass,
    generated_captions: Iterable[CaptionRecord | Sequence[str]],
    in_domain_classes: Sequence[ObjectClass],
    m: int = 3,
    bbox_filter: bool = True,
) -> CandidateRanking:
    counts = count_candidate_occurrences(generated_captions, in_domain_classes)
    selected = select_candidates(counts, m, bbox_filter)
    return CandidateRanking(
        novel_class=novel_class,
        counts={cls.name: n for cls, n in sorted(counts.items(), key=lambda kv: kv[0].name)},
        selected=selected,
    )


def write_candidate_mapping(rankings: Iterable[CandidateRanking], path: str | Path) -> None:
    """Persist ``{novel_class: [candidate, ...]}`` as JSON."""
    payload = {r.novel_class.name: [c.name for c in r.selected] for r in rankings}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def read_candidate_mapping(
    path: str | Path, lexicon: ObjectLexicon, register_missing: bool = False,
) -> dict[str, list[ObjectClass]]:
    """Load a static candidate mapping, resolving names through the lexicon.

    With ``register_missing`` unknown candidate names gain default lexicon
    entries instead of raising (useful before any annotations are loaded).
    """
    with open(path, encoding="utf-8") as f:
        payload = json.load(f)
    mapping: dict[str, list[ObjectClass]] = {}
    for novel_name, candidate_names in payload.items():
        novel = lexicon.get(novel_name)
        if novel is None:
            raise ValueError(f"unknown novel class {novel_name!r} in candidate mapping")
        candidates = []
        for name in candidate_names:
            cls = lexicon.get(name)
            if cls is None and register_missing:
                cls = lexicon.ensure(name)
            if cls is None:
                raise ValueError(f"unknown candidate class {name!r} in candidate mapping")
            candidates.append(cls)
        mapping[novel.name] = candidates
    return mapping


def quota_per_pair(k: int, m: int) -> int:
    """Synthetic-image quota for one novel-candidate class pair."""
    if k < m or m < 1:
        raise ValueError("need K >= m >= 1")
    return math.ceil(k / m)
