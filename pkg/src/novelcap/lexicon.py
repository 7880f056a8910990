"""Object classes and the word lexicon used for mention detection.

Mention detection is deliberately lexicon-based: every object class carries an
explicit list of caption word forms (plurals and synonyms included), so that
"which captions mention a bus" is a deterministic, auditable question.  The
default lexicon ships the eight held-out classes with their common synonyms
and can be extended or replaced from a JSON file.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

_ES_ENDINGS = ("s", "x", "z", "ch", "sh")


def pluralize(word: str, irregulars: dict[str, str] | None = None) -> str:
    """Return the plural of a (possibly multi-token) lowercase word form."""
    head, _, last = word.rpartition(" ")
    if irregulars and last in irregulars:
        plural = irregulars[last]
    elif last.endswith(_ES_ENDINGS):
        plural = last + "es"
    elif len(last) > 1 and last.endswith("y") and last[-2] not in "aeiou":
        plural = last[:-1] + "ies"
    else:
        plural = last + "s"
    return f"{head} {plural}" if head else plural


@dataclass(frozen=True)
class ObjectClass:
    """One object class and the caption word forms that count as mentioning it."""

    id: int
    name: str
    mention_words: tuple[str, ...]
    has_bbox_annotations: bool = True

    def __post_init__(self):
        if not self.mention_words:
            raise ValueError(f"class {self.name!r} has no mention words")
        for w in self.mention_words:
            if w != w.lower():
                raise ValueError(f"mention word {w!r} is not lowercase")

    def mention_forms(self) -> list[tuple[str, ...]]:
        """Mention words as token tuples, longest form first."""
        forms = [tuple(w.split()) for w in self.mention_words]
        return sorted(set(forms), key=lambda f: (-len(f), f))

    def is_plural_form(self, form: str, irregulars: dict[str, str] | None = None) -> bool:
        """True when ``form`` is the plural of another mention word of this class."""
        return any(pluralize(w, irregulars) == form for w in self.mention_words if w != form)


class ObjectLexicon:
    """Registry of object classes, looked up by any of their word forms."""

    def __init__(self, classes: list[ObjectClass] | None = None):
        self._by_name: dict[str, ObjectClass] = {}
        self._by_form: dict[str, ObjectClass] = {}
        for cls in classes or []:
            self.add(cls)

    def add(self, cls: ObjectClass) -> None:
        if cls.name in self._by_name:
            raise ValueError(f"duplicate class name {cls.name!r}")
        self._by_name[cls.name] = cls
        for w in cls.mention_words:
            self._by_form.setdefault(w, cls)

    def classes(self) -> list[ObjectClass]:
        return sorted(self._by_name.values(), key=lambda c: c.name)

    def get(self, name: str) -> ObjectClass | None:
        """Resolve a class by canonical name or any mention word."""
        key = name.strip().lower()
        return self._by_name.get(key) or self._by_form.get(key)

    def __contains__(self, name: str) -> bool:
        return self.get(name) is not None

    def ensure(self, name: str, *, class_id: int | None = None,
               has_bbox_annotations: bool = True) -> ObjectClass:
        """Return the class for ``name``, registering a default entry if unknown."""
        cls = self.get(name)
        if cls is not None:
            return cls
        key = name.strip().lower()
        cls = ObjectClass(
            id=class_id if class_id is not None else -(len(self._by_name) + 1),
            name=key,
            mention_words=(key, pluralize(key)),
            has_bbox_annotations=has_bbox_annotations,
        )
        self.add(cls)
        return cls

    @classmethod
    def from_json(cls, path: str | Path) -> "ObjectLexicon":
        """Load a lexicon from ``{"classes": [{name, id?, mention_words?, has_bbox_annotations?}]}``."""
        with open(path, encoding="utf-8") as f:
            payload = json.load(f)
        return cls._from_payload(payload)

    @classmethod
    def _from_payload(cls, payload: dict) -> "ObjectLexicon":
        lex = cls()
        for i, entry in enumerate(payload["classes"]):
            name = entry["name"].strip().lower()
            words = tuple(w.strip().lower() for w in entry.get("mention_words", [])) or (
                name, pluralize(name))
            lex.add(ObjectClass(
                id=entry.get("id", i + 1),
                name=name,
                mention_words=words,
                has_bbox_annotations=entry.get("has_bbox_annotations", True),
            ))
        return lex


def default_novel_lexicon() -> ObjectLexicon:
    """The eight held-out classes with their shipped word lists."""
    text = resources.files("novelcap.data").joinpath("novel_classes.json").read_text("utf-8")
    return ObjectLexicon._from_payload(json.loads(text))


@dataclass
class RewriteLexicons:
    """Word lists driving caption rewriting: colors, adjectives, nouns, irregular plurals."""

    color_words: frozenset[str]
    adjectives: frozenset[str]
    nouns: frozenset[str]
    irregular_plurals: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load_default(cls) -> "RewriteLexicons":
        data = resources.files("novelcap.data")

        def words(fname: str) -> frozenset[str]:
            lines = data.joinpath(fname).read_text("utf-8").splitlines()
            return frozenset(w.strip().lower() for w in lines if w.strip() and not w.startswith("#"))

        irregular = {}
        for line in data.joinpath("irregular_plurals.txt").read_text("utf-8").splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            singular, plural = line.split()
            irregular[singular.lower()] = plural.lower()
        return cls(
            color_words=words("colors.txt"),
            adjectives=words("adjectives.txt"),
            nouns=words("nouns.txt"),
            irregular_plurals=irregular,
        )

    @classmethod
    def from_files(cls, colors: str | Path, adjectives: str | Path, nouns: str | Path,
                   irregular_plurals: str | Path | None = None) -> "RewriteLexicons":
        def words(path) -> frozenset[str]:
            with open(path, encoding="utf-8") as f:
                return frozenset(w.strip().lower() for w in f if w.strip() and not w.startswith("#"))

        irregular = {}
        if irregular_plurals is not None:
            with open(irregular_plurals, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if not line or line.startswith("#"):
                        continue
                    singular, plural = line.split()
                    irregular[singular.lower()] = plural.lower()
        return cls(words(colors), words(adjectives), words(nouns), irregular)
