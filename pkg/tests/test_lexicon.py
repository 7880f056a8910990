import pytest

from novelcap.lexicon import ObjectClass, ObjectLexicon, pluralize


@pytest.mark.parametrize("word,plural", [
    ("zebra", "zebras"),
    ("cow", "cows"),
    ("glass", "glasses"),
    ("bus", "buses"),
    ("box", "boxes"),
    ("couch", "couches"),
    ("dish", "dishes"),
    ("puppy", "puppies"),
    ("tennis racket", "tennis rackets"),
])
def test_pluralize_default_rules(word, plural):
    assert pluralize(word) == plural


def test_pluralize_irregulars():
    irregular = {"man": "men", "knife": "knives"}
    assert pluralize("man", irregular) == "men"
    assert pluralize("knife", irregular) == "knives"
    assert pluralize("old man", irregular) == "old men"


def test_object_class_requires_mention_words():
    with pytest.raises(ValueError):
        ObjectClass(id=1, name="cow", mention_words=())
    with pytest.raises(ValueError):
        ObjectClass(id=1, name="cow", mention_words=("Cow",))


def test_mention_forms_longest_first():
    racket = ObjectClass(id=1, name="racket",
                         mention_words=("racket", "tennis racket", "racquet"))
    forms = racket.mention_forms()
    assert forms[0] == ("tennis", "racket")
    assert set(forms) == {("tennis", "racket"), ("racket",), ("racquet",)}


def test_is_plural_form():
    cow = ObjectClass(id=1, name="cow", mention_words=("cow", "cows"))
    assert cow.is_plural_form("cows")
    assert not cow.is_plural_form("cow")
    glass = ObjectClass(id=2, name="glass", mention_words=("glass", "glasses"))
    assert glass.is_plural_form("glasses")
    assert not glass.is_plural_form("glass")


def test_lexicon_lookup_by_synonym(novel_lexicon):
    assert novel_lexicon.get("sofa").name == "couch"
    assert novel_lexicon.get("racquet").name == "racket"
    assert novel_lexicon.get("SOFA ").name == "couch"
    assert novel_lexicon.get("not-a-class") is None


def test_lexicon_rejects_duplicate_names():
    lex = ObjectLexicon()
    lex.add(ObjectClass(id=1, name="cow", mention_words=("cow",)))
    with pytest.raises(ValueError):
        lex.add(ObjectClass(id=2, name="cow", mention_words=("cow",)))


def test_ensure_registers_default_entry():
    lex = ObjectLexicon()
    cls = lex.ensure("Giraffe")
    assert cls.name == "giraffe"
    assert "giraffes" in cls.mention_words
    assert lex.ensure("giraffe") is cls


def test_shipped_lexicon_has_the_eight_heldout_classes(novel_lexicon):
    names = [c.name for c in novel_lexicon.classes()]
    assert names == ["bottle", "bus", "couch", "microwave", "pizza",
                     "racket", "suitcase", "zebra"]
