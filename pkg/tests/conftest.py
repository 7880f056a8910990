import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from novelcap.lexicon import ObjectClass, ObjectLexicon, RewriteLexicons, default_novel_lexicon


@pytest.fixture(scope="session")
def novel_lexicon() -> ObjectLexicon:
    return default_novel_lexicon()


@pytest.fixture(scope="session")
def rewrite_lexicons() -> RewriteLexicons:
    return RewriteLexicons.load_default()


@pytest.fixture(scope="session")
def cow() -> ObjectClass:
    return ObjectClass(id=21, name="cow", mention_words=("cow", "cows"))


@pytest.fixture(scope="session")
def cake() -> ObjectClass:
    return ObjectClass(id=61, name="cake", mention_words=("cake", "cakes"))


@pytest.fixture(scope="session")
def toy_world_session(tmp_path_factory):
    from toyworld import build_toy_world
    return build_toy_world(tmp_path_factory.mktemp("toyworld"))
