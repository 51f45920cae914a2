from pathlib import Path

import pytest

from cuimlm.lexicon import read_lexicon

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir():
    return DATA


@pytest.fixture(scope="session")
def fixture_lexicon():
    return read_lexicon(DATA / "lexicon.tsv")
