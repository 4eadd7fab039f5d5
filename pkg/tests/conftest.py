from pathlib import Path

import numpy as np
import pytest

from hodep import _accel
from hodep.corpus import Sentence, load_conllu

DATA = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=["numba", "numpy"])
def kernel_mode(request, monkeypatch):
    """Run a test once through the compiled kernels and once through the fallbacks."""
    if request.param == "numba" and not _accel.HAS_NUMBA:
        pytest.skip("numba not installed")
    monkeypatch.setattr(_accel, "NUMBA_ENABLED", request.param == "numba")
    return request.param


@pytest.fixture(scope="session")
def czech():
    return load_conllu(DATA / "cs_pud-gold.conllu")


@pytest.fixture
def toy():
    return [
        Sentence(("The", "dog", "barks"), ("DET", "NOUN", "VERB"), (2, 3, 0)),
        Sentence(("Cats", "sleep"), ("NOUN", "VERB"), (2, 0)),
        Sentence(("A", "bird", "sings", "loudly"), ("DET", "NOUN", "VERB", "ADV"), (2, 3, 0, 3)),
    ]
