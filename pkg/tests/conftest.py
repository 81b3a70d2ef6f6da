import sys
from pathlib import Path

import numpy as np
import pytest

from chirpvit import autodiff
from chirpvit.synth import SynthConfig, generate_dataset

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture(autouse=True)
def _dtype_guard():
    """Tests may flip the tensor dtype; always restore it afterwards."""
    prev = autodiff.get_default_dtype()
    yield
    autodiff.set_default_dtype(prev)


@pytest.fixture
def f64():
    autodiff.set_default_dtype(np.float64)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """A 40-image generated dataset shared by data/train/cli tests."""
    d = tmp_path_factory.mktemp("tinyset")
    generate_dataset(SynthConfig(seed=101), 40, d)
    return d
