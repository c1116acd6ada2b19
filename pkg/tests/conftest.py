import sys
from pathlib import Path

import numpy as np
import pytest

PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

from lattice import LatticeParams  # noqa: E402
from rfunction import VarianceProfile  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def params2():
    return LatticeParams(2, 2)


@pytest.fixture
def params3():
    return LatticeParams(3, 3)


@pytest.fixture(scope="session")
def profile2():
    return VarianceProfile(2)


@pytest.fixture(scope="session")
def profile3():
    return VarianceProfile(3)


@pytest.fixture
def tmp_out(tmp_path):
    """A fresh run directory."""
    out = tmp_path / "run"
    out.mkdir()
    return out
