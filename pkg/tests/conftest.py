import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from avasr import tensor as T


@pytest.fixture(autouse=True)
def _restore_dtype():
    yield
    T.set_default_dtype(np.float64)
