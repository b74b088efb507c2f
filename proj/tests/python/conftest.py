import os
import shutil

import pytest

QUICK = {
    "n_grid": [1, 4],
    "trials": 12,
    "demo_length": 4,
    "recurrence_horizon": 3,
    "kl_length": 3,
    "eta_max_length": 3,
    "l_grid": [3],
    "margin_samples": 20,
    "identity": {"ladder": [100, 1000], "seeds": 2},
    "eq2": {"models": 20},
}


@pytest.fixture
def quick():
    return {k: (dict(v) if isinstance(v, dict) else v) for k, v in QUICK.items()}


@pytest.fixture(scope="session")
def cli():
    path = os.environ.get("ICL_LAB_CLI") or shutil.which("icl-lab")
    if not path:
        pytest.skip("icl-lab executable not available")
    return path
