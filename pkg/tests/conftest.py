import os

import numpy as np
import pytest

from survoptim.analysis.simulate import SimSpec, generate


@pytest.fixture
def write_csv(tmp_path):
    """Write CSV text to a temporary file and return its path."""
    def _write(text, name="data.csv"):
        path = os.path.join(tmp_path, name)
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text)
        return path
    return _write


@pytest.fixture(scope="session")
def cox_cohort():
    """n=600 Cox-Weibull cohort with beta=(0.5, -0.5, 0) and 30% censoring."""
    return generate(SimSpec(n=600, d=3, scenario="cox_ph", censoring=0.3, seed=11))


@pytest.fixture(scope="session")
def treated_cohort():
    """n=400 cohort with a randomised treatment planted in the x1 > 0 subgroup."""
    return generate(SimSpec(n=400, d=2, scenario="hte_subgroup", omega=-1.0, censoring=0.2, seed=5))


@pytest.fixture
def rng():
    return np.random.default_rng(0)
