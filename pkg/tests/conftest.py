import os

# Branch-level threading in the model outperforms BLAS threading on this
# workload; pin BLAS to one thread before numpy loads.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
os.environ.setdefault("OMP_NUM_THREADS", "1")

import numpy as np
import pytest

from locomode.modes import LocomotionMode, MAIN_TASK
from locomode.synth import SynthConfig, generate_trial


@pytest.fixture(scope="session")
def main_trial():
    """One deterministic main-paradigm trial shared across tests."""
    return generate_trial(SynthConfig(seed=101), MAIN_TASK, trial_id="main-00")


@pytest.fixture(scope="session")
def short_trial():
    """A quick back-stepping trial for cheap roundtrip tests."""
    cfg = SynthConfig(seed=202, steps_per_mode=2)
    return generate_trial(cfg, (LocomotionMode.ST, LocomotionMode.BS), trial_id="bs-00")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
