import numpy as np
import pytest

from psmforce.core import Condition, Trajectory


def make_trajectory(n=40, condition=Condition.FREE_SPACE, seed=0, rate=10.0, wrench=None):
    rng = np.random.default_rng(seed)
    t = np.arange(n) / rate
    q = rng.uniform(-0.5, 0.5, (n, 6)) * 0.1
    qd = rng.normal(size=(n, 6))
    tau = rng.normal(size=(n, 6))
    if wrench is None and Condition.parse(condition) is Condition.TROCAR_CONTACT:
        wrench = rng.normal(size=(n, 6))
    return Trajectory(t, q, qd, tau, condition, wrench)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


TINY_MANIFEST = {
    "seed": 3,
    "simulation": {"rate": 5.0},
    "scenarios": {
        "free-space": {"duration": 240, "trajectories": 2},
        "seal": {"duration": 240, "trajectories": 2},
        "trocar": {"duration": 120, "trajectories": 1},
    },
    "architecture": {"lstm_hidden": 6, "joint3_hidden": 6, "corr_window": 3, "corr_hidden": 8,
                     "xfer_hidden": 6},
    "training": {
        "step1": {"epochs": 2, "seq_len": 25},
        "troc": {"epochs": 2, "seq_len": 25},
        "corr": {"epochs": 2},
        "xfer": {"epochs": 2, "seq_len": 25},
    },
    "experiment": {"lengths": [60, 120], "nocontact_trials": 2, "contact_trials": 3,
                   "nocontact_length": 60, "trial_duration": 20},
}


@pytest.fixture
def tiny_manifest():
    import copy
    return copy.deepcopy(TINY_MANIFEST)
