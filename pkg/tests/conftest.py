import json
import math

import numpy as np
import pytest

from models import FieldVector, SystemConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def n2_config():
    return SystemConfig(n_qubits=2, alpha=0.5)


@pytest.fixture
def n3_config():
    return SystemConfig(n_qubits=3, alpha=0.5)


@pytest.fixture
def singular_field():
    """N=2, h=0.6J quench that produces a rate-function kink."""
    return FieldVector(h=0.6, theta=1.5 * math.pi, phi=0.5 * math.pi)


@pytest.fixture
def regular_field():
    return FieldVector(h=0.6, theta=1.3 * math.pi, phi=0.5 * math.pi)


@pytest.fixture
def small_run_config(tmp_path):
    """Scenario file with a coarse N=2 grid, cheap enough for end-to-end CLI runs."""
    path = tmp_path / "run.json"
    path.write_text(json.dumps({
        "system": {"n_qubits": 2, "alpha": 0.5},
        "mode": "closed",
        "grid": {"h": 0.6, "n_theta": 8, "n_phi": 8},
        "train_fraction": 0.7,
        "split_seed": 0,
    }))
    return path
