from __future__ import annotations

import numpy as np
import pytest

from mcontrol.problem import preset_problem
from mcontrol.spectrum import build_coupled_model, classify_spectra, eigenstructure


def setup_problem(problem):
    """(problem, model, partition, eig) for a ProblemFile."""
    model = problem.build_model()
    partition = classify_spectra(model)
    eig = eigenstructure(model, partition)
    return problem, model, partition, eig


def preset(name, **kwargs):
    return setup_problem(preset_problem(name, **kwargs))


def hand_model():
    """Smallest nondegenerate instance: mu = -1, nu = -2, C = [[1]], b = (1, 0), t1 = 1."""
    model = build_coupled_model([-1.0], [-2.0], [[1.0]], [1.0], [0.0], 1.0)
    partition = classify_spectra(model)
    return model, partition, eigenstructure(model, partition)


@pytest.fixture
def hand():
    return hand_model()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
