import numpy as np
import pytest
from hypothesis import settings

from helmhomog import fem
from helmhomog.correctors import compute_correctors, torus_coefficients
from helmhomog.microstructure import MediumParams, ProcessConfig, calibrate_intensity, sample_matern2

settings.register_profile("default", max_examples=30, deadline=None)
settings.load_profile("default")

TARGET_VF = 0.226
RADIUS = 0.5
HARDCORE = 1.05


def default_process(seed=0, period=20.0):
    lam = calibrate_intensity(TARGET_VF, RADIUS, HARDCORE)
    return ProcessConfig(lam, HARDCORE, RADIUS, period, seed)


@pytest.fixture(scope="session")
def small_correctors():
    """One default-medium realization on a 10-periodic torus at step 0.1."""
    ms = sample_matern2(default_process(seed=3, period=10.0))
    mesh, dofs = fem.build_torus_mesh(10.0, 0.1)
    a, n = torus_coefficients(mesh, ms, MediumParams())
    return ms, compute_correctors(mesh, dofs, a, n, 1e7, seed=3)
