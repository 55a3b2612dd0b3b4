import numpy as np
import pytest

from quasidyn.lattice import Model, PotentialSpec, one_step_matrix


@pytest.fixture
def rng():
    return np.random.default_rng(20250808)


def brute_transfer(spec: PotentialSpec, n: int, m: int, z: complex) -> np.ndarray:
    """Reference transfer product multiplied out one site at a time."""
    out = np.eye(2, dtype=np.complex128)
    for site in range(m + 1, n + 1):
        out = one_step_matrix(spec, site, z) @ out
    return out


def fib_spec(lam: float = 1.0) -> PotentialSpec:
    return PotentialSpec(Model.FIBONACCI, lam)
