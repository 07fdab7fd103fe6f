import numpy as np
import pytest

from protomm.core import UnitVector
from protomm.prototypes import PrototypeStore, new_prototype


def random_unit(rng, d) -> UnitVector:
    return UnitVector(rng.standard_normal(d))


def random_units(rng, n, d) -> list[UnitVector]:
    return [random_unit(rng, d) for _ in range(n)]


def random_store(rng, classes, m, s, d) -> PrototypeStore:
    return PrototypeStore(
        tuple(new_prototype(c, random_units(rng, m, d), s) for c in range(classes))
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
