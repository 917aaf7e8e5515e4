import numpy as np
import pytest

import epibias


@pytest.fixture
def rng():
    return np.random.default_rng(20240614)


@pytest.fixture
def small_provinces():
    return epibias.ProvinceIndex.from_ids(["P1", "P2", "P3"])


@pytest.fixture
def small_weeks():
    return epibias.WeekIndex.from_range(2020, 9, 4)


@pytest.fixture(scope="session")
def ring_structures():
    spatial = epibias.spatial_structure_from_weights(epibias.ring_weights(8))
    temporal = epibias.rw1_structure(5)
    return epibias.model_structures(spatial, temporal)


@pytest.fixture(scope="session")
def tiny_structures():
    # smallest model admitted by the simulator: 4 provinces, 3 weeks
    spatial = epibias.spatial_structure_from_weights(epibias.ring_weights(4))
    temporal = epibias.rw1_structure(3)
    return epibias.model_structures(spatial, temporal)


def make_panel(provinces, weeks, counts, year_label=2020):
    return epibias.MortalityPanel(provinces, weeks, np.asarray(counts, float), year_label)
