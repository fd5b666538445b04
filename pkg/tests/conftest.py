import numpy as np
import pytest

import rrsim


@pytest.fixture(scope="session")
def profile():
    return rrsim.default_profile()


@pytest.fixture(scope="session")
def small_geometry():
    # Big enough for a 32-bit payload at replica 256 plus spare reference cells.
    return rrsim.ChipGeometry(address_count=16384)


@pytest.fixture
def chip(profile, small_geometry):
    return rrsim.new_chip(small_geometry, profile, seed=42)


def fresh_chip(profile, seed, addresses=16384):
    return rrsim.new_chip(rrsim.ChipGeometry(address_count=addresses),
                          profile, seed=seed)


def rng_for(seed):
    return np.random.Generator(np.random.PCG64(seed))
