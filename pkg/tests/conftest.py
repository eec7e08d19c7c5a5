"""Shared fixtures: a session-scoped desk-scale simulation."""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

from mpqmri.phantom import make_coil_maps, make_phantom
from mpqmri.signal_models import (
    build_dictionary,
    dataset1_protocol,
    default_dictionary_grid,
    signal_vfa_megre,
)
from mpqmri.subspace import temporal_basis

DESK_SHAPE = (64, 64, 8)


@pytest.fixture(scope="session")
def desk_sim():
    """Default phantom, coils, weighted images and K=15 basis."""
    gt = make_phantom(DESK_SHAPE, seed=7)
    coils = make_coil_maps(DESK_SHAPE, 8, seed=11)
    protocol = dataset1_protocol()
    iw = signal_vfa_megre(gt, protocol)
    dictionary = build_dictionary(protocol, default_dictionary_grid(protocol))
    phi = temporal_basis(dictionary, 15)
    return {"gt": gt, "coils": coils, "protocol": protocol, "iw": iw,
            "dictionary": dictionary, "phi": phi}


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
