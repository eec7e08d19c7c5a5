"""Temporal basis extraction and low-rank composition round trips."""

import numpy as np
import pytest

from mpqmri.subspace import (
    SpatialBases,
    TemporalBasis,
    compose_weighted,
    project_to_subspace,
    temporal_basis,
)


def test_orthonormal_rows(desk_sim):
    phi = desk_sim["phi"].phi
    assert phi.shape == (15, 60)
    assert np.allclose(phi @ phi.conj().T, np.eye(15), atol=1e-12)


def test_rank_one_dictionary():
    row = np.exp(-np.arange(20) / 5.0)
    d = np.outer([1.0, 2.0, 3.0], row)
    tb = temporal_basis(d, 1)
    assert np.allclose(np.abs(tb.phi[0]), row / np.linalg.norm(row), atol=1e-12)
    assert tb.singular_values[1:].max() < 1e-12
    assert abs(tb.captured_energy() - 1.0) < 1e-12


def test_k_equals_t_is_lossless(rng):
    d = rng.standard_normal((40, 12))
    tb = temporal_basis(d, 12)
    x = rng.standard_normal((5, 5, 2, 12))
    u = project_to_subspace(x, tb)
    assert np.allclose(compose_weighted(u, tb), x, atol=1e-10)


def test_captured_energy_monotone(desk_sim):
    tb = desk_sim["phi"]
    es = [tb.captured_energy(k) for k in range(1, 16)]
    assert np.all(np.diff(es) >= -1e-15)
    assert tb.captured_energy(15) > 0.999999


def test_roundtrip_on_simulated_images(desk_sim):
    iw, tb = desk_sim["iw"], desk_sim["phi"]
    u = project_to_subspace(iw, tb)
    assert isinstance(u, SpatialBases) and u.K == 15
    back = compose_weighted(u, tb)
    rel = np.linalg.norm(back - iw.data) / np.linalg.norm(iw.data)
    assert rel < 1e-3


def test_projection_idempotent(desk_sim):
    iw, tb = desk_sim["iw"], desk_sim["phi"]
    once = compose_weighted(project_to_subspace(iw, tb), tb)
    twice = compose_weighted(project_to_subspace(once, tb), tb)
    assert np.allclose(once, twice, atol=1e-10)


def test_projection_is_least_squares(rng, desk_sim):
    """No K-rank combination beats U = I_w Phi^H in Frobenius error."""
    tb = desk_sim["phi"]
    x = rng.standard_normal((4, 4, 2, 60)) + 1j * rng.standard_normal((4, 4, 2, 60))
    u_star = project_to_subspace(x, tb).u
    best = np.linalg.norm(compose_weighted(u_star, tb.phi) - x)
    for _ in range(5):
        pert = u_star + 0.01 * (rng.standard_normal(u_star.shape)
                                + 1j * rng.standard_normal(u_star.shape))
        assert np.linalg.norm(compose_weighted(pert, tb.phi) - x) > best


def test_validation():
    d = np.ones((10, 6))
    with pytest.raises(ValueError):
        temporal_basis(d, 0)
    with pytest.raises(ValueError):
        temporal_basis(d, 7)
    tb = temporal_basis(np.random.default_rng(0).standard_normal((10, 6)), 3)
    with pytest.raises(ValueError, match="rank mismatch"):
        compose_weighted(np.zeros((2, 2, 2, 4)), tb)
    with pytest.raises(ValueError, match="frame mismatch"):
        project_to_subspace(np.zeros((2, 2, 2, 5)), tb)


def test_raw_array_passthrough(rng):
    tb = temporal_basis(rng.standard_normal((20, 8)), 4)
    x = rng.standard_normal((3, 3, 1, 8))
    u = project_to_subspace(x, tb.phi)
    assert np.array_equal(u.u, project_to_subspace(x, tb).u)
