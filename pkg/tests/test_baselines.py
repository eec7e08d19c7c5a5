"""Zero-filled and ADMM subspace baselines plus voxelwise NLLS fitting."""

import numpy as np
import pytest

from mpqmri.acquisition import FULL, UNIFORM_RANDOM, forward, make_mask
from mpqmri.baselines import (
    AdmmConfig,
    _grad3,
    _grad3_adj,
    fit_maps_nlls,
    recon_lrt_admm,
    recon_zero_filled,
)
from mpqmri.phantom import make_coil_maps, make_phantom
from mpqmri.signal_models import (
    build_dictionary,
    dataset1_protocol,
    signal_vfa_megre,
)
from mpqmri.subspace import compose_weighted, project_to_subspace, temporal_basis

SHAPE = (16, 16, 8)


@pytest.fixture(scope="module")
def sim():
    gt = make_phantom(SHAPE, seed=3)
    coils = make_coil_maps(SHAPE, 4, seed=5)
    protocol = dataset1_protocol()
    iw = signal_vfa_megre(gt, protocol)
    grid = [(t1, t2s) for t1 in (500.0, 850.0, 1400.0, 3000.0)
            for t2s in (30.0, 50.0, 70.0)]
    phi = temporal_basis(build_dictionary(protocol, grid), 8)
    return {"gt": gt, "coils": coils, "protocol": protocol, "iw": iw, "phi": phi}


def test_grad3_adjoint_identity(rng):
    u = rng.standard_normal(SHAPE) + 1j * rng.standard_normal(SHAPE)
    g = rng.standard_normal((3,) + SHAPE) + 1j * rng.standard_normal((3,) + SHAPE)
    lhs = np.vdot(g, _grad3(u))
    rhs = np.vdot(_grad3_adj(g), u)
    assert abs(lhs - rhs) < 1e-10 * abs(lhs)


def test_zero_filled_full_mask_is_projection(sim):
    mask = make_mask(sim["iw"].data.shape, FULL, 1)
    ks = forward(sim["iw"], sim["coils"], mask)
    out = recon_zero_filled(ks, sim["coils"], sim["phi"])
    want = compose_weighted(project_to_subspace(sim["iw"], sim["phi"]), sim["phi"])
    rel = np.linalg.norm(out - want) / np.linalg.norm(want)
    assert rel < 1e-5


def test_admm_unregularized_full_mask_matches_projection(sim):
    mask = make_mask(sim["iw"].data.shape, FULL, 1)
    ks = forward(sim["iw"], sim["coils"], mask)
    # with no TV the split variable is exact after one outer iteration and
    # the residual bias of the u-solve scales with rho||G^H G||
    cfg = AdmmConfig(lambda_tv=0.0, rho=1e-6, max_iters=5, cg_iters=40)
    u = recon_lrt_admm(ks, sim["coils"], sim["phi"], cfg)
    want = project_to_subspace(sim["iw"], sim["phi"]).u
    rel = np.linalg.norm(u.u - want) / np.linalg.norm(want)
    assert rel < 1e-4


def test_admm_large_lambda_flattens(sim):
    mask = make_mask(sim["iw"].data.shape, UNIFORM_RANDOM, 4, seed=1)
    ks = forward(sim["iw"], sim["coils"], mask)
    big = recon_lrt_admm(ks, sim["coils"], sim["phi"],
                         AdmmConfig(lambda_tv=1e6, max_iters=15)).u
    small = recon_lrt_admm(ks, sim["coils"], sim["phi"],
                           AdmmConfig(lambda_tv=1e-6, max_iters=15)).u
    def tv(u):
        return np.abs(_grad3(u)).sum()
    assert tv(big) < 0.05 * tv(small)


def test_admm_improves_on_zero_filled(sim):
    mask = make_mask(sim["iw"].data.shape, UNIFORM_RANDOM, 4, seed=1)
    ks = forward(sim["iw"], sim["coils"], mask)
    truth = sim["iw"].data
    zf = recon_zero_filled(ks, sim["coils"], sim["phi"])
    cfg = AdmmConfig(lambda_tv=1e-3 * np.abs(
        recon_zero_filled(ks, sim["coils"], sim["phi"])).max(), max_iters=20)
    lrt = compose_weighted(recon_lrt_admm(ks, sim["coils"], sim["phi"], cfg),
                           sim["phi"])
    err = lambda x: np.linalg.norm(x - truth) / np.linalg.norm(truth)
    assert err(lrt) < err(zf)


def test_admm_dtype_and_validation(sim):
    with pytest.raises(ValueError):
        AdmmConfig(lambda_tv=-1.0)
    with pytest.raises(ValueError):
        AdmmConfig(dtype="float32")
    mask = make_mask(sim["iw"].data.shape, FULL, 1)
    ks = forward(sim["iw"], sim["coils"], mask)
    u64 = recon_lrt_admm(ks, sim["coils"], sim["phi"],
                         AdmmConfig(lambda_tv=0.0, max_iters=3, dtype="complex128")).u
    u32 = recon_lrt_admm(ks, sim["coils"], sim["phi"],
                         AdmmConfig(lambda_tv=0.0, max_iters=3)).u
    assert u32.dtype == np.complex64 and u64.dtype == np.complex128
    rel = np.linalg.norm(u32 - u64) / np.linalg.norm(u64)
    assert rel < 1e-4


def test_nlls_noiseless_recovery(sim):
    maps = fit_maps_nlls(sim["iw"], sim["protocol"])
    gt = sim["gt"]
    m = gt.brain_mask
    for name in ("t1", "t2s", "a"):
        pred = getattr(maps, f"{name}_map")[m]
        true = getattr(gt, f"{name}_map")[m]
        rel = np.linalg.norm(pred - true) / np.linalg.norm(true)
        assert rel < 5e-3, (name, rel)
    # off-resonance in Hz, absolute error
    assert np.abs(maps.freq_map[m] - gt.freq_map[m]).max() < 0.05


def test_nlls_zero_voxels_stay_zero(sim):
    maps = fit_maps_nlls(sim["iw"], sim["protocol"])
    out = ~sim["gt"].brain_mask
    assert np.all(maps.t1_map[out] == 0)
    assert np.all(maps.a_map[out] == 0)


def test_nlls_scale_equivariance(sim):
    from mpqmri.signal_models import WeightedImages

    iw2 = WeightedImages(data=2.0 * sim["iw"].data, protocol=sim["protocol"])
    m1 = fit_maps_nlls(sim["iw"], sim["protocol"])
    m2 = fit_maps_nlls(iw2, sim["protocol"])
    msk = sim["gt"].brain_mask
    assert np.allclose(m2.a_map[msk], 2.0 * m1.a_map[msk], rtol=1e-3)
    assert np.allclose(m2.t1_map[msk], m1.t1_map[msk], rtol=1e-3)


def test_nlls_with_init_and_protocol_check(sim):
    init = sim["gt"]
    maps = fit_maps_nlls(sim["iw"], sim["protocol"], init={
        "a": init.a_map, "t1": init.t1_map, "t2s": init.t2s_map,
        "phi0": init.phi0_map, "freq": init.freq_map})
    m = sim["gt"].brain_mask
    rel = np.linalg.norm(maps.t1_map[m] - init.t1_map[m]) / np.linalg.norm(init.t1_map[m])
    assert rel < 1e-6
    assert maps.n_nonconverged == 0
    from mpqmri.signal_models import SequenceProtocol, T2IR_GRE

    bad = SequenceProtocol(kind=T2IR_GRE, tr_ms=30.0, te_ms=(4.5,),
                           flip_deg=(10.0,), tau_ms=(50.0,), n_segments=4)
    with pytest.raises(ValueError, match="match the protocol"):
        fit_maps_nlls(sim["iw"], bad)


def test_nlls_explicit_mask(sim):
    m = np.zeros(SHAPE, dtype=bool)
    m[8, 8, 4] = sim["gt"].brain_mask[8, 8, 4]
    if not m.any():
        pytest.skip("chosen voxel outside the phantom")
    maps = fit_maps_nlls(sim["iw"], sim["protocol"], mask=m)
    assert maps.t1_map[~m].sum() == 0
    assert abs(maps.t1_map[8, 8, 4] - sim["gt"].t1_map[8, 8, 4]) < 5.0
