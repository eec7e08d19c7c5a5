"""Loss terms, refiner identity, and small end-to-end training runs."""

import numpy as np
import pytest
import torch

from mpqmri.acquisition import FULL, UNIFORM_RANDOM, add_noise, forward, make_mask
from mpqmri.phantom import make_coil_maps, make_phantom
from mpqmri.recon import (
    BasisRefiner,
    LossWeights,
    LrrModel,
    PmrModel,
    TrainConfig,
    _loss_dc_sampled,
    _sample_indices,
    cnn_refine,
    loss_dc,
    loss_prior,
    loss_wnnm,
    pmr_predict,
    train,
    wnnm_weight_schedule,
)
from mpqmri.neural_fields import coordinate_grid
from mpqmri.signal_models import (
    build_dictionary,
    dataset1_protocol,
    signal_vfa_megre,
)
from mpqmri.subspace import project_to_subspace, temporal_basis

SHAPE = (16, 16, 8)


@pytest.fixture(scope="module")
def tiny_sim():
    torch.manual_seed(0)
    gt = make_phantom(SHAPE, seed=3)
    coils = make_coil_maps(SHAPE, 4, seed=5)
    protocol = dataset1_protocol()
    iw = signal_vfa_megre(gt, protocol)
    grid = [(t1, t2s) for t1 in (500.0, 850.0, 1400.0, 3000.0)
            for t2s in (30.0, 50.0, 70.0)]
    phi = temporal_basis(build_dictionary(protocol, grid), 8)
    mask = make_mask(iw.data.shape, FULL, 1)
    ks = forward(iw, coils, mask)
    return {"gt": gt, "coils": coils, "protocol": protocol, "iw": iw,
            "phi": phi, "ks": ks}


def test_refiner_identity_at_init():
    refiner = BasisRefiner(K=4)
    u = torch.randn(16, 16, 4, 4, dtype=torch.complex64)
    out = cnn_refine(u, refiner)
    assert torch.allclose(out, u, atol=1e-7)
    with pytest.raises(ValueError, match="basis count"):
        cnn_refine(torch.randn(16, 16, 4, 3, dtype=torch.complex64), refiner)


def test_loss_dc_zero_at_ground_truth(tiny_sim):
    iw = torch.as_tensor(tiny_sim["iw"].data)
    coils = torch.as_tensor(tiny_sim["coils"].maps)
    ks = torch.as_tensor(tiny_sim["ks"].data)
    mask = torch.as_tensor(tiny_sim["ks"].mask.mask)
    assert float(loss_dc(iw, coils, ks, mask)) < 1e-18 * float(
        torch.vdot(ks.reshape(-1), ks.reshape(-1)).real)


def test_sampled_dc_equals_full_dc(tiny_sim, rng):
    mask = make_mask(tiny_sim["iw"].data.shape, UNIFORM_RANDOM, 3, seed=2)
    ks = forward(tiny_sim["iw"], tiny_sim["coils"], mask)
    pert = tiny_sim["iw"].data + 0.01 * (
        rng.standard_normal(tiny_sim["iw"].data.shape)
        + 1j * rng.standard_normal(tiny_sim["iw"].data.shape))
    iw_t = torch.as_tensor(pert)
    coils = torch.as_tensor(tiny_sim["coils"].maps)
    ks_t = torch.as_tensor(ks.data)
    mask_t = torch.as_tensor(mask.mask)
    full = float(loss_dc(iw_t, coils, ks_t, mask_t))
    idx = _sample_indices(mask_t, coils.shape[-1])
    samp = float(_loss_dc_sampled(iw_t, coils, idx,
                                  ks_t.reshape(-1).index_select(0, idx)))
    assert abs(full - samp) < 1e-10 * full


def test_subspace_dc_equals_full_dc(tiny_sim, rng):
    """The K-channel contracted DC loss matches the frame-wise loss on UΦ."""
    from mpqmri.recon import _loss_dc_subspace

    phi = tiny_sim["phi"]
    mask = make_mask(tiny_sim["iw"].data.shape, UNIFORM_RANDOM, 3, seed=2)
    ks = forward(tiny_sim["iw"], tiny_sim["coils"], mask)
    u = torch.as_tensor(rng.standard_normal(SHAPE + (phi.K,))
                        + 1j * rng.standard_normal(SHAPE + (phi.K,)))
    coils = torch.as_tensor(tiny_sim["coils"].maps)
    phi_t = torch.as_tensor(phi.phi).to(u.dtype)
    iw_t = (u.reshape(-1, phi.K) @ phi_t).reshape(tiny_sim["iw"].data.shape)
    ks_t = torch.as_tensor(ks.data)
    mask_t = torch.as_tensor(mask.mask)
    full = float(loss_dc(iw_t, coils, ks_t, mask_t))
    idx = _sample_indices(mask_t, coils.shape[-1])
    T = mask.mask.shape[3]
    sub = float(_loss_dc_subspace(
        u, coils, phi_t.transpose(0, 1).index_select(0, idx % T),
        torch.div(idx, T, rounding_mode="floor"),
        ks_t.reshape(-1).index_select(0, idx)))
    assert abs(full - sub) < 1e-10 * full


def test_loss_prior_properties(rng):
    a = torch.as_tensor(rng.standard_normal((4, 4, 2, 6))
                        + 1j * rng.standard_normal((4, 4, 2, 6)))
    assert float(loss_prior(a, a)) == 0.0
    b = a + 1.0
    want = float(torch.vdot((a - b).reshape(-1), (a - b).reshape(-1)).real)
    assert abs(float(loss_prior(a, b)) - want) < 1e-12
    with pytest.raises(ValueError, match="shape mismatch"):
        loss_prior(a, a[..., :3])


def test_wnnm_weight_schedule():
    sv = np.array([4.0, 2.0, 1.0])
    w = wnnm_weight_schedule(sv, c=2.0, eps=0.0 + 1e-12)
    assert np.allclose(w, 2.0 / sv, rtol=1e-9)
    assert np.all(np.diff(w) > 0)  # smaller singular values penalized harder
    with pytest.raises(ValueError):
        wnnm_weight_schedule(np.array([1.0, 2.0]))
    with pytest.raises(ValueError):
        wnnm_weight_schedule(sv, eps=0.0)


def test_loss_wnnm_rank_one_analytic():
    # rank-1 slice: one nonzero singular value sigma; loss = lam * sigma/(sigma + 1e-4 sigma)
    u = torch.zeros(8, 8, 1, dtype=torch.float64)
    u[:, :, 0] = torch.outer(torch.linspace(1, 2, 8, dtype=torch.float64),
                             torch.linspace(1, 3, 8, dtype=torch.float64))
    weights = LossWeights(lambda_wnnm_per_map={"t1": 0.7})
    got = float(loss_wnnm({"t1": u}, weights))
    assert abs(got - 0.7 / 1.0001) < 1e-10


def test_loss_wnnm_favors_low_rank(rng):
    weights = LossWeights(lambda_wnnm_per_map={"t1": 1.0})
    low = torch.as_tensor(np.outer(rng.standard_normal(16),
                                   rng.standard_normal(16))[..., None])
    high = torch.as_tensor(rng.standard_normal((16, 16, 1)))
    assert float(loss_wnnm({"t1": low}, weights)) < float(
        loss_wnnm({"t1": high}, weights))
    zero = torch.zeros(16, 16, 1, dtype=torch.float64)
    assert float(loss_wnnm({"t1": zero}, weights)) == 0.0
    assert float(loss_wnnm({"phi0": high}, LossWeights(
        lambda_wnnm_per_map={"phi0": 0.0}))) == 0.0


def test_loss_wnnm_finite_difference(rng):
    x = torch.as_tensor(rng.standard_normal((6, 6, 1))).requires_grad_(True)
    weights = LossWeights(lambda_wnnm_per_map={"t2s": 1.3})
    loss = loss_wnnm({"t2s": x}, weights)
    loss.backward()
    eps = 1e-6
    for (i, j) in [(0, 0), (3, 4)]:
        with torch.no_grad():
            x[i, j, 0] += eps
            up = float(loss_wnnm({"t2s": x}, weights))
            x[i, j, 0] -= 2 * eps
            dn = float(loss_wnnm({"t2s": x}, weights))
            x[i, j, 0] += eps
        assert abs((up - dn) / (2 * eps) - float(x.grad[i, j, 0])) < 1e-3


def test_default_wnnm_lambdas():
    w = LossWeights()
    lam = w.lambda_wnnm_per_map
    assert lam["a"] == 0.05
    assert lam["t1"] == lam["phi0"] == lam["freq"] == 0.2
    assert lam["t2"] == lam["t2s"] == 2.0
    with pytest.raises(ValueError):
        LossWeights(dc1_weight=-1.0)


def test_pmr_predict_shapes_and_positivity(tiny_sim):
    torch.manual_seed(1)
    pmr = PmrModel(tiny_sim["protocol"], SHAPE, dtype=torch.float64)
    coords = torch.as_tensor(coordinate_grid(SHAPE))
    maps, iw = pmr_predict(pmr, coords, tiny_sim["protocol"])
    assert set(maps) == {"a", "t1", "t2s", "phi0", "freq"}
    for name in ("a", "t1", "t2s"):
        assert torch.all(maps[name] > 0)
    assert iw.shape == SHAPE + (60,)
    assert iw.is_complex()


def test_lrr_model_coils_rss_normalized(tiny_sim):
    torch.manual_seed(1)
    lrr = LrrModel(K=4, n_coils=3, shape=SHAPE, dtype=torch.float64)
    coords = torch.as_tensor(coordinate_grid(SHAPE))
    u, c = lrr(coords)
    assert u.shape == SHAPE + (4,)
    assert c.shape == SHAPE + (3,)
    rss = torch.sqrt((c.real**2 + c.imag**2).sum(-1))
    assert torch.allclose(rss, torch.ones_like(rss), atol=1e-10)


def test_objective_decomposition(tiny_sim):
    """Stage-2 total equals the weighted sum of the four logged terms."""
    cfg = TrainConfig(epochs=2, pretrain_epochs=1, seed=0)
    res = train(tiny_sim["ks"], tiny_sim["phi"], tiny_sim["protocol"], cfg)
    w = LossWeights()
    for t in res.loss_trace[cfg.pretrain_epochs:]:
        want = (w.dc1_weight * t["dc1"] + w.dc2_weight * t["dc2"]
                + w.prior_weight * t["prior"] + t["wnnm"])
        assert abs(t["total"] - want) <= 1e-6 * abs(want)
    assert res.epochs_run == 3


def test_stage1_only_moves_lrr(tiny_sim):
    """With zero joint epochs the PMR block keeps its random-init outputs."""
    torch.manual_seed(0)
    cfg = TrainConfig(epochs=0, pretrain_epochs=2, seed=4)
    res = train(tiny_sim["ks"], tiny_sim["phi"], tiny_sim["protocol"], cfg)
    torch.manual_seed(cfg.seed)
    LrrModel(tiny_sim["phi"].K, 4, SHAPE, dtype=torch.float32)  # consume RNG as train() does
    pmr_ref = PmrModel(tiny_sim["protocol"], SHAPE, dtype=torch.float32)
    coords = torch.as_tensor(coordinate_grid(SHAPE), dtype=torch.float32)
    with torch.no_grad():
        ref_maps = pmr_ref(coords)
    assert np.allclose(res.maps.t1_map, ref_maps["t1"].numpy(), rtol=1e-5)
    # stage-1 loss decreased
    assert res.loss_trace[-1]["dc1"] < res.loss_trace[0]["dc1"]


def test_training_determinism(tiny_sim):
    cfg = TrainConfig(epochs=1, pretrain_epochs=1, seed=11)
    a = train(tiny_sim["ks"], tiny_sim["phi"], tiny_sim["protocol"], cfg)
    b = train(tiny_sim["ks"], tiny_sim["phi"], tiny_sim["protocol"], cfg)
    assert np.array_equal(a.maps.t1_map, b.maps.t1_map)
    assert np.array_equal(a.weighted_lrr.data, b.weighted_lrr.data)
    assert a.loss_trace == b.loss_trace


def test_checkpointing(tiny_sim, tmp_path):
    cfg = TrainConfig(epochs=2, pretrain_epochs=0, seed=0,
                      checkpoint_every=1, checkpoint_dir=str(tmp_path))
    train(tiny_sim["ks"], tiny_sim["phi"], tiny_sim["protocol"], cfg)
    assert (tmp_path / "epoch_00001" / "index.json").exists()
    assert (tmp_path / "epoch_00002" / "index.json").exists()


def test_frame_count_mismatch_rejected(tiny_sim):
    from mpqmri.acquisition import KSpaceData

    bad = KSpaceData(data=tiny_sim["ks"].data[..., :10],
                     mask=tiny_sim["ks"].mask)
    with pytest.raises(ValueError, match="frame count"):
        train(bad, tiny_sim["phi"], tiny_sim["protocol"],
              TrainConfig(epochs=1, pretrain_epochs=0))
