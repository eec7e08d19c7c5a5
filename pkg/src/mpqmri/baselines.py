"""Classical reference reconstructions.

Zero-filled subspace projection, an ADMM solver with an isotropic 3D total
variation prior on the spatial bases (inner least squares by conjugate
gradients), and voxelwise Levenberg-Marquardt fitting of the Bloch models
to complex weighted images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from mpqmri.acquisition import adjoint_operator, fft3c, ifft3c
from mpqmri.signal_models import (
    T2IR_GRE,
    VFA_MEGRE,
    ParametricMaps,
    SequenceProtocol,
    WeightedImages,
    steady_state_frames,
    t2ir_bracket,
)
from mpqmri.subspace import SpatialBases, compose_weighted, project_to_subspace


@dataclass
class AdmmConfig:
    lambda_tv: float = 1e-3
    rho: float = 1.0
    max_iters: int = 30
    cg_iters: int = 8
    tol: float = 1e-4
    dtype: str = "complex64"

    def __post_init__(self):
        if self.lambda_tv < 0 or self.rho <= 0 or self.max_iters < 1 or self.tol <= 0:
            raise ValueError("invalid ADMM configuration")
        if self.dtype not in ("complex64", "complex128"):
            raise ValueError("dtype must be complex64 or complex128")


def recon_zero_filled(ks, coils, phi, protocol=None):
    """Adjoint reconstruction projected onto the temporal subspace."""
    imgs = adjoint_operator(ks.data, coils.maps, ks.mask.mask)
    u0 = project_to_subspace(imgs, phi)
    return compose_weighted(u0, phi, protocol=protocol)


def _grad3(u):
    """Forward finite differences along the three spatial axes."""
    g = np.zeros((3,) + u.shape, dtype=u.dtype)
    g[0, :-1] = u[1:] - u[:-1]
    g[1][:, :-1] = u[:, 1:] - u[:, :-1]
    g[2][:, :, :-1] = u[:, :, 1:] - u[:, :, :-1]
    return g


def _grad3_adj(g):
    """Adjoint of :func:`_grad3` (negative divergence)."""
    out = np.zeros(g.shape[1:], dtype=g.dtype)
    out[:-1] -= g[0, :-1]
    out[1:] += g[0, :-1]
    out[:, :-1] -= g[1][:, :-1]
    out[:, 1:] += g[1][:, :-1]
    out[:, :, :-1] -= g[2][:, :, :-1]
    out[:, :, 1:] += g[2][:, :, :-1]
    return out


def _cdot(a, b):
    return float(np.real(np.vdot(a, b)))


def recon_lrt_admm(ks, coils, phi, cfg: AdmmConfig, verbose=False) -> SpatialBases:
    """Low-rank subspace reconstruction with an isotropic TV prior.

    Solves argmin_U 0.5 ||S - MFC(Phi x U)||^2 + lambda_tv TV(U) by ADMM
    with the TV split variable on the spatial gradients of U; the U update
    is solved by conjugate gradients.
    """
    phi_arr = phi.phi if hasattr(phi, "phi") else phi
    mask = ks.mask.mask
    cdtype = np.dtype(cfg.dtype)
    cmaps = coils.maps.astype(cdtype)
    phi_c = phi_arr.astype(cdtype)
    K, T = phi_c.shape
    h, wdim, d = mask.shape[:3]

    aty = adjoint_operator(ks.data.astype(cdtype), cmaps, mask) @ phi_c.conj().T
    u = np.zeros_like(aty)
    z = _grad3(u)
    w = np.zeros_like(z)
    rho = cfg.rho

    # The frame axis of AᴴA contracts analytically: per k-space point only
    # the mask-weighted Gram of the temporal basis matters, so the FFTs run
    # over K basis channels instead of T frames.
    pp = (phi_c.T[:, :, None] * phi_c.conj().T[:, None, :]).reshape(T, K * K)
    if bool((mask == mask[:, :, :1, :]).all()):
        m2 = mask[:, :, :1, :].reshape(-1, T)  # in-plane mask: share over D
        gram = (m2.astype(cdtype) @ pp).reshape(h, wdim, 1, K, K)
    else:
        gram = (mask.reshape(-1, T).astype(cdtype) @ pp).reshape(h, wdim, d, K, K)

    def normal_op(x):
        cimg = cmaps[..., :, None] * x[..., None, :]
        y = fft3c(cimg)
        y = np.matmul(y, gram)
        img = ifft3c(y)
        data_term = (cmaps.conj()[..., :, None] * img).sum(-2)
        return data_term + rho * _grad3_adj(_grad3(x))

    def cg_solve(rhs, x0):
        x = x0
        r = rhs - normal_op(x)
        p = r.copy()
        rs = _cdot(r, r)
        if rs == 0:
            return x
        for _ in range(cfg.cg_iters):
            ap = normal_op(p)
            alpha = rs / max(_cdot(p, ap), 1e-300)
            x = x + alpha * p
            r = r - alpha * ap
            rs_new = _cdot(r, r)
            if rs_new < 1e-14 * rs:
                break
            p = r + (rs_new / rs) * p
            rs = rs_new
        return x

    primal_trace = []
    grow = 0
    for it in range(cfg.max_iters):
        u = cg_solve(aty + rho * _grad3_adj(z - w), u)
        gu = _grad3(u)
        v = gu + w
        if cfg.lambda_tv > 0:
            # isotropic group shrinkage over the 3 gradient directions,
            # real and imaginary parts jointly
            mag = np.sqrt((np.abs(v) ** 2).sum(axis=0, keepdims=True))
            z = v * np.maximum(1.0 - (cfg.lambda_tv / rho) / np.maximum(mag, 1e-30), 0.0)
        else:
            z = v
        w = w + gu - z
        primal = float(np.linalg.norm(gu - z) / max(np.linalg.norm(gu), 1e-30))
        primal_trace.append(primal)
        if verbose:
            print(f"admm iter {it}: primal residual {primal:.3e}")
        if len(primal_trace) > 1 and primal > primal_trace[-2]:
            grow += 1
            if grow >= 10:
                raise RuntimeError(
                    f"ADMM diverged: primal residual grew for 10 iterations, trace={primal_trace}")
        else:
            grow = 0
        if primal < cfg.tol:
            break
    return SpatialBases(u=u)


# ---------------------------------------------------------------------------
# voxelwise nonlinear least-squares fitting


def _vfa_model(p, protocol_frames, tr_ms):
    """Frames for packed VFA parameters [log a, log t1, log t2s, phi0, freq]."""
    alpha, te, _, _ = protocol_frames
    logs = np.clip(p[:, :3], -50.0, 50.0)  # keep trial steps finite
    a, t1, t2s = np.exp(logs).T
    return steady_state_frames(np, a, t1, t2s, p[:, 3], p[:, 4], tr_ms, alpha, te)


def _t2ir_model(p, protocol_frames, tr_ms):
    """Frames for [log a, log b, log t1, log t2, log t2s, phi0, freq]."""
    alpha, te, tau, seg = protocol_frames
    logs = np.clip(p[:, :5], -50.0, 50.0)  # keep trial steps finite
    a, b, t1, t2, t2s = np.exp(logs).T
    base = steady_state_frames(np, a, t1, t2s, p[:, 5], p[:, 6], tr_ms, alpha, te)
    return base * t2ir_bracket(np, b, t1, t2, tr_ms, alpha, tau, seg)


def _stack_reim(x):
    return np.concatenate([x.real, x.imag], axis=-1)


def _lm_fit(p0, target, model_fn, max_iter=60, step_tol=1e-10):
    """Batched Levenberg-Marquardt over voxels with FD Jacobians."""
    p = p0.copy()
    n_par = p.shape[1]
    resid = _stack_reim(model_fn(p)) - target
    cost = (resid**2).sum(1)
    lam = np.full(p.shape[0], 1e-3)
    converged = np.zeros(p.shape[0], dtype=bool)

    for _ in range(max_iter):
        if converged.all():
            break
        jac = np.empty(resid.shape + (n_par,))
        for j in range(n_par):
            h = 1e-6 * np.maximum(np.abs(p[:, j]), 1e-3)
            pj = p.copy()
            pj[:, j] += h
            jac[:, :, j] = (_stack_reim(model_fn(pj)) - target - resid) / h[:, None]
        jtj = np.einsum("vtp,vtq->vpq", jac, jac)
        jtr = np.einsum("vtp,vt->vp", jac, resid)
        diag = np.maximum(np.einsum("vpp->vp", jtj), 1e-12)
        damped = jtj + lam[:, None, None] * diag[:, :, None] * np.eye(n_par)
        try:
            delta = np.linalg.solve(damped, jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            delta = np.stack([np.linalg.lstsq(m, r, rcond=None)[0]
                              for m, r in zip(damped, jtr)])
        p_new = p - delta
        resid_new = _stack_reim(model_fn(p_new)) - target
        cost_new = (resid_new**2).sum(1)
        improved = cost_new < cost
        step = improved & ~converged
        p[step] = p_new[step]
        resid[step] = resid_new[step]
        rel_drop = np.zeros_like(cost)
        nz = cost > 0
        rel_drop[nz] = (cost[nz] - np.minimum(cost_new, cost)[nz]) / cost[nz]
        cost[step] = cost_new[step]
        lam[improved] = np.maximum(lam[improved] / 3.0, 1e-12)
        lam[~improved] = np.minimum(lam[~improved] * 4.0, 1e12)
        small_step = (np.abs(delta).max(1) < step_tol) | (improved & (rel_drop < 1e-14))
        converged |= small_step
    return p, cost, converged


def _vfa_init(sig, protocol: SequenceProtocol):
    """Analytic starting point: log-linear T2* decay plus a DESPOT1 line fit."""
    n_flip = len(protocol.flip_deg)
    n_te = len(protocol.te_ms)
    te = np.asarray(protocol.te_ms)
    flips = np.deg2rad(protocol.flip_deg)
    s = sig.reshape(-1, n_flip, n_te)
    mag = np.maximum(np.abs(s), 1e-30)
    logm = np.log(mag)

    te_c = te - te.mean()
    denom = (te_c**2).sum()
    slope = (logm * te_c).sum(-1) / denom  # (V, n_flip)
    intercept = logm.mean(-1) - slope * te.mean()
    wgt = mag.mean(-1)
    wsum = np.maximum(wgt.sum(-1, keepdims=True), 1e-30)
    slope_avg = (slope * wgt).sum(-1) / wsum[:, 0]
    t2s0 = np.clip(-1.0 / np.minimum(slope_avg, -1e-6), 2.0, 3000.0)

    s0 = np.exp(intercept)  # per-flip TE=0 amplitude
    y = s0 / np.sin(flips)
    x = s0 / np.tan(flips)
    xm = x.mean(-1, keepdims=True)
    ym = y.mean(-1, keepdims=True)
    varx = np.maximum(((x - xm) ** 2).sum(-1), 1e-30)
    e1 = np.clip(((x - xm) * (y - ym)).sum(-1) / varx, 1e-6, 1.0 - 1e-6)
    t10 = np.clip(-protocol.tr_ms / np.log(e1), 50.0, 10000.0)
    a0 = np.clip((ym[:, 0] - e1 * xm[:, 0]) / (1.0 - e1), 1e-6, None)

    ph = np.unwrap(np.angle(s[:, 0, :]), axis=-1)
    fslope = (ph * te_c).sum(-1) / denom
    freq0 = 1000.0 * fslope / (2.0 * np.pi)
    phi00 = ph.mean(-1) - fslope * te.mean()
    phi00 = np.angle(np.exp(1j * phi00))
    return np.stack([np.log(a0), np.log(t10), np.log(t2s0), phi00, freq0], axis=1)


def _t2ir_init(sig, protocol: SequenceProtocol):
    """Coarse starting point from the late-segment steady state."""
    n_tau = len(protocol.tau_ms)
    n_seg = protocol.n_segments
    n_te = len(protocol.te_ms)
    te = np.asarray(protocol.te_ms)
    s = sig.reshape(-1, n_tau, n_seg, n_te)
    late = s[:, :, -1, :].mean(1)  # (V, n_te), bracket ~ 1
    mag = np.maximum(np.abs(late), 1e-30)
    logm = np.log(mag)
    te_c = te - te.mean()
    slope = (logm * te_c).sum(-1) / (te_c**2).sum()
    t2s0 = np.clip(-1.0 / np.minimum(slope, -1e-6), 2.0, 3000.0)
    s0 = np.exp(logm.mean(-1) - slope * te.mean())

    alpha = np.deg2rad(protocol.flip_deg[0])
    t10 = np.full(s.shape[0], 1000.0)
    e1 = np.exp(-protocol.tr_ms / t10)
    amp = (1 - e1) * np.sin(alpha) / (1 - e1 * np.cos(alpha))
    a0 = np.clip(s0 / np.maximum(amp, 1e-30), 1e-6, None)

    ph = np.unwrap(np.angle(late), axis=-1)
    fslope = (ph * te_c).sum(-1) / (te_c**2).sum()
    freq0 = 1000.0 * fslope / (2.0 * np.pi)
    phi00 = np.angle(np.exp(1j * (ph.mean(-1) - fslope * te.mean())))
    return np.stack([
        np.log(a0), np.log(np.full_like(a0, 0.9)), np.log(t10),
        np.log(np.full_like(a0, 100.0)), np.log(t2s0), phi00, freq0,
    ], axis=1)


def fit_maps_nlls(iw: WeightedImages, protocol: SequenceProtocol, init=None,
                  mask=None, max_iter=60) -> ParametricMaps:
    """Voxelwise LM fit of the active Bloch model to complex weighted images.

    Voxels outside the mask (default: voxels with zero signal energy) are
    left at zero.  Without an explicit init, a multi-start over three T1
    seeds around an analytic starting point is used and the best-residual
    fit kept per voxel.
    """
    if iw.protocol.kind != protocol.kind:
        raise ValueError("weighted images do not match the protocol")
    data = iw.data
    shape = data.shape[:3]
    flat = data.reshape(-1, data.shape[-1])
    if mask is None:
        sel = (np.abs(flat) ** 2).sum(1) > 0
    else:
        sel = np.asarray(mask).reshape(-1).astype(bool)
    sig = flat[sel]
    target = _stack_reim(sig)
    frames = protocol.frame_arrays()

    if protocol.kind == VFA_MEGRE:
        model = lambda p: _vfa_model(p, frames, protocol.tr_ms)
        t1_col = 1
    else:
        model = lambda p: _t2ir_model(p, frames, protocol.tr_ms)
        t1_col = 2

    if init is not None:
        d = init.as_dict() if hasattr(init, "as_dict") else init
        cols = [np.log(np.maximum(d["a"].reshape(-1)[sel], 1e-12))]
        if protocol.kind == T2IR_GRE:
            cols.append(np.log(np.maximum(d["b"].reshape(-1)[sel], 1e-12)))
        cols.append(np.log(np.maximum(d["t1"].reshape(-1)[sel], 1e-12)))
        if protocol.kind == T2IR_GRE:
            cols.append(np.log(np.maximum(d["t2"].reshape(-1)[sel], 1e-12)))
        cols.append(np.log(np.maximum(d["t2s"].reshape(-1)[sel], 1e-12)))
        cols.append(d["phi0"].reshape(-1)[sel])
        cols.append(d["freq"].reshape(-1)[sel])
        starts = [np.stack(cols, axis=1)]
    else:
        p_base = (_vfa_init if protocol.kind == VFA_MEGRE else _t2ir_init)(sig, protocol)
        starts = []
        for fac in (0.5, 1.0, 2.0):
            p = p_base.copy()
            p[:, t1_col] += np.log(fac)
            starts.append(p)

    best_p = best_cost = best_conv = None
    for p0 in starts:
        p, cost, conv = _lm_fit(p0, target, model, max_iter=max_iter)
        if best_p is None:
            best_p, best_cost, best_conv = p, cost, conv
        else:
            better = cost < best_cost
            best_p[better] = p[better]
            best_cost[better] = cost[better]
            best_conv[better] = conv[better]

    def vol(values):
        out = np.zeros(np.prod(shape))
        out[sel] = values
        return out.reshape(shape)

    if protocol.kind == VFA_MEGRE:
        pe = np.exp(np.clip(best_p[:, :3], -50.0, 50.0))
        maps = ParametricMaps(
            a_map=vol(pe[:, 0]), t1_map=vol(pe[:, 1]), t2s_map=vol(pe[:, 2]),
            phi0_map=vol(best_p[:, 3]), freq_map=vol(best_p[:, 4]),
        )
    else:
        pe = np.exp(np.clip(best_p[:, :5], -50.0, 50.0))
        maps = ParametricMaps(
            a_map=vol(pe[:, 0]), b_map=vol(pe[:, 1]), t1_map=vol(pe[:, 2]),
            t2_map=vol(pe[:, 3]), t2s_map=vol(pe[:, 4]),
            phi0_map=vol(best_p[:, 5]), freq_map=vol(best_p[:, 6]),
        )
    maps.n_nonconverged = int((~best_conv).sum())
    return maps
