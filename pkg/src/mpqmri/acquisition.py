"""Forward measurement operator, sampling masks, and noise injection.

k-space is modeled per coil and frame as mask * FFT3(coil * image) with a
centered, orthonormal 3D Fourier transform, so the adjoint equals the
inverse on fully sampled data.  The low-level operator functions accept
either NumPy arrays or torch tensors; the dataclass wrappers are
NumPy-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FULL = "FULL"
UNIFORM_RANDOM = "UNIFORM_RANDOM"
VARIABLE_DENSITY = "VARIABLE_DENSITY"
COMPLEMENTARY_SHIFT = "COMPLEMENTARY_SHIFT"
PATTERNS = (FULL, UNIFORM_RANDOM, VARIABLE_DENSITY, COMPLEMENTARY_SHIFT)


@dataclass
class SamplingMask:
    """Binary k-space sampling pattern, (H, W, D, T)."""

    mask: np.ndarray
    pattern: str
    seed: int
    calib_region: tuple = (0, 0, 0)


@dataclass
class KSpaceData:
    """Multi-coil, multi-frame k-space, (H, W, D, C, T), zero where unsampled."""

    data: np.ndarray
    mask: SamplingMask
    noise_sigma: float = 0.0


def _np_fft3c(x, axes, inverse):
    from scipy import fft as sfft

    fn = sfft.ifftn if inverse else sfft.fftn
    y = fn(np.fft.ifftshift(x, axes=axes), axes=axes, norm="ortho", workers=-1)
    return np.fft.fftshift(y, axes=axes)


def _torch_fft3c(x, axes, inverse):
    """Centered orthonormal FFT for tensors, dispatched through pocketfft.

    The transform is unitary, so its vector-Jacobian product is the inverse
    transform; that lets the much faster CPU FFT from scipy back a custom
    autograd function instead of torch.fft.
    """
    import torch

    class _Fft(torch.autograd.Function):
        @staticmethod
        def forward(ctx, t):
            y = _np_fft3c(t.detach().resolve_conj().numpy(), axes, inverse)
            return torch.from_numpy(y)

        @staticmethod
        def backward(ctx, grad):
            g = _np_fft3c(grad.resolve_conj().numpy(), axes, not inverse)
            return torch.from_numpy(g)

    if not x.is_complex():
        x = x.to(torch.complex64 if x.dtype == torch.float32 else torch.complex128)
    return _Fft.apply(x)


def fft3c(x, axes=(0, 1, 2)):
    """Centered orthonormal 3D FFT over the given axes."""
    if isinstance(x, np.ndarray):
        return _np_fft3c(x, axes, inverse=False)
    return _torch_fft3c(x, axes, inverse=False)


def ifft3c(x, axes=(0, 1, 2)):
    """Inverse of :func:`fft3c`."""
    if isinstance(x, np.ndarray):
        return _np_fft3c(x, axes, inverse=True)
    return _torch_fft3c(x, axes, inverse=True)


def _check_shapes(iw_shape, coil_shape, mask_shape):
    for ax in range(3):
        if not iw_shape[ax] == coil_shape[ax] == mask_shape[ax]:
            raise ValueError(
                f"spatial axis {ax} mismatch: images {iw_shape[ax]}, "
                f"coils {coil_shape[ax]}, mask {mask_shape[ax]}"
            )
    if iw_shape[3] != mask_shape[3]:
        raise ValueError(
            f"frame axis mismatch: images {iw_shape[3]}, mask {mask_shape[3]}"
        )


def forward_operator(iw, coils, mask):
    """Apply mask * FFT3(coils * images); array-library agnostic.

    iw: (H, W, D, T); coils: (H, W, D, C); mask: (H, W, D, T) ->
    (H, W, D, C, T).
    """
    _check_shapes(iw.shape, coils.shape, mask.shape)
    cimg = coils[..., :, None] * iw[..., None, :]
    ks = fft3c(cimg)
    return ks * mask[..., None, :]


def adjoint_operator(ks, coils, mask):
    """Exact adjoint of :func:`forward_operator` under the l2 inner product."""
    masked = ks * mask[..., None, :]
    imgs = ifft3c(masked)
    return (coils.conj()[..., :, None] * imgs).sum(-2)


def forward(iw, coils, mask: SamplingMask) -> KSpaceData:
    """Simulate undersampled multi-coil k-space from weighted images."""
    data = forward_operator(iw.data, coils.maps, mask.mask)
    return KSpaceData(data=data, mask=mask)


def adjoint(ks: KSpaceData, coils, protocol=None):
    """Coil-combined zero-filled image series from k-space data.

    Returns the raw (H, W, D, T) array, or a WeightedImages when a
    protocol is supplied.
    """
    data = adjoint_operator(ks.data, coils.maps, ks.mask.mask)
    if protocol is None:
        return data
    from mpqmri.signal_models import WeightedImages

    return WeightedImages(data=data, protocol=protocol)


def _variable_density_probs(h, w, sigma_frac):
    ky = (np.arange(h) - h // 2) / h
    kx = (np.arange(w) - w // 2) / w
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    p = np.exp(-k2 / (2.0 * sigma_frac**2)).ravel()
    return p / p.sum()


def make_mask(shape, pattern, target_R, calib_region=(0, 0, 0), seed=0,
              in_plane=True, sigma_frac=0.25) -> SamplingMask:
    """Generate a sampling mask achieving the target acceleration within 2%.

    With in_plane=True (the default) the undersampling lives in the (H, W)
    plane of each frame and the D axis is fully sampled; in_plane=False
    draws points over the whole 3D grid.
    """
    h, w, d, T = (int(s) for s in shape)
    if pattern not in PATTERNS:
        raise ValueError(f"unknown pattern {pattern!r}")
    if target_R < 1:
        raise ValueError("target_R must be >= 1")
    rng = np.random.default_rng(seed)
    mask = np.zeros((h, w, d, T), dtype=bool)

    if pattern == FULL:
        mask[:] = True
        return SamplingMask(mask=mask, pattern=pattern, seed=seed, calib_region=tuple(calib_region))

    if pattern == COMPLEMENTARY_SHIFT:
        stride = int(round(target_R))
        if stride > h:
            raise ValueError("target_R exceeds the number of phase-encode lines")
        for t in range(T):
            mask[t % stride :: stride, :, :, t] = True
    else:
        budget = h * w if in_plane else h * w * d
        n_keep = int(round(budget / target_R))
        if n_keep < 1:
            raise ValueError("target_R exceeds the per-frame point budget")
        if pattern == VARIABLE_DENSITY:
            if in_plane:
                p = _variable_density_probs(h, w, sigma_frac)
            else:
                p2 = _variable_density_probs(h, w, sigma_frac).reshape(h, w)
                p = np.repeat(p2[..., None], d, axis=-1).ravel()
                p = p / p.sum()
        else:
            p = None
        for t in range(T):
            idx = rng.choice(budget, size=n_keep, replace=False, p=p)
            frame = np.zeros(budget, dtype=bool)
            frame[idx] = True
            if in_plane:
                mask[:, :, :, t] = frame.reshape(h, w)[:, :, None]
            else:
                mask[:, :, :, t] = frame.reshape(h, w, d)

    ch, cw, cd = (int(c) for c in calib_region)
    if ch or cw or cd:
        sl = tuple(
            slice((n - c) // 2, (n - c) // 2 + c) if c else slice(None)
            for n, c in zip((h, w, d), (ch, cw, cd))
        )
        mask[sl[0], sl[1], sl[2], :] = True
    return SamplingMask(mask=mask, pattern=pattern, seed=seed, calib_region=tuple(calib_region))


def acceleration_factor(mask: SamplingMask) -> float:
    """Unified acceleration factor: total points / sampled points."""
    n_sampled = int(mask.mask.sum())
    if n_sampled == 0:
        raise ValueError("mask samples no points")
    return mask.mask.size / n_sampled


def add_noise(ks: KSpaceData, sigma, seed) -> KSpaceData:
    """Add i.i.d. complex Gaussian noise at sampled k-space locations."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return KSpaceData(data=ks.data.copy(), mask=ks.mask, noise_sigma=0.0)
    rng = np.random.default_rng(seed)
    shape = ks.data.shape
    noise = sigma * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    noise *= ks.mask.mask[..., None, :]
    return KSpaceData(data=ks.data + noise, mask=ks.mask, noise_sigma=float(sigma))
