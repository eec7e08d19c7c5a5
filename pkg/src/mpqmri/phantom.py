"""Digital brain-like phantoms and simulated coil sensitivity maps.

The phantom is piecewise constant over a handful of ellipsoidal tissue
regions (white matter, gray matter, CSF, one lesion) with literature-
plausible 3T relaxation values, plus smooth off-resonance and initial-phase
fields.  Coil sensitivities are smooth complex Gaussian bumps placed on a
ring around the volume, normalized so that the root-sum-of-squares over
coils is one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

# region labels
BACKGROUND, WM, GM, CSF, LESION = 0, 1, 2, 3, 4

# per-tissue (t1_ms, t2_ms, t2s_ms, a) values; B is uniform in-brain
TISSUE_TABLE = {
    WM: (850.0, 70.0, 50.0, 0.8),
    GM: (1300.0, 90.0, 60.0, 0.9),
    CSF: (3800.0, 1500.0, 800.0, 1.0),
    LESION: (1100.0, 120.0, 35.0, 0.85),
}
B_VALUE = 0.95

# off-resonance amplitude (Hz).  Kept far below the 40 Hz hard cap so the
# per-echo phase roll stays representable inside a rank-15 temporal
# subspace built from an on-resonance dictionary.
DEFAULT_FREQ_MAX_HZ = 3.0
FREQ_CAP_HZ = 40.0


@dataclass
class GroundTruth:
    """Per-voxel quantitative tissue maps of a digital phantom."""

    a_map: np.ndarray
    b_map: np.ndarray
    t1_map: np.ndarray
    t2_map: np.ndarray
    t2s_map: np.ndarray
    phi0_map: np.ndarray
    freq_map: np.ndarray
    brain_mask: np.ndarray
    region_labels: np.ndarray

    @property
    def shape(self):
        return self.a_map.shape


@dataclass
class CoilMaps:
    """Complex coil sensitivities, (H, W, D, C), RSS-normalized in-brain."""

    maps: np.ndarray
    n_coils: int


def _check_shape(shape):
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3:
        raise ValueError(f"expected a 3D shape, got {shape}")
    if any(s < 8 for s in shape):
        raise ValueError(f"each dimension must be >= 8, got {shape}")
    return shape


def _ellipsoid(grid, center, semi_axes):
    """Boolean mask of an ellipsoid in normalized [0, 1]^3 coordinates."""
    x, y, z = grid
    cx, cy, cz = center
    ax, ay, az = semi_axes
    return ((x - cx) / ax) ** 2 + ((y - cy) / ay) ** 2 + ((z - cz) / az) ** 2 <= 1.0


def _smooth_field(shape, rng, sigma_frac=0.15):
    """Smooth zero-mean random field with peak magnitude 1."""
    f = rng.standard_normal(shape)
    sigma = [max(1.0, sigma_frac * s) for s in shape]
    f = gaussian_filter(f, sigma=sigma, mode="nearest")
    peak = np.max(np.abs(f))
    if peak > 0:
        f = f / peak
    return f


def make_phantom(shape, seed, freq_max_hz=DEFAULT_FREQ_MAX_HZ) -> GroundTruth:
    """Generate a deterministic piecewise-constant ellipsoidal brain phantom.

    Parameters
    ----------
    shape : (H, W, D) with every dimension >= 8.
    seed : RNG seed; identical (shape, seed) gives bit-identical output.
    freq_max_hz : peak magnitude of the off-resonance field, capped at 40 Hz.
    """
    shape = _check_shape(shape)
    if not 0.0 <= freq_max_hz <= FREQ_CAP_HZ:
        raise ValueError(f"freq_max_hz must lie in [0, {FREQ_CAP_HZ}]")
    rng = np.random.default_rng(seed)

    axes = [np.arange(s) / max(s - 1, 1) for s in shape]
    grid = np.meshgrid(*axes, indexing="ij")

    labels = np.zeros(shape, dtype=np.int64)
    brain = _ellipsoid(grid, (0.5, 0.5, 0.5), (0.42, 0.45, 0.46))
    wm = _ellipsoid(grid, (0.5, 0.5, 0.5), (0.32, 0.35, 0.38))
    csf = _ellipsoid(grid, (0.5, 0.45, 0.5), (0.08, 0.14, 0.28))
    # lesion position jittered by the seed, always inside white matter
    off = rng.uniform(-0.06, 0.06, size=2)
    lesion = _ellipsoid(grid, (0.62 + off[0], 0.6 + off[1], 0.5), (0.06, 0.07, 0.12))
    labels[brain] = GM
    labels[brain & wm] = WM
    labels[brain & wm & lesion] = LESION
    labels[brain & csf] = CSF
    mask = labels != BACKGROUND

    a_map = np.zeros(shape)
    t1_map = np.zeros(shape)
    t2_map = np.zeros(shape)
    t2s_map = np.zeros(shape)
    for lab, (t1, t2, t2s, a) in TISSUE_TABLE.items():
        sel = labels == lab
        t1_map[sel] = t1
        t2_map[sel] = t2
        t2s_map[sel] = t2s
        a_map[sel] = a
    b_map = np.where(mask, B_VALUE, 0.0)

    freq_map = freq_max_hz * _smooth_field(shape, rng)
    phi0_map = 0.5 * _smooth_field(shape, rng)
    freq_map[~mask] = 0.0
    phi0_map[~mask] = 0.0

    return GroundTruth(
        a_map=a_map,
        b_map=b_map,
        t1_map=t1_map,
        t2_map=t2_map,
        t2s_map=t2s_map,
        phi0_map=phi0_map,
        freq_map=freq_map,
        brain_mask=mask,
        region_labels=labels,
    )


def make_coil_maps(shape, n_coils, seed) -> CoilMaps:
    """Simulate smooth complex coil sensitivities on a ring around the volume.

    Gaussian-bump magnitude profiles with gentle per-coil phase ramps,
    low-pass filtered, phase-referenced to the first coil and RSS-normalized
    (so a single coil is identically one).
    """
    shape = _check_shape(shape)
    n_coils = int(n_coils)
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    rng = np.random.default_rng(seed)

    axes = [np.arange(s) / max(s - 1, 1) for s in shape]
    x, y, z = np.meshgrid(*axes, indexing="ij")

    maps = np.empty(shape + (n_coils,), dtype=np.complex128)
    sigma = 0.55
    for c in range(n_coils):
        ang = 2.0 * np.pi * c / n_coils
        cx = 0.5 + 0.6 * np.cos(ang)
        cy = 0.5 + 0.6 * np.sin(ang)
        cz = 0.5
        r2 = (x - cx) ** 2 + (y - cy) ** 2 + 0.25 * (z - cz) ** 2
        mag = np.exp(-r2 / (2.0 * sigma**2))
        # slow phase ramp pointing away from the coil center
        ramp = rng.uniform(0.5, 1.5)
        phase = ramp * ((x - cx) * np.cos(ang) + (y - cy) * np.sin(ang))
        prof = mag * np.exp(1j * phase)
        sm = [0.03 * s for s in shape]
        maps[..., c] = gaussian_filter(prof.real, sm, mode="nearest") + 1j * gaussian_filter(
            prof.imag, sm, mode="nearest"
        )

    # reference the common phase to coil 0, then normalize the RSS to one
    ref = maps[..., 0]
    phase0 = np.where(np.abs(ref) > 0, ref / np.maximum(np.abs(ref), 1e-30), 1.0)
    maps = maps * np.conj(phase0)[..., None]
    rss = np.sqrt(np.sum(np.abs(maps) ** 2, axis=-1))
    maps = maps / np.maximum(rss, 1e-30)[..., None]
    return CoilMaps(maps=maps, n_coils=n_coils)
