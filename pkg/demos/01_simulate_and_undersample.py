"""Simulate a quantitative MRI acquisition and look at the pieces.

Walks through the forward side of the toolkit: a numerical brain phantom
with tissue parameter maps, the VFA-mEGRE signal model that turns those
maps into a 60-frame weighted image series, the low-rank temporal
subspace of that series, and undersampled multi-coil k-space.

Run from the repository root:

    python3 demos/01_simulate_and_undersample.py
"""

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mpqmri.acquisition import acceleration_factor, add_noise, forward, make_mask
from mpqmri.phantom import make_coil_maps, make_phantom
from mpqmri.signal_models import (
    build_dictionary,
    dataset1_protocol,
    default_dictionary_grid,
    signal_vfa_megre,
)
from mpqmri.subspace import compose_weighted, project_to_subspace, temporal_basis

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

# ---------------------------------------------------------------------------
# A 64x64x8 phantom: ellipsoidal brain with WM/GM/CSF/lesion regions, each
# carrying literature T1/T2/T2* values, plus smooth phase and off-resonance.
shape = (64, 64, 8)
gt = make_phantom(shape, seed=7)
print("tissue T1 range inside the brain:",
      gt.t1_map[gt.brain_mask].min(), "-", gt.t1_map[gt.brain_mask].max(), "ms")

# The acquisition protocol: 5 flip angles x 12 echoes = 60 frames.
protocol = dataset1_protocol()
print("frames:", protocol.n_frames,
      "flip angles:", protocol.flip_deg, "first TE:", protocol.te_ms[0], "ms")

# Bloch steady-state signal for every voxel and frame.
iw = signal_vfa_megre(gt, protocol)
print("weighted image series:", iw.data.shape, iw.data.dtype)

# ---------------------------------------------------------------------------
# The signal evolutions live near a low-dimensional subspace.  A dictionary
# of plausible (T1, T2*) signal curves gives the temporal basis by SVD.
dictionary = build_dictionary(protocol, default_dictionary_grid(protocol))
phi = temporal_basis(dictionary, K=15)
print(f"K=15 captures {100 * phi.captured_energy():.4f}% of dictionary energy")

u = project_to_subspace(iw, phi)
roundtrip = compose_weighted(u, phi)
rel = np.linalg.norm(roundtrip - iw.data) / np.linalg.norm(iw.data)
print(f"compose(project(I_w)) relative error: {rel:.2e}")

# ---------------------------------------------------------------------------
# Eight smooth coil sensitivities and a variable-density sampling mask at
# twelve-fold acceleration; complex Gaussian noise at 0.5% of peak k-space.
coils = make_coil_maps(shape, 8, seed=11)
mask = make_mask(shape + (protocol.n_frames,), "VARIABLE_DENSITY", 12.0, seed=3)
print(f"target R=12, achieved R={acceleration_factor(mask):.2f}")

ks = forward(iw, coils, mask)
sigma = 0.005 * np.abs(ks.data).max()
ks = add_noise(ks, sigma, seed=1)

# ---------------------------------------------------------------------------
# A quick look: one slice of T1, one weighted frame, the sampling pattern,
# and the log-magnitude of one coil's k-space.
z = shape[2] // 2
fig, axes = plt.subplots(1, 4, figsize=(14, 3.5))
axes[0].imshow(gt.t1_map[:, :, z], cmap="gray")
axes[0].set_title("T1 (ms)")
axes[1].imshow(np.abs(iw.data[:, :, z, 0]), cmap="gray")
axes[1].set_title("frame 0 magnitude")
axes[2].imshow(mask.mask[:, :, 0, 0], cmap="gray")
axes[2].set_title("mask, frame 0")
axes[3].imshow(np.log1p(1e3 * np.abs(ks.data[:, :, z, 0, 0])), cmap="gray")
axes[3].set_title("coil-0 k-space (log)")
for ax in axes:
    ax.set_xticks([])
    ax.set_yticks([])
fig.tight_layout()
path = os.path.join(OUT, "simulation.png")
fig.savefig(path, dpi=110)
print("wrote", path)
