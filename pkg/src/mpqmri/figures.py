"""Figure emission: map row, signed error row, NRMSE captions."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from mpqmri import tensorio
from mpqmri.experiment import GT_MAP_NAMES
from mpqmri.metrics import nrmse


def _load(path):
    if not os.path.exists(path + ".json"):
        raise FileNotFoundError(f"missing artifact: {path}.json")
    return tensorio.load_tensor(path)


def emit_figures(result_dir, clamps=None):
    """One figure per (R, map type): ground truth, reconstructions, errors.

    Maps use a grayscale colormap; error maps use a diverging colormap with
    symmetric limits about zero and carry the masked NRMSE in the title.
    Returns the list of written image paths.
    """
    clamps = clamps or {}
    sim_dir = os.path.join(result_dir, "sim")
    mask = _load(os.path.join(sim_dir, "brain_mask")) > 0.5
    written = []
    rdirs = sorted(d for d in os.listdir(result_dir)
                   if d.startswith("R") and os.path.isdir(os.path.join(result_dir, d)))
    fig_dir = os.path.join(result_dir, "figures")
    os.makedirs(fig_dir, exist_ok=True)

    for rdir in rdirs:
        methods = sorted(
            m for m in os.listdir(os.path.join(result_dir, rdir))
            if os.path.isdir(os.path.join(result_dir, rdir, m)))
        if not methods:
            continue
        for name in sorted(GT_MAP_NAMES):
            if not os.path.exists(os.path.join(
                    result_dir, rdir, methods[0], name + ".json")):
                continue
            gt = _load(os.path.join(sim_dir, f"gt_{name}"))
            z = gt.shape[2] // 2
            ncols = 1 + len(methods)
            fig, axes = plt.subplots(2, ncols, figsize=(3 * ncols, 6))
            vmax = np.percentile(np.abs(gt[mask]), 99) if mask.any() else 1.0
            axes[0, 0].imshow(gt[:, :, z], cmap="gray", vmin=0, vmax=vmax)
            axes[0, 0].set_title(f"{name} ground truth")
            axes[1, 0].axis("off")
            for j, method in enumerate(methods, start=1):
                pred = _load(os.path.join(result_dir, rdir, method, name))
                err = np.where(mask, pred - gt, 0.0)
                e = max(float(np.abs(err).max()), 1e-12)
                score = nrmse(pred, gt, clamp=clamps.get(name), mask=mask)
                axes[0, j].imshow(np.where(mask, pred, 0.0)[:, :, z],
                                  cmap="gray", vmin=0, vmax=vmax)
                axes[0, j].set_title(method)
                im = axes[1, j].imshow(err[:, :, z], cmap="RdBu_r", vmin=-e, vmax=e)
                axes[1, j].set_title(f"NRMSE {100 * score:.2f}%")
                fig.colorbar(im, ax=axes[1, j], fraction=0.046)
            for ax in axes.ravel():
                ax.set_xticks([])
                ax.set_yticks([])
            out = os.path.join(fig_dir, f"{rdir}_{name}.png")
            fig.tight_layout()
            fig.savefig(out, dpi=110)
            plt.close(fig)
            written.append(out)
    return written
