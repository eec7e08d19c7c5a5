"""Temporal subspace extraction and low-rank (de)composition.

The temporal basis holds the top-K right singular vectors of a signal
dictionary; weighted images factor as I_w(v, t) = sum_k U(v, k) Phi(k, t).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class TemporalBasis:
    """Orthonormal temporal factor, (K x T), plus the full singular spectrum."""

    phi: np.ndarray
    singular_values: np.ndarray
    K: int

    def captured_energy(self, k=None) -> float:
        """Fraction of dictionary energy captured by the leading k vectors."""
        k = self.K if k is None else k
        s2 = self.singular_values**2
        return float(s2[:k].sum() / s2.sum())


@dataclass
class SpatialBases:
    """Spatial factor volumes, (H, W, D, K)."""

    u: np.ndarray

    @property
    def K(self) -> int:
        return self.u.shape[-1]


def temporal_basis(dictionary, K) -> TemporalBasis:
    """Top-K right singular vectors of a (rows x T) signal dictionary."""
    dictionary = np.asarray(dictionary)
    K = int(K)
    if not 1 <= K <= min(dictionary.shape):
        raise ValueError(f"K={K} out of range for dictionary shape {dictionary.shape}")
    _, s, vh = np.linalg.svd(dictionary, full_matrices=False)
    return TemporalBasis(phi=vh[:K], singular_values=s, K=K)


def compose_weighted(u, phi, protocol=None):
    """Assemble weighted images from spatial bases and a temporal basis.

    Returns the raw (H, W, D, T) array, or a WeightedImages when a
    protocol is supplied.
    """
    u_arr = u.u if isinstance(u, SpatialBases) else u
    phi_arr = phi.phi if isinstance(phi, TemporalBasis) else phi
    if u_arr.shape[-1] != phi_arr.shape[0]:
        raise ValueError(
            f"rank mismatch: U has K={u_arr.shape[-1]}, Phi has K={phi_arr.shape[0]}"
        )
    data = u_arr @ phi_arr
    if protocol is None:
        return data
    from mpqmri.signal_models import WeightedImages

    return WeightedImages(data=data, protocol=protocol)


def project_to_subspace(iw, phi) -> SpatialBases:
    """Least-squares spatial bases U = I_w Phi^H (Phi has orthonormal rows)."""
    data = iw.data if hasattr(iw, "data") else iw
    phi_arr = phi.phi if isinstance(phi, TemporalBasis) else phi
    if data.shape[-1] != phi_arr.shape[-1]:
        raise ValueError(
            f"frame mismatch: images have T={data.shape[-1]}, Phi has T={phi_arr.shape[-1]}"
        )
    return SpatialBases(u=data @ phi_arr.conj().T)
