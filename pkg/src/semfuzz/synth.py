"""Synthetic Gaussian corpora with known covariance spectra.

Used by the PCA and novelty tests and by the demo scripts.  Each generator
draws samples from N(mu, Q diag(lam) Q^T) with a random orthonormal basis Q,
so the true principal subspace and retained-variance curve are known in
closed form.
"""

from __future__ import annotations

import numpy as np

from .semantic import EMBED_DIM


def random_basis(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Random orthonormal basis via QR of a Gaussian matrix (columns)."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    # fix signs so the basis is a deterministic function of the Gaussian draw
    return q * np.sign(np.diag(r))


def gaussian_corpus(
    n: int,
    eigenvalues: np.ndarray,
    rng: np.random.Generator,
    mean_scale: float = 1.0,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Sample n points with the given covariance spectrum.

    Returns (samples, basis, mean); basis columns are the true principal
    directions ordered by ``eigenvalues`` descending.
    """
    lam = np.asarray(eigenvalues, dtype=float)
    if np.any(lam < 0):
        raise ValueError("eigenvalues must be non-negative")
    dim = lam.shape[0]
    basis = random_basis(dim, rng)
    mean = mean_scale * rng.standard_normal(dim)
    z = rng.standard_normal((n, dim))
    samples = mean + (z * np.sqrt(lam)) @ basis.T
    return samples, basis, mean


def spiked_spectrum(
    dim: int = EMBED_DIM, n_spikes: int = 64, spike: float = 2.0, noise: float = 0.02
) -> np.ndarray:
    """n_spikes strong directions over a flat weak floor.

    With the defaults the top-64 subspace carries 128/142.1 ~ 0.90 of the
    variance and the eigengap is wide, so both the subspace and the retained
    fraction are comfortably estimable from a few thousand samples.
    """
    lam = np.full(dim, noise)
    lam[:n_spikes] = spike
    return lam


def geometric_spectrum(dim: int = EMBED_DIM, ratio: float = 0.5) -> np.ndarray:
    """lam_i = ratio**i, i = 0..dim-1."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must lie in (0,1)")
    return ratio ** np.arange(dim, dtype=float)


def geometric_retained(d: int, dim: int = EMBED_DIM, ratio: float = 0.5) -> float:
    """Closed-form retained-variance fraction of the top d components."""
    return float((1.0 - ratio**d) / (1.0 - ratio**dim))


def random_unit_vectors(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """n rows, each L2-normalized; zero draws are off the probability-0 path."""
    x = rng.standard_normal((n, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)
