"""Expression-space PCA: the Teacher responder.

Fits an affine emotion subspace over flattened fixed-length keypoint
windows, keeping the smallest number of principal components whose
eigenvalue mass reaches the variance threshold.  Responses are projections
onto that subspace with per-component Gaussian improvisation noise scaled
by sqrt(eigenvalue).

Dimensions here are large (146 keypoints * 60 frames * 3 = 26,280), so the
eigendecomposition uses the snapshot (Gram) method on the M x M sample
Gram matrix instead of the D x D covariance.  Covariance normalization is
1/M, which sets the eigenvalue scale and therefore the noise scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator

from .core import ExpressionSequence, flatten, unflatten
from .exceptions import ArtifactFormatError, DegenerateDataError, FitError
from .validation import as_rng, check_sequence, check_training_set, check_vector

ESM_MAGIC = b"ESM1"
_ESM_HEADER = struct.Struct("<4sIIIQdd")  # magic, n_kp, T, k*, D, sigma, total_eigensum

# Relative tolerances: dropping numerically-zero eigenvalues, and the
# cumulative-fraction comparison at the threshold boundary.
_EIG_TOL = 1e-12
_FRACTION_TOL = 1e-12

DEFAULT_SIGMA = 0.1


@dataclass(frozen=True)
class NoiseSpec:
    """Improvisation noise configuration: scale and optional seed."""

    sigma: float = DEFAULT_SIGMA
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.rng_seed)


def select_rank(eigenvalues: np.ndarray, total: float, threshold: float) -> int:
    """Smallest k whose cumulative eigenvalue fraction reaches ``threshold``.

    ``eigenvalues`` must be sorted decreasing and contain only the nonzero
    spectrum; ``total`` is the full eigenvalue sum (discarded ones included).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"variance threshold must be in (0, 1], got {threshold}")
    fractions = np.cumsum(eigenvalues) / total
    for k, frac in enumerate(fractions, start=1):
        if frac >= threshold - _FRACTION_TOL:
            return k
    # Float noise can keep the full-spectrum fraction a hair under 1.0;
    # every representable direction is already included at this point.
    return len(eigenvalues)


class ExpressionSpacePCA(BaseEstimator):
    """PCA expression space with scaled-noise improvisation (the Teacher).

    Parameters
    ----------
    variance_threshold : float in (0, 1]
        Cumulative eigenvalue fraction that determines the retained rank.
    sigma : float
        Default improvisation noise scale used by :meth:`respond`.

    Fitted attributes: ``mean_`` (D,), ``components_`` (k*, D) orthonormal
    rows, ``eigenvalues_`` (k*,) decreasing, ``k_star_``,
    ``total_eigensum_``, ``window_`` (frames per sequence), ``n_kp_``.
    """

    def __init__(self, variance_threshold: float = 0.95, sigma: float = DEFAULT_SIGMA):
        self.variance_threshold = variance_threshold
        self.sigma = sigma

    # -- fitting ---------------------------------------------------------

    def fit(self, X: Sequence[ExpressionSequence], y=None):
        if not 0.0 < self.variance_threshold <= 1.0:
            raise FitError(
                f"variance_threshold must be in (0, 1], got {self.variance_threshold}"
            )
        n_frames, n_kp = check_training_set(X, min_samples=2)
        data = np.stack([flatten(s) for s in X])  # (M, D)
        m, dim = data.shape

        mean = data.mean(axis=0)
        centered = data - mean
        gram = centered @ centered.T / m  # (M, M), PSD
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = evals[order]
        evecs = evecs[:, order]
        evals = np.where(evals < 0, 0.0, evals)

        total = float(np.trace(gram))
        if total <= 0 or evals[0] <= 0:
            raise DegenerateDataError(
                "training data has zero variance; cannot fit an expression space"
            )
        nonzero = evals > evals[0] * _EIG_TOL
        evals_nz = evals[nonzero]
        evecs_nz = evecs[:, nonzero]

        k_star = select_rank(evals_nz, total, self.variance_threshold)
        kept_vals = evals_nz[:k_star]
        # Data-space directions: u_i = A w_i with A = centered.T, then
        # normalized (||A w_i|| = sqrt(M * lambda_i)).
        comps = centered.T @ evecs_nz[:, :k_star]  # (D, k*)
        comps /= np.linalg.norm(comps, axis=0)

        self.mean_ = mean
        self.components_ = comps.T.copy()  # (k*, D)
        self.eigenvalues_ = kept_vals.copy()
        self.k_star_ = int(k_star)
        self.total_eigensum_ = total
        self.window_ = n_frames
        self.n_kp_ = n_kp
        self.dim_ = dim
        return self

    @property
    def is_fitted(self) -> bool:
        return hasattr(self, "components_")

    def _check_input(self, seq: ExpressionSequence) -> np.ndarray:
        check_sequence(seq, n_kp=self.n_kp_, n_frames=self.window_)
        return flatten(seq)

    # -- projection and response -----------------------------------------

    def coefficients(self, seq: ExpressionSequence) -> np.ndarray:
        """Per-component coordinates of ``seq`` in the expression space."""
        return self.components_ @ (self._check_input(seq) - self.mean_)

    def reconstruct(
        self, coeffs: np.ndarray, template: ExpressionSequence
    ) -> ExpressionSequence:
        """Inverse of :meth:`coefficients`; timestamps come from ``template``."""
        coeffs = check_vector(coeffs, self.k_star_, "coeffs")
        vec = self.mean_ + self.components_.T @ coeffs
        return unflatten(vec, template)

    def project(self, seq: ExpressionSequence) -> ExpressionSequence:
        """Deterministic projection of ``seq`` onto the expression space."""
        return self.reconstruct(self.coefficients(seq), seq)

    def transform(self, X: Sequence[ExpressionSequence]) -> list[ExpressionSequence]:
        return [self.project(s) for s in X]

    def respond_coefficients(
        self, seq: ExpressionSequence, sigma: Optional[float] = None, rng=None
    ) -> tuple[np.ndarray, np.ndarray]:
        """(clean, noisy) coefficient vectors for one response draw.

        Noise per component j is sqrt(eigenvalue_j) * eps_j with
        eps_j ~ Normal(0, sigma^2), sampled once per response.
        """
        sigma = self.sigma if sigma is None else float(sigma)
        if sigma < 0:
            raise ValueError(f"sigma must be >= 0, got {sigma}")
        coeffs = self.coefficients(seq)
        if sigma == 0.0:
            return coeffs, coeffs.copy()
        eps = as_rng(rng).normal(0.0, sigma, size=self.k_star_)
        noisy = coeffs + np.sqrt(self.eigenvalues_) * eps
        return coeffs, noisy

    def respond(
        self, seq: ExpressionSequence, sigma: Optional[float] = None, rng=None
    ) -> ExpressionSequence:
        """Projection plus improvisation noise; sigma=0 equals project()."""
        _, noisy = self.respond_coefficients(seq, sigma=sigma, rng=rng)
        return self.reconstruct(noisy, seq)

    # -- persistence (ESM1, binary little-endian) -------------------------

    def save(self, path: Union[str, Path]) -> None:
        header = _ESM_HEADER.pack(
            ESM_MAGIC,
            self.n_kp_,
            self.window_,
            self.k_star_,
            self.dim_,
            float(self.sigma),
            self.total_eigensum_,
        )
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(np.ascontiguousarray(self.eigenvalues_, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.mean_, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.components_, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExpressionSpacePCA":
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _ESM_HEADER.size or raw[:4] != ESM_MAGIC:
            raise ArtifactFormatError(f"{path}: not an ESM1 expression-space file")
        magic, n_kp, window, k_star, dim, sigma, total = _ESM_HEADER.unpack_from(raw)
        if dim != n_kp * window * 3:
            raise ArtifactFormatError(
                f"{path}: inconsistent header (D={dim}, n_kp={n_kp}, T={window})"
            )
        expected = _ESM_HEADER.size + 8 * (k_star + dim + k_star * dim)
        if len(raw) != expected:
            raise ArtifactFormatError(
                f"{path}: truncated or oversized payload "
                f"({len(raw)} bytes, expected {expected})"
            )
        offset = _ESM_HEADER.size
        evals = np.frombuffer(raw, dtype="<f8", count=k_star, offset=offset).copy()
        offset += 8 * k_star
        mean = np.frombuffer(raw, dtype="<f8", count=dim, offset=offset).copy()
        offset += 8 * dim
        comps = (
            np.frombuffer(raw, dtype="<f8", count=k_star * dim, offset=offset)
            .reshape(k_star, dim)
            .copy()
        )
        model = cls(sigma=sigma)
        model.mean_ = mean
        model.components_ = comps
        model.eigenvalues_ = evals
        model.k_star_ = int(k_star)
        model.total_eigensum_ = float(total)
        model.window_ = int(window)
        model.n_kp_ = int(n_kp)
        model.dim_ = int(dim)
        return model

    def describe(self) -> dict:
        """Header summary for artifact inspection."""
        return {
            "kind": "expression-space",
            "n_kp": self.n_kp_,
            "window": self.window_,
            "k_star": self.k_star_,
            "dim": self.dim_,
            "sigma": float(self.sigma),
            "total_eigensum": self.total_eigensum_,
            "retained_fraction": float(
                np.sum(self.eigenvalues_) / self.total_eigensum_
            ),
        }
