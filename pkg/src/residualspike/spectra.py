"""Symmetric eigendecomposition, spectral moments and the T-transform."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateError, PoleError, ValidationError

SYM_TOL = 1e-8
NEG_TOL = 1e-10


def eigen_sym(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues in descending order and orthonormal eigenvectors (columns).

    Each eigenvector is signed so that its largest-magnitude component is
    positive, which makes the output reproducible across LAPACK builds.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValidationError("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYM_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    vals, vecs = np.linalg.eigh((a + a.T) / 2)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    return vals, _fix_signs(vecs)


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    if vecs.size == 0:
        return vecs
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


@dataclass(frozen=True)
class SpectralSummary:
    """Descending eigenvalues of a covariance-type matrix.

    Tiny negative round-off eigenvalues are clamped to zero; anything below
    ``-1e-10`` relative to the spectral scale is rejected.
    """

    eigenvalues: np.ndarray
    c: float | None = None

    def __post_init__(self):
        v = np.sort(np.asarray(self.eigenvalues, dtype=float).ravel())[::-1]
        if v.size == 0:
            raise ValidationError("empty spectrum")
        if not np.all(np.isfinite(v)):
            raise ValidationError("spectrum has non-finite values")
        tol = NEG_TOL * max(1.0, float(v[0]))
        if v[-1] < -tol:
            raise ValidationError(
                f"eigenvalue {v[-1]:.3g} is negative beyond tolerance; not a Gram matrix"
            )
        v = np.where(v < 0, 0.0, v)
        v.setflags(write=False)
        object.__setattr__(self, "eigenvalues", v)

    @classmethod
    def from_matrix(cls, a: np.ndarray, c: float | None = None) -> SpectralSummary:
        return cls(eigen_sym(a)[0], c)

    @property
    def m(self) -> int:
        return self.eigenvalues.size

    def scaled(self, factor: float) -> SpectralSummary:
        return SpectralSummary(self.eigenvalues * factor, self.c)

    @cached_property
    def moments(self) -> np.ndarray:
        """M_1..M_4 over the full spectrum."""
        return np.array([moment(self, s) for s in range(1, 5)])

    def bulk(self, exclude_top: int) -> np.ndarray:
        if not 0 <= exclude_top < self.m:
            raise ValidationError(f"exclude_top must be in [0, {self.m}), got {exclude_top}")
        return self.eigenvalues[exclude_top:]


def moment(summary: SpectralSummary, s: int, exclude_top: int = 0) -> float:
    """(1/(m-k)) Σ_{i>k} λ_i^s."""
    if s not in (1, 2, 3, 4):
        raise ValidationError(f"moment order must be 1..4, got {s}")
    return float(np.mean(summary.bulk(exclude_top) ** s))


def robust_second_moment(summary: SpectralSummary, k: int) -> float:
    """Conservative second moment that lets the k largest bulk values count triple.

    [Σ_{i>k} λ_i² + 2k λ_{k+1}²] / [(m-k)·mean_bulk + 2k λ_{k+1}]
    """
    bulk = summary.bulk(k)
    top = bulk[0]
    den = bulk.sum() + 2 * k * top
    if den <= 0:
        raise DegenerateError("robust second moment undefined for an all-zero bulk")
    return float((np.sum(bulk**2) + 2 * k * top**2) / den)


def t_transform(summary: SpectralSummary, z: float, exclude_top: int = 0) -> float:
    """(1/m) Σ_{i>k} λ_i / (z - λ_i), defined for z above the retained bulk."""
    bulk = summary.bulk(exclude_top)
    if not z > bulk[0]:
        raise PoleError(f"z={z} is not above the bulk edge {bulk[0]}")
    return float(np.sum(bulk / (z - bulk)) / summary.m)


def write_spectrum_csv(summary: SpectralSummary, path: str | Path) -> None:
    lines = ["# format_version=1", "eigenvalue"] + [repr(float(v)) for v in summary.eigenvalues]
    Path(path).write_text("\n".join(lines) + "\n")
