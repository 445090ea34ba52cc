"""Spike detection, de-biasing and the filtered covariance estimate."""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DegenerateError, PoleError, ValidationError
from .matgen import DataMatrix, sample_covariance
from .spectra import SpectralSummary, eigen_sym

SELECT_DELTA = 0.1
SELECT_MARGIN = 1


def double_center(data: DataMatrix) -> DataMatrix:
    """Remove row means, then column means; both end up exactly zero."""
    if data.m < 2 or data.n < 2:
        raise ValidationError("double centering needs at least 2 rows and 2 columns")
    x = data.values - data.values.mean(axis=1, keepdims=True)
    x = x - x.mean(axis=0, keepdims=True)
    return data.with_values(x)


def max_spike_count(m: int) -> int:
    """Largest k strictly below m/4 (at least 1)."""
    return max(1, (m - 1) // 4)


def select_k(summary: SpectralSummary, override: int | None = None) -> int:
    """Number of spikes to filter.

    Eigenvalues are compared with the Marcenko-Pastur edge (1+√c)²(1+δ) after
    dividing by the mean of the remaining bulk, so the count does not depend on
    the unknown noise scale. One extra spike is added as a safety margin since
    over-filtering only costs power, never validity.
    """
    if override is not None:
        if override < 0:
            raise ValidationError(f"k override must be non-negative, got {override}")
        return int(override)
    if summary.c is None:
        raise ValidationError("select_k needs the aspect ratio c = m/n")
    edge = (1 + np.sqrt(summary.c)) ** 2 * (1 + SELECT_DELTA)
    vals = summary.eigenvalues
    cap = max_spike_count(summary.m)
    count = 0
    for _ in range(50):
        scale = vals[count:].mean()
        if scale <= 0:
            break
        new = min(int(np.sum(vals > edge * scale)), cap)
        if new == count:
            break
        count = new
    return min(count + SELECT_MARGIN, cap)


def bulk_variance(summary: SpectralSummary, k: int) -> float:
    if not 0 <= k < summary.m - 1:
        raise ValidationError(f"k must satisfy 0 <= k < m-1, got k={k}, m={summary.m}")
    sigma2 = float(summary.eigenvalues[k:].mean())
    if sigma2 <= 0:
        raise DegenerateError("bulk variance is zero; data matrix is degenerate")
    return sigma2


def rescale_variance(
    data: DataMatrix, k: int, summary: SpectralSummary | None = None
) -> tuple[DataMatrix, float]:
    """Divide the data by σ̂, the root mean bulk eigenvalue of its covariance."""
    if not np.any(data.values):
        raise ValidationError("cannot rescale an all-zero data matrix")
    if summary is None:
        summary = SpectralSummary.from_matrix(sample_covariance(data))
    sigma2 = bulk_variance(summary, k)
    return data.with_values(data.values / np.sqrt(sigma2)), sigma2


def debias_value(theta_hat: float, bulk: np.ndarray) -> float:
    """1 + 1/[mean_i λ_i/(θ̂ - λ_i)] over the given bulk eigenvalues."""
    if not (theta_hat > bulk.max() or theta_hat < bulk.min()):
        raise PoleError(f"spike {theta_hat} lies inside the bulk [{bulk.min()}, {bulk.max()}]")
    t = float(np.mean(bulk / (theta_hat - bulk)))
    if t == 0:
        raise PoleError("bulk is identically zero; spike cannot be de-biased")
    return 1.0 + 1.0 / t


def debias_theta(summary: SpectralSummary, s: int, k: int) -> float:
    """De-biased value of the s-th largest eigenvalue (1-based), bulk excluding top k."""
    if not 1 <= s <= k < summary.m:
        raise ValidationError(f"need 1 <= s <= k < m, got s={s}, k={k}, m={summary.m}")
    return debias_value(summary.eigenvalues[s - 1], summary.eigenvalues[k:])


@dataclass(frozen=True)
class SpikeEstimate:
    index: int
    raw_theta: float
    debiased_theta: float
    eigenvector: np.ndarray


@dataclass(frozen=True)
class FilteredCovariance:
    """I_m + Σ_s (θ̂̂_s - 1) û_s û_sᵗ, held in factored form."""

    m: int
    estimates: tuple[SpikeEstimate, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "estimates", tuple(self.estimates))
        for e in self.estimates:
            if e.eigenvector.shape != (self.m,):
                raise ValidationError("spike eigenvector has the wrong dimension")
            if not e.debiased_theta > 0:
                raise DegenerateError(
                    f"de-biased spike {e.debiased_theta:.4g} is not positive; filter is not PD"
                )

    @property
    def k(self) -> int:
        return len(self.estimates)

    @cached_property
    def thetas(self) -> np.ndarray:
        return np.array([e.debiased_theta for e in self.estimates], dtype=float)

    @cached_property
    def vectors(self) -> np.ndarray:
        if not self.estimates:
            return np.zeros((self.m, 0))
        return np.column_stack([e.eigenvector for e in self.estimates])

    def apply_power(self, x: np.ndarray, power: float) -> np.ndarray:
        """Σ̂̂^power · x via the rank-k closed form."""
        x = np.asarray(x, dtype=float)
        if self.k == 0:
            return x.copy()
        coef = self.thetas**power - 1.0
        u = self.vectors
        if x.ndim == 1:
            return x + u @ (coef * (u.T @ x))
        return x + u @ (coef[:, None] * (u.T @ x))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return self.apply_power(x, 1.0)

    def apply_inverse_sqrt(self, x: np.ndarray) -> np.ndarray:
        return self.apply_power(x, -0.5)

    def dense(self, power: float = 1.0) -> np.ndarray:
        return self.apply_power(np.eye(self.m), power)

    def spectrum(self) -> np.ndarray:
        return np.sort(np.r_[self.thetas, np.ones(self.m - self.k)])[::-1]

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "m": self.m,
            "k": self.k,
            "raw_thetas": [e.raw_theta for e in self.estimates],
            "thetas": [e.debiased_theta for e in self.estimates],
            "eigenvectors": [e.eigenvector.tolist() for e in self.estimates],
        }
        return json.dumps(payload, indent=1)

    @classmethod
    def from_json(cls, text: str) -> FilteredCovariance:
        d = json.loads(text)
        ests = tuple(
            SpikeEstimate(i + 1, float(r), float(t), np.asarray(v, dtype=float))
            for i, (r, t, v) in enumerate(zip(d["raw_thetas"], d["thetas"], d["eigenvectors"]))
        )
        return cls(int(d["m"]), ests)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


def build_filtered(
    summary: SpectralSummary, eigenvectors: np.ndarray, k: int
) -> FilteredCovariance:
    """Filtered covariance from the top-k eigenpairs of a sample covariance."""
    m = summary.m
    if not 0 <= k < m:
        raise ValidationError(f"k must satisfy 0 <= k < m, got {k}")
    eigenvectors = np.asarray(eigenvectors, dtype=float)
    if eigenvectors.shape[0] != m or eigenvectors.shape[1] < k:
        raise ValidationError("eigenvector array does not match the spectrum")
    bulk = summary.eigenvalues[k:]
    ests = tuple(
        SpikeEstimate(
            s + 1,
            float(summary.eigenvalues[s]),
            debias_value(summary.eigenvalues[s], bulk),
            eigenvectors[:, s].copy(),
        )
        for s in range(k)
    )
    return FilteredCovariance(m, ests)


def filtered_from_matrix(cov: np.ndarray, k: int) -> FilteredCovariance:
    vals, vecs = eigen_sym(cov)
    return build_filtered(SpectralSummary(vals), vecs, k)
