"""Null law of the extreme residual spikes and low-rank eigen utilities.

Under equal populations, and in the worst case of infinitely strong spikes,
the largest residual spike of order 1 is approximately
``λ⁺ + σ⁺/√m · N(0, 1)`` and the smallest one ``λ⁻ + σ⁻/√m · N(0, 1)``.
For k spikes the extremes are those of k×k random matrices H± whose diagonal
follows the order-1 law and whose off-diagonal entries are centred normals.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.stats import norm

from ._rng import stream
from .errors import DegenerateError, ValidationError
from .spectra import SpectralSummary, moment, robust_second_moment

DEFAULT_MC_SAMPLES = 100_000
QUANTILE_LEVELS = (0.001, 0.01, 0.025, 0.05, 0.1, 0.5, 0.9, 0.95, 0.975, 0.99, 0.999)
_CHUNK = 20_000


@dataclass(frozen=True)
class MomentSet:
    m2x: float
    m3x: float
    m4x: float
    m2y: float
    m3y: float
    m4y: float
    m: int

    def __post_init__(self):
        vals = (self.m2x, self.m3x, self.m4x, self.m2y, self.m3y, self.m4y)
        if not all(np.isfinite(v) for v in vals):
            raise ValidationError("moments must be finite")
        for m2, m4, g in ((self.m2x, self.m4x, "X"), (self.m2y, self.m4y, "Y")):
            if m4 < m2 * m2 * (1 - 1e-12):
                raise ValidationError(f"M4 < M2^2 for group {g}; not moments of a spectrum")
        if self.m < 1:
            raise ValidationError("dimension m must be positive")

    @property
    def m2(self) -> float:
        return (self.m2x + self.m2y) / 2

    @property
    def m3(self) -> float:
        return (self.m3x + self.m3y) / 2

    @property
    def m4(self) -> float:
        return (self.m4x + self.m4y) / 2

    @classmethod
    def from_spectra(
        cls, sx: SpectralSummary, sy: SpectralSummary, exclude_top: int = 0, robust: bool = False
    ) -> MomentSet:
        """Bulk moments of two spectra, dropping the top ``exclude_top`` values."""
        if sx.m != sy.m:
            raise ValidationError("spectra have different dimensions")

        def group(s: SpectralSummary):
            m2 = robust_second_moment(s, exclude_top) if robust else moment(s, 2, exclude_top)
            return m2, moment(s, 3, exclude_top), moment(s, 4, exclude_top)

        return cls(*group(sx), *group(sy), m=sx.m)

    @classmethod
    def from_mp(cls, c_x: float, c_y: float, m: int) -> MomentSet:
        """Limiting Marcenko-Pastur moments with aspect ratios c_X and c_Y."""
        if not (c_x > 0 and c_y > 0):
            raise ValidationError("aspect ratios must be positive")

        def mp(c):
            return 1 + c, 1 + 3 * c + c * c, 1 + 6 * c + 6 * c * c + c**3

        return cls(*mp(c_x), *mp(c_y), m=m)


def sigma_plus_sq(moms: MomentSet) -> float:
    """Variance (times m) of the largest order-1 residual spike."""
    a, a3, a4 = moms.m2x, moms.m3x, moms.m4x
    b, b3, b4 = moms.m2y, moms.m3y, moms.m4y
    d = (a + b - 2) * (a + b + 2)
    if d <= 0:
        raise DegenerateError("M2X + M2Y must exceed 2")
    g1 = (
        9*a**4*b + 4*a**3*b**2 + 4*a**3*b + 2*a**3*b3 - 2*a**2*b**3 + 4*a**2*b**2
        - 11*a**2*b - 8*a3*a**2*b + 2*a**2*b*b3 - 2*a**2*b3 + a**2*b4 + 4*a*b**3
        + a*b**2 + 4*a*b - 4*a3*a*b**2 - 4*a3*a*b - 2*a*b**2*b3 - 4*a*b*b3 - 6*a*b3
        + 2*a4*a*b + 2*a*b*b4 - 2*a3*b**2 + 2*a3*b + a4*b**2 + 4*a**5 + 2*a**4
        - 4*a3*a**3 - 13*a**3 - 2*a3*a**2 + a4*a**2 - 2*a**2 + 10*a3*a + 4*a + 4*a3
        - 2*a4 + b**5 + 2*b**4 - b**3 - 2*b**2 + 4*b - 2*b**3*b3 - 2*b**2*b3
        + 2*b*b3 + 4*b3 + b**2*b4 - 2*b4 - 4
    )  # fmt: skip
    g2 = (
        5*a**3*b - a**2*b**2 + 2*a**2*b + 2*a**2*b3 - a*b**3 + 2*a*b**2 - 4*a*b
        - 4*a3*a*b - 2*a*b3 + a*b4 - 2*a3*b + a4*b + 4*a**4 + 2*a**3 - 4*a3*a**2
        - 5*a**2 - 2*a3*a + a4*a + 2*a + 2*a3 + b**4 + 2*b**3 + b**2 + 2*b
        - 2*b**2*b3 - 2*b*b3 - 2*b3 + b*b4
    )  # fmt: skip
    return g1 / d + g2 / np.sqrt(d)


def _b_term(A: float, m2: float, m3: float, m4: float) -> float:
    return A * A * (m2 - 1) - 2 * A * (m3 - m2) + (m4 - m2 * m2)


def sigma_w_sq(moms: MomentSet, lambda_pm: float, sign: int) -> float:
    """Variance (times m) of the off-diagonal w entries on the ``sign`` side."""
    r = np.sqrt(moms.m2**2 - 1)
    ax = 1 - moms.m2 + 2 * moms.m2x + sign * r
    ay = 1 + moms.m2 + moms.m2y - moms.m2x - sign * r
    num = (
        2 * (moms.m2x - 1) * (moms.m2y - 1)
        + _b_term(ax, moms.m2x, moms.m3x, moms.m4x)
        + _b_term(ay, moms.m2y, moms.m3y, moms.m4y)
    )
    zeta = lambda_pm - 1
    den = ((zeta - 2 * moms.m2 + 2) ** 2 + 2 * (moms.m2 - 1)) ** 2
    return num / den


@dataclass(frozen=True)
class NullSpikeModel:
    lambda_plus: float
    lambda_minus: float
    sigma_plus: float
    sigma_minus: float
    sigma_w_plus: float
    sigma_w_minus: float
    k: int
    m: int
    mc_samples: int = DEFAULT_MC_SAMPLES

    def __post_init__(self):
        if self.k < 1:
            raise ValidationError("null model needs k >= 1")
        if self.mc_samples < 1:
            raise ValidationError("mc_samples must be positive")
        vals = (self.sigma_plus, self.sigma_minus, self.sigma_w_plus, self.sigma_w_minus)
        if not all(np.isfinite(v) and v >= 0 for v in vals):
            raise DegenerateError(f"null-law scales are not finite and non-negative: {vals}")

    @property
    def zeta_inf_plus(self) -> float:
        return self.lambda_plus - 1

    @property
    def zeta_inf_minus(self) -> float:
        return self.lambda_minus - 1

    def order1_law(self, side: str = "max") -> tuple[float, float]:
        """Mean and standard deviation of the order-1 extreme on one side."""
        if side == "max":
            return self.lambda_plus, self.sigma_plus / np.sqrt(self.m)
        if side == "min":
            return self.lambda_minus, self.sigma_minus / np.sqrt(self.m)
        raise ValidationError("side must be 'max' or 'min'")

    def with_k(self, k: int) -> NullSpikeModel:
        return NullSpikeModel(**{**asdict(self), "k": k})


def order1_null(
    moms: MomentSet, k: int = 1, mc_samples: int = DEFAULT_MC_SAMPLES
) -> NullSpikeModel:
    m2 = moms.m2
    if not m2 > 1 or not moms.m2x + moms.m2y > 2:
        raise DegenerateError(
            f"degenerate bulk (M2={m2:.6g}): both spectra are flat, no residual law exists"
        )
    r = np.sqrt(m2 * m2 - 1)
    lp, lm = m2 + r, m2 - r
    s2p = sigma_plus_sq(moms)
    if not s2p > 0:
        raise DegenerateError(f"sigma+^2 = {s2p:.4g} is not positive for these moments")
    s2m = lm**4 * s2p
    swp, swm = sigma_w_sq(moms, lp, +1), sigma_w_sq(moms, lm, -1)
    if swp < 0 or swm < 0:
        raise DegenerateError("off-diagonal variance is negative for these moments")
    return NullSpikeModel(
        lambda_plus=float(lp),
        lambda_minus=float(lm),
        sigma_plus=float(np.sqrt(s2p)),
        sigma_minus=float(np.sqrt(s2m)),
        sigma_w_plus=float(np.sqrt(swp)),
        sigma_w_minus=float(np.sqrt(swm)),
        k=k,
        m=moms.m,
        mc_samples=mc_samples,
    )


def mp_special_case(
    c_x: float, c_y: float, m: int, k: int = 1, mc_samples: int = DEFAULT_MC_SAMPLES
) -> NullSpikeModel:
    """Null law when both spectra are Marcenko-Pastur with ratios c_X, c_Y."""
    if not (c_x > 0 and c_y > 0):
        raise ValidationError("aspect ratios must be positive")
    c = (c_x + c_y) / 2
    s = np.sqrt(c * (c + 2))
    lp = c + s + 1
    lm = 1 / lp
    s2p = (
        c_x**3 + c_x**2 * c_y + 3 * c_x**2 + 4 * c_x * c_y - c_x + c_y**2 + c_y
        + (
            4 * c_x + c_x**2
            + (c_x**3 + 5 * c_x**2 + c_x**2 * c_y + 4 * c_x * c_y + 5 * c_x + 3 * c_y + c_y**2) * s
        ) / (c + 2)
    )  # fmt: skip
    swp = (2 * c_x * (s + 2) + 2 * c_y * (2 - s) + c_x**2 + c_y**2) / (4 * c * (c + 2 - s) ** 2)
    swm = sigma_w_sq(MomentSet.from_mp(c_x, c_y, m), lm, -1)
    return NullSpikeModel(
        lambda_plus=float(lp),
        lambda_minus=float(lm),
        sigma_plus=float(np.sqrt(s2p)),
        sigma_minus=float(np.sqrt(lm**4 * s2p)),
        sigma_w_plus=float(np.sqrt(swp)),
        sigma_w_minus=float(np.sqrt(swm)),
        k=k,
        m=m,
        mc_samples=mc_samples,
    )


# ----------------------------------------------------------------------------
# order-k sampler


@dataclass(frozen=True)
class NullSample:
    vmax: np.ndarray
    vmin: np.ndarray

    @property
    def size(self) -> int:
        return self.vmax.size

    def summary(self) -> dict:
        return {
            "vmax_mean": float(self.vmax.mean()),
            "vmax_sd": float(self.vmax.std(ddof=1)) if self.size > 1 else 0.0,
            "vmin_mean": float(self.vmin.mean()),
            "vmin_sd": float(self.vmin.std(ddof=1)) if self.size > 1 else 0.0,
        }


def _sample_side(
    rng: np.random.Generator,
    replicates: int,
    k: int,
    centre: float,
    diag_sd: float,
    off_sd: float,
    largest: bool,
) -> np.ndarray:
    out = np.empty(replicates)
    iu = np.triu_indices(k, 1)
    diag = np.arange(k)
    for start in range(0, replicates, _CHUNK):
        n = min(_CHUNK, replicates - start)
        h = np.zeros((n, k, k))
        h[:, diag, diag] = centre + diag_sd * rng.standard_normal((n, k))
        if k > 1:
            off = off_sd * rng.standard_normal((n, iu[0].size))
            h[:, iu[0], iu[1]] = off
            h[:, iu[1], iu[0]] = off
        ev = np.linalg.eigvalsh(h) if k > 1 else h[:, :, 0]
        out[start : start + n] = ev[:, -1] if largest else ev[:, 0]
    return out + 1.0


def orderk_null_sample(model: NullSpikeModel, replicates: int | None = None, seed: int = 0) -> NullSample:
    """Monte-Carlo draws of (Vmax, Vmin) from the H± random-matrix model.

    H⁺ and H⁻ are drawn independently: p_max only uses H⁺ and p_min only H⁻.
    Vmin is the smallest eigenvalue of H⁻ (plus one), the extreme on the side
    of the negative prefactor ζ∞⁻.
    """
    if replicates is None:
        replicates = model.mc_samples
    if replicates < 1:
        raise ValidationError("replicates must be positive")
    sq = np.sqrt(model.m)
    vmax = _sample_side(
        stream(seed, 0),
        replicates,
        model.k,
        model.zeta_inf_plus,
        model.sigma_plus / sq,
        abs(model.zeta_inf_plus) * model.sigma_w_plus / sq,
        largest=True,
    )
    vmin = _sample_side(
        stream(seed, 1),
        replicates,
        model.k,
        model.zeta_inf_minus,
        model.sigma_minus / sq,
        abs(model.zeta_inf_minus) * model.sigma_w_minus / sq,
        largest=False,
    )
    return NullSample(vmax, vmin)


def pvalues(
    model: NullSpikeModel,
    sample: NullSample | None,
    observed_max: float,
    observed_min: float,
) -> tuple[float, float]:
    """One-sided p-values for the observed largest and smallest residual spikes.

    k = 1 uses the normal tails; k > 1 uses add-one Monte-Carlo estimates.
    """
    if np.isnan(observed_max) or np.isnan(observed_min):
        raise ValidationError("observed extremes must not be NaN")
    if model.k == 1:
        mu, sd = model.order1_law("max")
        p_max = float(norm.sf(observed_max, loc=mu, scale=sd)) if sd > 0 else float(observed_max <= mu)
        mu, sd = model.order1_law("min")
        p_min = float(norm.cdf(observed_min, loc=mu, scale=sd)) if sd > 0 else float(observed_min >= mu)
        return p_max, p_min
    if sample is None:
        raise ValidationError("k > 1 needs a sampled null distribution")
    r = sample.size
    p_max = (1 + int(np.sum(sample.vmax >= observed_max))) / (r + 1)
    p_min = (1 + int(np.sum(sample.vmin <= observed_min))) / (r + 1)
    return float(p_max), float(p_min)


def null_quantiles(model: NullSpikeModel, sample: NullSample | None = None) -> dict:
    levels = np.asarray(QUANTILE_LEVELS)
    if model.k == 1:
        mu, sd = model.order1_law("max")
        qmax = norm.ppf(levels, mu, sd)
        mu, sd = model.order1_law("min")
        qmin = norm.ppf(levels, mu, sd)
    else:
        if sample is None:
            raise ValidationError("k > 1 needs a sampled null distribution")
        qmax = np.quantile(sample.vmax, levels)
        qmin = np.quantile(sample.vmin, levels)
    return {
        "levels": [float(v) for v in levels],
        "vmax": [float(v) for v in qmax],
        "vmin": [float(v) for v in qmin],
    }


def null_summary(model: NullSpikeModel, sample: NullSample | None = None) -> dict:
    d = {"format_version": 1, **asdict(model)}
    d["zeta_inf_plus"] = model.zeta_inf_plus
    d["zeta_inf_minus"] = model.zeta_inf_minus
    d["offdiag_normality"] = "assumed"
    if sample is not None:
        d["sample"] = {"replicates": sample.size, **sample.summary()}
    d["quantiles"] = null_quantiles(model, sample)
    return d


def write_null_json(model: NullSpikeModel, sample: NullSample | None, path: str | Path) -> None:
    Path(path).write_text(json.dumps(null_summary(model, sample), indent=1, sort_keys=True) + "\n")


def histogram_csv(values: np.ndarray, bins: int = 60, normal: tuple[float, float] | None = None) -> str:
    """(bin_left, bin_right, count) rows, with the reference normal law in a comment."""
    counts, edges = np.histogram(values, bins=bins)
    lines = ["# format_version=1"]
    if normal is not None:
        lines.append(f"# normal_mean={normal[0]!r} normal_sd={normal[1]!r}")
    lines.append("bin_left,bin_right,count")
    lines += [f"{edges[i]!r},{edges[i + 1]!r},{int(c)}" for i, c in enumerate(counts)]
    return "\n".join(lines) + "\n"


# ----------------------------------------------------------------------------
# residual zone


@dataclass(frozen=True)
class ResidualZone:
    lower: float
    upper: float
    variant: str = "both_filtered"

    def __post_init__(self):
        if not self.lower <= 1 + 1e-12 or not self.upper >= 1 - 1e-12:
            raise ValidationError(f"zone [{self.lower}, {self.upper}] must contain 1")

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def residual_zone(c_x: float, c_y: float, variant: str = "both_filtered") -> ResidualZone:
    """Asymptotic residual zone when both spectra follow Marcenko-Pastur laws.

    ``both_filtered`` uses 1 + c + √(c² + 2c) and ``x_filtered_only`` uses
    (2 + c + √(c² + 4c))/2, with c the mean aspect ratio; the lower endpoint is
    the reciprocal of the upper one.
    """
    if c_x < 0 or c_y < 0:
        raise ValidationError("aspect ratios must be non-negative")
    c = (c_x + c_y) / 2
    if variant == "both_filtered":
        upper = 1 + c + np.sqrt(c * c + 2 * c)
    elif variant == "x_filtered_only":
        upper = (2 + c + np.sqrt(c * c + 4 * c)) / 2
    else:
        raise ValidationError(f"unknown zone variant {variant!r}")
    return ResidualZone(float(1 / upper), float(upper), variant)


# ----------------------------------------------------------------------------
# low-rank eigen utilities


def _as_columns(vectors: np.ndarray, k: int | None = None) -> np.ndarray:
    v = np.asarray(vectors, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if k is not None and v.shape[1] != k:
        raise ValidationError(f"expected {k} vectors, got {v.shape[1]}")
    return v


def gram_reduce(
    weights, vectors: np.ndarray, return_vectors: bool = False
) -> tuple[np.ndarray, np.ndarray] | tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nontrivial spectrum of Σ λ_i w_i w_iᵗ from the k×k matrix √(λ_iλ_j)⟨w_i, w_j⟩.

    ``vectors`` holds the w_i as columns. With ``return_vectors`` the m-dimensional
    eigenvectors are also recovered (for eigenvalues that are not zero).
    """
    lam = np.asarray(weights, dtype=float).ravel()
    w = _as_columns(vectors, lam.size)
    if not np.all(lam > 0):
        raise ValidationError("gram_reduce needs strictly positive weights")
    if w.shape[0] < lam.size:
        raise ValidationError("need at least as many dimensions as vectors")
    b = w * np.sqrt(lam)
    h = b.T @ b
    h = (h + h.T) / 2
    vals, z = np.linalg.eigh(h)
    vals, z = vals[::-1], z[:, ::-1]
    if not return_vectors:
        return h, vals
    with np.errstate(divide="ignore", invalid="ignore"):
        vecs = (b @ z) / np.sqrt(np.where(vals > 0, vals, np.nan))
    return h, vals, vecs


def _orthogonal_complement_vector(m: int, avoid: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(np.column_stack([avoid, np.eye(m)]))
    return q[:, avoid.shape[1]]


def rank2_eigen(a: float, w: np.ndarray, b: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two nontrivial eigenpairs of a·e₁e₁ᵗ + b·wwᵗ (b = 1 when omitted).

    With ``b`` given, w must have unit norm. Returns eigenvalues (λ⁺, λ⁻) and
    the matching unit eigenvectors as columns of an m×2 array.
    """
    w = np.asarray(w, dtype=float).ravel()
    m = w.size
    if m < 2:
        raise ValidationError("rank2_eigen needs dimension at least 2")
    n2 = float(w @ w)
    if n2 == 0:
        raise ValidationError("w must be nonzero")
    w1 = w[0]
    if b is not None:
        if abs(np.sqrt(n2) - 1) > 1e-10:
            raise ValidationError("the b-branch needs a unit-norm w")
        tr = a + b
        det = a * b * (1 - w1 * w1)
        disc = np.sqrt(max(4 * a * b * w1 * w1 + (a - b) ** 2, 0.0))
    else:
        tr = a + n2
        det = a * (n2 - w1 * w1)
        disc = np.sqrt(max(tr * tr - 4 * det, 0.0))
    big = (tr + disc) / 2 if tr >= 0 else (tr - disc) / 2
    other = det / big if big != 0 else (tr - big)
    lams = np.array(sorted([big, other], reverse=True))

    if abs(w1) < 1e-6 * np.sqrt(n2):
        return lams, _two_dim_fallback(a, 1.0 if b is None else b, w, lams)

    bb = 1.0 if b is None else b
    vecs = np.empty((m, 2))
    e1 = np.eye(m, 1)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for j, lam in enumerate(lams):
            if b is not None:
                v1 = (lam + b * (w1 * w1 - 1)) / (b * w1)
            else:
                v1 = (lam - n2 + w1 * w1) / w1
            v = w.copy()
            v[0] = v1
            nv = np.linalg.norm(v)
            if nv < 1e-12:
                # w ∥ e1: the second eigenvalue is 0 with eigenspace ⟂ e1
                v = _orthogonal_complement_vector(m, e1)
                nv = 1.0
            vecs[:, j] = v / nv
    # the closed form loses accuracy near its poles (b = 0, repeated eigenvalues)
    av = a * np.outer(e1[:, 0], vecs[0]) + bb * np.outer(w, w @ vecs)
    scale = max(1.0, abs(a), abs(bb) * n2)
    bad_norm = np.abs(np.linalg.norm(vecs, axis=0) - 1).max() > 1e-12
    if not np.all(np.isfinite(vecs)) or bad_norm or np.abs(av - vecs * lams).max() > 1e-11 * scale:
        vecs = _two_dim_fallback(a, bb, w, lams)
    return lams, vecs


def _two_dim_fallback(a: float, b: float, w: np.ndarray, lams: np.ndarray) -> np.ndarray:
    """Eigenvectors by direct reduction onto span(e₁, w), used where the closed form has a pole."""
    m = w.size
    e1 = np.eye(m, 1)[:, 0]
    if a > 0 and b > 0:
        _, vals, vecs = gram_reduce([a, b], np.column_stack([e1, w]), return_vectors=True)
        if vals[-1] > 1e-8 * vals[0]:
            return vecs
    q, _ = np.linalg.qr(np.column_stack([e1, w]))
    small = a * np.outer(q[0], q[0]) + b * np.outer(q.T @ w, q.T @ w)
    vals, z = np.linalg.eigh((small + small.T) / 2)
    return q @ z[:, ::-1]


def spike_domination_check(lambdas, vectors: np.ndarray, mu: float, v: np.ndarray) -> float:
    """λmax(Σ λ_i u_i u_iᵗ + μ v vᵗ) − λ₁ for a weaker extra direction v (μ < λ₁)."""
    lam = np.asarray(lambdas, dtype=float).ravel()
    u = _as_columns(vectors, lam.size)
    v = np.asarray(v, dtype=float).ravel()
    lam1 = lam.max()
    if not mu < lam1:
        raise ValidationError("spike domination needs mu < lambda_1")
    basis = np.column_stack([u, v])
    q, _ = np.linalg.qr(basis)
    pu = q.T @ u
    pv = q.T @ v
    small = (pu * lam) @ pu.T + mu * np.outer(pv, pv)
    top = np.linalg.eigvalsh((small + small.T) / 2)[-1]
    return float(top - lam1)
