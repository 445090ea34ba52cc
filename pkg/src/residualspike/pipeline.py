"""End-to-end two-sample test for equality of covariance matrices."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .matgen import DataMatrix, sample_covariance
from .nulldist import (
    DEFAULT_MC_SAMPLES,
    MomentSet,
    NullSample,
    NullSpikeModel,
    ResidualZone,
    histogram_csv,
    null_summary,
    order1_null,
    orderk_null_sample,
    pvalues,
)
from .spectra import SpectralSummary, _fix_signs, eigen_sym
from .spikes import (
    FilteredCovariance,
    build_filtered,
    bulk_variance,
    double_center,
    select_k,
)

DENSE_MAX_M = 500
UNIT_TOL = 1e-9

_CAUTION = "outside the zone but not significant; eigenvector structure may be a residual artefact"


@dataclass(frozen=True)
class ResidualSpectrum:
    """Non-unit part of the spectrum of Σ̂̂_X^{-1/2} Σ̂̂_Y Σ̂̂_X^{-1/2}.

    ``eigenvalues`` (descending) and ``eigenvectors`` cover the at most
    k_X + k_Y directions the filters act on; the remaining
    ``unit_multiplicity`` eigenvalues are exactly 1.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    unit_multiplicity: int

    @property
    def m(self) -> int:
        return self.eigenvalues.size + self.unit_multiplicity

    @property
    def max(self) -> float:
        top = self.eigenvalues[0] if self.eigenvalues.size else -np.inf
        return float(max(top, 1.0) if self.unit_multiplicity else top)

    @property
    def min(self) -> float:
        low = self.eigenvalues[-1] if self.eigenvalues.size else np.inf
        return float(min(low, 1.0) if self.unit_multiplicity else low)

    def full(self) -> np.ndarray:
        return np.sort(np.r_[self.eigenvalues, np.ones(self.unit_multiplicity)])[::-1]

    def above(self) -> np.ndarray:
        vals = self.eigenvalues
        return vals[vals > 1 + UNIT_TOL]

    def below(self) -> np.ndarray:
        vals = self.eigenvalues
        return np.sort(vals[vals < 1 - UNIT_TOL])


def _reduced_residual(fx: FilteredCovariance, fy: FilteredCovariance) -> ResidualSpectrum:
    m = fx.m
    u, v = fx.vectors, fy.vectors
    r = u.shape[1] + v.shape[1]
    if r == 0:
        return ResidualSpectrum(np.zeros(0), np.zeros((m, 0)), m)
    # Σ̂̂_X^{-1/2} Σ̂̂_Y Σ̂̂_X^{-1/2} - I = U diag(1/θx - 1) Uᵗ + G diag(θy - 1) Gᵗ,
    # where G = Σ̂̂_X^{-1/2} V lies in span[U, V].
    g = fx.apply_inverse_sqrt(v)
    q, _ = np.linalg.qr(np.column_stack([u, v]))
    pu, pg = q.T @ u, q.T @ g
    small = (pu * (1 / fx.thetas - 1)) @ pu.T + (pg * (fy.thetas - 1)) @ pg.T
    mu, z = np.linalg.eigh((small + small.T) / 2)
    vecs = _fix_signs(q @ z[:, ::-1])
    return ResidualSpectrum(1.0 + mu[::-1], vecs, m - r)


def _dense_residual(fx: FilteredCovariance, fy: FilteredCovariance) -> ResidualSpectrum:
    m = fx.m
    r = fx.k + fy.k
    ax = fx.dense(-0.5)
    mat = ax @ fy.dense() @ ax
    vals, vecs = eigen_sym((mat + mat.T) / 2)
    keep = np.sort(np.argsort(-np.abs(vals - 1.0), kind="stable")[:r])
    return ResidualSpectrum(vals[keep], vecs[:, keep], m - r)


def residual_spectrum(
    fx: FilteredCovariance, fy: FilteredCovariance, method: str = "auto"
) -> ResidualSpectrum:
    """Spectrum of Σ̂̂_X^{-1/2} Σ̂̂_Y Σ̂̂_X^{-1/2}.

    ``method`` is ``reduced`` (projection onto the 2k filter directions),
    ``dense`` (full m×m eigenproblem) or ``auto`` (dense up to m = 500).
    """
    if fx.m != fy.m:
        raise ValidationError(f"filters have different dimensions {fx.m} and {fy.m}")
    if method == "auto":
        method = "dense" if fx.m <= DENSE_MAX_M else "reduced"
    if method == "reduced":
        return _reduced_residual(fx, fy)
    if method == "dense":
        return _dense_residual(fx, fy)
    raise ValidationError(f"unknown residual method {method!r}")


@dataclass(frozen=True)
class TestConfig:
    __test__ = False  # keep pytest from collecting this class

    k_override: int | None = None
    alpha: float = 0.05
    moment_estimator: str = "usual"
    null_replicates: int = DEFAULT_MC_SAMPLES
    seed: int = 0
    center: bool = True
    residual_method: str = "auto"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.null_replicates < 1000:
            raise ValidationError("null_replicates must be at least 1000")
        if self.moment_estimator not in ("usual", "robust"):
            raise ValidationError("moment_estimator must be 'usual' or 'robust'")
        if self.k_override is not None and self.k_override < 1:
            raise ValidationError("k override must be at least 1")


@dataclass(frozen=True)
class ResidualVector:
    eigenvalue: float
    side: str
    p_value: float
    significant: bool
    caution: str | None
    vector: np.ndarray


@dataclass(frozen=True)
class TestReport:
    __test__ = False

    k_used: int
    k_selected: tuple[int, int]
    swapped: bool
    m: int
    n_x: int
    n_y: int
    sigma2_x: float
    sigma2_y: float
    raw_thetas_x: tuple[float, ...]
    raw_thetas_y: tuple[float, ...]
    thetas_x: tuple[float, ...]
    thetas_y: tuple[float, ...]
    lambda_max: float
    lambda_min: float
    spikes_above: tuple[float, ...]
    spikes_below: tuple[float, ...]
    p_max: float
    p_min: float
    alpha: float
    reject: bool
    zone: ResidualZone
    residual_vectors: tuple[ResidualVector, ...]
    moments: dict
    null_model: dict
    usual_null_model: dict | None = None
    residual: ResidualSpectrum | None = field(default=None, repr=False, compare=False)
    null_sample: NullSample | None = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        d = {
            "format_version": 1,
            "k_used": self.k_used,
            "k_selected": {"x": self.k_selected[0], "y": self.k_selected[1]},
            "swapped": self.swapped,
            "dims": {"m": self.m, "n_x": self.n_x, "n_y": self.n_y},
            "sigma2": {"x": self.sigma2_x, "y": self.sigma2_y},
            "raw_thetas": {"x": list(self.raw_thetas_x), "y": list(self.raw_thetas_y)},
            "debiased_thetas": {"x": list(self.thetas_x), "y": list(self.thetas_y)},
            "lambda_max": self.lambda_max,
            "lambda_min": self.lambda_min,
            "spikes_above": list(self.spikes_above),
            "spikes_below": list(self.spikes_below),
            "p_max": self.p_max,
            "p_min": self.p_min,
            "alpha": self.alpha,
            "reject": self.reject,
            "zone": asdict(self.zone),
            "residual_vectors": [
                {
                    "eigenvalue": rv.eigenvalue,
                    "side": rv.side,
                    "p_value": rv.p_value,
                    "significant": rv.significant,
                    "caution": rv.caution,
                    "vector": rv.vector.tolist(),
                }
                for rv in self.residual_vectors
            ],
            "moments": self.moments,
            "null_model": self.null_model,
        }
        if self.usual_null_model is not None:
            d["usual_null_model"] = self.usual_null_model
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write_exports(self, prefix: str | Path) -> list[Path]:
        """CSV exports: residual spectrum, residual eigenvectors, null histograms."""
        prefix = Path(prefix)
        out = []
        if self.residual is not None:
            p = prefix.with_name(prefix.name + "_residual_spectrum.csv")
            rows = ["# format_version=1", "eigenvalue,multiplicity"]
            rows += [f"{v!r},1" for v in self.residual.eigenvalues]
            rows.append(f"1.0,{self.residual.unit_multiplicity}")
            p.write_text("\n".join(rows) + "\n")
            out.append(p)
        if self.residual_vectors:
            p = prefix.with_name(prefix.name + "_residual_vectors.csv")
            header = ",".join(f"v{i + 1}" for i in range(len(self.residual_vectors)))
            rows = ["# format_version=1", "# eigenvalues=" + ";".join(
                repr(rv.eigenvalue) for rv in self.residual_vectors), "coordinate," + header]
            mat = np.column_stack([rv.vector for rv in self.residual_vectors])
            rows += [f"{i + 1}," + ",".join(repr(float(x)) for x in row) for i, row in enumerate(mat)]
            p.write_text("\n".join(rows) + "\n")
            out.append(p)
        if self.null_sample is not None:
            for side, vals in (("max", self.null_sample.vmax), ("min", self.null_sample.vmin)):
                p = prefix.with_name(prefix.name + f"_null_{side}_hist.csv")
                p.write_text(histogram_csv(vals))
                out.append(p)
        return out


def extract_residual_vectors(
    spectrum: ResidualSpectrum,
    zone: ResidualZone,
    model: NullSpikeModel,
    sample: NullSample | None,
    alpha: float,
) -> list[ResidualVector]:
    """Residual eigenvectors whose eigenvalues fall outside ``zone``, with significance."""
    out = []
    for val, vec in zip(spectrum.eigenvalues, spectrum.eigenvectors.T):
        if zone.contains(val):
            continue
        if val > zone.upper:
            side, p = "max", pvalues(model, sample, val, -np.inf)[0]
        else:
            side, p = "min", pvalues(model, sample, np.inf, val)[1]
        sig = p < alpha / 2
        out.append(ResidualVector(float(val), side, float(p), bool(sig), None if sig else _CAUTION, vec))
    return out


@dataclass(frozen=True)
class _Group:
    data: DataMatrix
    summary: SpectralSummary
    vectors: np.ndarray
    k_selected: int


def _prepare(data: DataMatrix, cfg: TestConfig) -> _Group:
    if cfg.center:
        data = double_center(data)
    vals, vecs = eigen_sym(sample_covariance(data))
    summary = SpectralSummary(vals, c=data.m / data.n)
    k = select_k(summary, cfg.k_override)
    return _Group(data, summary, vecs, k)


def _model_dict(model: NullSpikeModel, sample: NullSample | None) -> dict:
    d = null_summary(model, sample)
    d.pop("format_version")
    return d


def run_test(x: DataMatrix, y: DataMatrix, cfg: TestConfig | None = None) -> TestReport:
    """Test equality of the covariances of x and y (variables as rows)."""
    cfg = cfg or TestConfig()
    if x.m != y.m:
        raise ValidationError(f"x has {x.m} variables but y has {y.m}")
    swapped = y.n > x.n
    if swapped:
        x, y = y, x
    gx, gy = _prepare(x, cfg), _prepare(y, cfg)
    m = x.m
    k = cfg.k_override if cfg.k_override is not None else max(gx.k_selected, gy.k_selected)
    if k < 1 or 4 * k >= m:
        raise ValidationError(f"k={k} must satisfy 1 <= k < m/4 (m={m})")

    s2x = bulk_variance(gx.summary, k)
    s2y = bulk_variance(gy.summary, k)
    sx, sy = gx.summary.scaled(1 / s2x), gy.summary.scaled(1 / s2y)
    fx = build_filtered(sx, gx.vectors, k)
    fy = build_filtered(sy, gy.vectors, k)
    spec = residual_spectrum(fx, fy, cfg.residual_method)

    usual = MomentSet.from_spectra(sx, sy, k)
    robust = MomentSet.from_spectra(sx, sy, k, robust=True) if cfg.moment_estimator == "robust" else None
    moms = robust if robust is not None else usual

    def build(ms: MomentSet) -> tuple[NullSpikeModel, NullSample | None]:
        model = order1_null(ms, k=k, mc_samples=cfg.null_replicates)
        sample = orderk_null_sample(model, cfg.null_replicates, cfg.seed) if k > 1 else None
        return model, sample

    model, sample = build(moms)
    usual_model = build(usual) if robust is not None else None

    lmax, lmin = spec.max, spec.min
    p_max, p_min = pvalues(model, sample, lmax, lmin)
    zone = ResidualZone(model.lambda_minus, model.lambda_plus, "both_filtered")
    vectors = extract_residual_vectors(spec, zone, model, sample, cfg.alpha)

    moments = {"usual": asdict(usual)}
    if robust is not None:
        moments["robust"] = asdict(robust)
    return TestReport(
        k_used=k,
        k_selected=(gx.k_selected, gy.k_selected),
        swapped=swapped,
        m=m,
        n_x=x.n,
        n_y=y.n,
        sigma2_x=s2x,
        sigma2_y=s2y,
        raw_thetas_x=tuple(e.raw_theta for e in fx.estimates),
        raw_thetas_y=tuple(e.raw_theta for e in fy.estimates),
        thetas_x=tuple(float(t) for t in fx.thetas),
        thetas_y=tuple(float(t) for t in fy.thetas),
        lambda_max=lmax,
        lambda_min=lmin,
        spikes_above=tuple(float(v) for v in spec.above()),
        spikes_below=tuple(float(v) for v in spec.below()),
        p_max=p_max,
        p_min=p_min,
        alpha=cfg.alpha,
        reject=bool(p_max < cfg.alpha / 2 or p_min < cfg.alpha / 2),
        zone=zone,
        residual_vectors=tuple(vectors),
        moments=moments,
        null_model=_model_dict(model, sample),
        usual_null_model=None if usual_model is None else _model_dict(*usual_model),
        residual=spec,
        null_sample=sample,
    )
