"""Spike-model data generation: base noise matrices, perturbations, covariances.

Data matrices follow the convention rows = variables, columns = observations.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from ._rng import group_key, stream
from .errors import CSVFormatError, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

ORTHO_TOL = 1e-10
ENTRY_KINDS = ("iid_normal", "multivariate_student", "arma_rows", "ar1_columns")


@dataclass(frozen=True)
class DataMatrix:
    values: np.ndarray
    label: str = ""

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.size == 0:
            raise ValidationError(f"data matrix must be 2-d and non-empty, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("data matrix contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def n(self) -> int:
        return self.values.shape[1]

    def with_values(self, values: np.ndarray, label: str | None = None) -> DataMatrix:
        return DataMatrix(values, self.label if label is None else label)


@dataclass(frozen=True)
class PerturbationModel:
    """Spikes θ_s along orthonormal directions u_s; P = I + Σ (θ_s - 1) u_s u_sᵗ.

    ``directions`` is an m×k array with the u_s as columns. When omitted the
    canonical vectors e_1..e_k are used, whatever the dimension.
    """

    thetas: tuple[float, ...]
    directions: np.ndarray | None = None

    def __post_init__(self):
        thetas = tuple(float(t) for t in np.atleast_1d(self.thetas))
        if not all(np.isfinite(t) and t > 0 for t in thetas):
            raise ValidationError(f"spike values must be positive and finite, got {thetas}")
        object.__setattr__(self, "thetas", thetas)
        if self.directions is not None:
            u = np.asarray(self.directions, dtype=float)
            if u.ndim == 1:
                u = u[:, None]
            if u.shape[1] != len(thetas):
                raise ValidationError(
                    f"{len(thetas)} spikes but {u.shape[1]} direction columns"
                )
            if u.shape[1] >= u.shape[0]:
                raise ValidationError("spike count must be smaller than the dimension")
            u = _gram_schmidt(u)
            u.setflags(write=False)
            object.__setattr__(self, "directions", u)

    @property
    def k(self) -> int:
        return len(self.thetas)

    def basis(self, m: int) -> np.ndarray:
        if self.directions is not None:
            if self.directions.shape[0] != m:
                raise ValidationError(
                    f"directions have dimension {self.directions.shape[0]}, data has {m}"
                )
            return self.directions
        if self.k >= m:
            raise ValidationError(f"spike count {self.k} must be smaller than m={m}")
        return np.eye(m, self.k)


def _gram_schmidt(u: np.ndarray) -> np.ndarray:
    """Orthonormalize columns (modified Gram-Schmidt, two passes)."""
    q = np.array(u, dtype=float)
    for j in range(q.shape[1]):
        v = q[:, j]
        norm0 = np.linalg.norm(v)
        for _ in range(2):
            v = v - q[:, :j] @ (q[:, :j].T @ v)
        norm = np.linalg.norm(v)
        if norm0 == 0 or norm <= ORTHO_TOL * max(norm0, 1.0):
            raise ValidationError(f"spike direction {j} is linearly dependent on the others")
        q[:, j] = v / norm
    return q


@dataclass(frozen=True)
class EntryModel:
    """Distribution of the base noise entries.

    kind is one of ``iid_normal``, ``multivariate_student`` (uses ``df``),
    ``arma_rows`` (uses ``ar`` and ``ma``) or ``ar1_columns`` (uses ``rho``).
    """

    kind: str = "iid_normal"
    df: float = 8.0
    ar: tuple[float, ...] = ()
    ma: tuple[float, ...] = ()
    rho: float = 0.0

    def __post_init__(self):
        if self.kind not in ENTRY_KINDS:
            raise ValidationError(f"unknown entry model {self.kind!r}; expected one of {ENTRY_KINDS}")
        object.__setattr__(self, "ar", tuple(float(a) for a in self.ar))
        object.__setattr__(self, "ma", tuple(float(a) for a in self.ma))
        if self.kind == "multivariate_student" and not self.df > 2:
            raise ValidationError(f"Student degrees of freedom must exceed 2, got {self.df}")
        if self.kind == "arma_rows" and self.ar:
            roots = np.roots(np.r_[1.0, -np.asarray(self.ar)])
            if np.any(np.abs(roots) >= 1.0):
                raise ValidationError(f"AR coefficients {self.ar} are not stationary")
        if self.kind == "ar1_columns" and not -1 < self.rho < 1:
            raise ValidationError(f"rho must lie in (-1, 1), got {self.rho}")

    def describe(self) -> str:
        if self.kind == "multivariate_student":
            return f"student(df={self.df:g})"
        if self.kind == "arma_rows":
            return f"arma(ar={list(self.ar)}, ma={list(self.ma)})"
        if self.kind == "ar1_columns":
            return f"ar1(rho={self.rho:g})"
        return "normal"


@dataclass(frozen=True)
class ScenarioSpec:
    m: int
    n_x: int
    n_y: int
    entry_model: EntryModel = field(default_factory=EntryModel)
    perturbation: PerturbationModel = field(default_factory=lambda: PerturbationModel(()))
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"m must be at least 1, got {self.m}")
        if not self.n_x >= self.n_y >= 1:
            raise ValidationError(
                f"need n_x >= n_y >= 1 (invert the larger sample), got n_x={self.n_x}, n_y={self.n_y}"
            )
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must be a 64-bit non-negative integer")
        self.perturbation.basis(self.m)

    def n_for(self, group: str) -> int:
        return self.n_x if group_key(group) == 0 else self.n_y


def generate_base(spec: ScenarioSpec, group: str, replicate: int = 0) -> DataMatrix:
    """Unperturbed m×n noise matrix with unit-variance entries."""
    n = spec.n_for(group)
    m = spec.m
    rng = stream(spec.seed, replicate, group_key(group))
    em = spec.entry_model
    if em.kind == "iid_normal":
        x = rng.standard_normal((m, n))
    elif em.kind == "multivariate_student":
        z = rng.standard_normal((m, n))
        chi = rng.chisquare(em.df, size=n)
        # one divisor per column makes each column jointly t; rescale to unit variance
        x = z / np.sqrt(chi / em.df) * np.sqrt((em.df - 2) / em.df)
    elif em.kind == "arma_rows":
        burn = 50 * (len(em.ar) + len(em.ma))
        e = rng.standard_normal((m, n + burn))
        x = lfilter(np.r_[1.0, em.ma], np.r_[1.0, -np.asarray(em.ar)], e, axis=1)[:, burn:]
        x = x / np.sqrt(np.mean(x * x))
    else:
        e = rng.standard_normal((m, n))
        s = np.sqrt(1.0 - em.rho**2)
        e[:, 0] /= s  # X_1 = eps_1, then X_{i+1} = rho X_i + s eps_{i+1}
        x = lfilter([s], [1.0, -em.rho], e, axis=1)
    return DataMatrix(x, label=f"{group}:{em.describe()}:r{replicate}")


def perturbation_sqrt_apply(x: np.ndarray, thetas, basis: np.ndarray) -> np.ndarray:
    """Compute P^{1/2} x using P^{1/2} = I + Σ (√θ_s - 1) u_s u_sᵗ."""
    coef = np.sqrt(np.asarray(thetas, dtype=float)) - 1.0
    if coef.size == 0:
        return np.array(x, dtype=float)
    return x + basis @ (coef[:, None] * (basis.T @ x))


def apply_perturbation(base: DataMatrix, p: PerturbationModel) -> DataMatrix:
    u = p.basis(base.m)
    return base.with_values(perturbation_sqrt_apply(base.values, p.thetas, u))


def sample_covariance(data: DataMatrix | np.ndarray) -> np.ndarray:
    x = data.values if isinstance(data, DataMatrix) else np.asarray(data, dtype=float)
    c = (x @ x.T) / x.shape[1]
    return (c + c.T) / 2


def generate_pair(spec: ScenarioSpec, replicate: int = 0) -> tuple[DataMatrix, DataMatrix]:
    """Perturbed X and Y sharing the same perturbation (a null-hypothesis draw)."""
    return (
        apply_perturbation(generate_base(spec, "X", replicate), spec.perturbation),
        apply_perturbation(generate_base(spec, "Y", replicate), spec.perturbation),
    )


# ----------------------------------------------------------------------------
# CSV and config IO


def write_csv(data: DataMatrix, path: str | Path, header: bool = False) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow([f"obs{j + 1}" for j in range(data.n)])
    for row in data.values:
        w.writerow([repr(float(v)) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path: str | Path, label: str | None = None) -> DataMatrix:
    """Read a variables-as-rows CSV; a non-numeric first row is taken as a header."""
    path = str(path)
    rows: list[list[float]] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            try:
                vals = [float(cell) for cell in row]
            except ValueError:
                if lineno == 1:
                    continue
                raise CSVFormatError(path, lineno, "non-numeric entry") from None
            if width is None:
                width = len(vals)
            elif len(vals) != width:
                raise CSVFormatError(path, lineno, f"expected {width} fields, found {len(vals)}")
            rows.append(vals)
    if not rows:
        raise CSVFormatError(path, 1, "no numeric rows")
    arr = np.array(rows)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0, 0])
        raise CSVFormatError(path, bad + 1, "non-finite entry")
    return DataMatrix(arr, label=label if label is not None else Path(path).stem)


def entry_model_from_dict(d: dict) -> EntryModel:
    allowed = {"kind", "df", "ar", "ma", "rho"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown entry_model keys: {sorted(extra)}")
    return EntryModel(**d)


def perturbation_from_dict(d: dict) -> PerturbationModel:
    extra = set(d) - {"thetas", "directions"}
    if extra:
        raise ValidationError(f"unknown perturbation keys: {sorted(extra)}")
    dirs = d.get("directions")
    return PerturbationModel(
        tuple(d.get("thetas", ())), None if dirs is None else np.asarray(dirs, dtype=float).T
    )


def scenario_from_dict(d: dict) -> ScenarioSpec:
    try:
        return ScenarioSpec(
            m=int(d["m"]),
            n_x=int(d["n_x"]),
            n_y=int(d["n_y"]),
            entry_model=entry_model_from_dict(d.get("entry_model", {})),
            perturbation=perturbation_from_dict(d.get("perturbation", {})),
            seed=int(d.get("seed", 0)),
        )
    except KeyError as exc:
        raise ValidationError(f"scenario is missing required key {exc.args[0]!r}") from None


def load_toml(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"{path}: {exc}") from None


def load_scenario(path: str | Path) -> ScenarioSpec:
    d = load_toml(path)
    return scenario_from_dict(d.get("scenario", d))
