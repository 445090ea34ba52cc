"""Monte-Carlo harness comparing the null model with simulated residual spikes."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .matgen import (
    EntryModel,
    PerturbationModel,
    ScenarioSpec,
    apply_perturbation,
    entry_model_from_dict,
    generate_base,
    load_toml,
    sample_covariance,
)
from .nulldist import MomentSet, order1_null, orderk_null_sample
from .pipeline import residual_spectrum
from .spectra import SpectralSummary, eigen_sym
from .spikes import build_filtered, bulk_variance

TABLE_IDS = ("residual_scenarios", "max_spikes", "min_spikes", "k_misspec")
MOMENT_SOURCES = ("oracle", "estimated")
DESK_MAX_M = 1000
DESK_MAX_COST = 200_000  # m * replicates per cell
MISSPEC_THETAS = (1000.0, 200.0, 16.0, 2.1)


@dataclass(frozen=True)
class Cell:
    """One simulation setting. ``thetas`` defaults to k spikes of 5000."""

    m: int
    n_x: int
    n_y: int
    k: int
    thetas: tuple[float, ...] = ()
    entry_model: EntryModel = field(default_factory=EntryModel)
    k_est: int | None = None

    def __post_init__(self):
        thetas = tuple(float(t) for t in self.thetas) or (5000.0,) * self.k
        if len(thetas) != self.k:
            raise ValidationError(f"cell has k={self.k} but {len(thetas)} spike values")
        object.__setattr__(self, "thetas", thetas)
        if self.k_est is None:
            object.__setattr__(self, "k_est", self.k)
        if not 1 <= self.k_est < self.m:
            raise ValidationError(f"k_est must satisfy 1 <= k_est < m, got {self.k_est}")
        ScenarioSpec(self.m, self.n_x, self.n_y, self.entry_model, PerturbationModel(thetas))


@dataclass(frozen=True)
class TableSpec:
    table_id: str
    cells: tuple[Cell, ...]
    replicates: int = 200
    seed: int = 0
    moment_source: str | None = None
    mc_per_replicate: int = 200
    n_jobs: int = 1
    full: bool = False

    def __post_init__(self):
        if self.table_id not in TABLE_IDS:
            raise ValidationError(f"table_id must be one of {TABLE_IDS}, got {self.table_id!r}")
        object.__setattr__(self, "cells", tuple(self.cells))
        if not self.cells:
            raise ValidationError("table grid is empty")
        if self.replicates < 10:
            raise ValidationError("replicates must be at least 10")
        if self.moment_source is None:
            src = "estimated" if self.table_id == "k_misspec" else "oracle"
            object.__setattr__(self, "moment_source", src)
        if self.moment_source not in MOMENT_SOURCES:
            raise ValidationError(f"moment_source must be one of {MOMENT_SOURCES}")
        if self.mc_per_replicate < 1 or self.n_jobs < 1:
            raise ValidationError("mc_per_replicate and n_jobs must be positive")


@dataclass(frozen=True)
class CellResult:
    cell: Cell
    max_model: tuple[float, float]
    max_empirical: tuple[float, float]
    min_model: tuple[float, float]
    min_empirical: tuple[float, float]
    empirical_max_values: np.ndarray = field(repr=False, compare=False)
    empirical_min_values: np.ndarray = field(repr=False, compare=False)


@dataclass(frozen=True)
class TableResult:
    spec: TableSpec
    cells: tuple[CellResult, ...]
    runtime_seconds: float = field(default=0.0, compare=False)

    def to_csv(self) -> str:
        s = self.spec
        lines = [
            "# format_version=1",
            f"# table_id={s.table_id} replicates={s.replicates} seed={s.seed} "
            f"moment_source={s.moment_source} mc_per_replicate={s.mc_per_replicate}",
            "cell,entry_model,m,n_x,n_y,k,k_est,thetas,"
            "max_model_mean,max_model_sd,max_emp_mean,max_emp_sd,"
            "min_model_mean,min_model_sd,min_emp_mean,min_emp_sd",
        ]
        for i, r in enumerate(self.cells):
            c = r.cell
            nums = (*r.max_model, *r.max_empirical, *r.min_model, *r.min_empirical)
            lines.append(
                f"{i},{c.entry_model.describe().replace(',', ';')},{c.m},{c.n_x},{c.n_y},{c.k},"
                f"{c.k_est},{';'.join(f'{t:g}' for t in c.thetas)},"
                + ",".join(f"{v:.6f}" for v in nums)
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv())


def _cell_seed(seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(index,))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _one_replicate(cell: Cell, spec: ScenarioSpec, r: int, source: str, mc: int) -> tuple:
    p = spec.perturbation
    x0 = generate_base(spec, "X", r)
    y0 = generate_base(spec, "Y", r)
    filters, spectra = [], []
    for base in (x0, y0):
        vals, vecs = eigen_sym(sample_covariance(apply_perturbation(base, p)))
        # same rescaling to unit bulk mean as the test procedure
        s = SpectralSummary(vals).scaled(1 / bulk_variance(SpectralSummary(vals), cell.k_est))
        spectra.append(s)
        filters.append(build_filtered(s, vecs, cell.k_est))
    res = residual_spectrum(*filters)
    if source == "oracle":
        # W spectra normalised to trace m, the scale the null law is stated on
        w = [np.linalg.eigvalsh(sample_covariance(b)) for b in (x0, y0)]
        moms = MomentSet.from_spectra(*(SpectralSummary(v / v.mean()) for v in w), 0)
    else:
        moms = MomentSet.from_spectra(*spectra, cell.k_est)
    model = order1_null(moms, k=cell.k_est)
    if cell.k_est == 1:
        law = (*model.order1_law("max"), *model.order1_law("min"))
    else:
        draws = orderk_null_sample(model, mc, seed=_cell_seed(spec.seed, r))
        law = (draws.vmax.mean(), draws.vmax.std(), draws.vmin.mean(), draws.vmin.std())
    return res.max, res.min, law


def _check_budget(spec: TableSpec) -> None:
    if spec.full:
        return
    for c in spec.cells:
        if c.m > DESK_MAX_M or c.m * spec.replicates > DESK_MAX_COST:
            raise ValidationError(
                f"cell m={c.m} with {spec.replicates} replicates exceeds the desk budget "
                f"(m <= {DESK_MAX_M}, m*replicates <= {DESK_MAX_COST}); pass full=True / --full"
            )


def run_table(spec: TableSpec) -> TableResult:
    """Simulate each cell under equal populations and compare model and empirical moments."""
    _check_budget(spec)
    t0 = time.perf_counter()
    results = []
    for ci, cell in enumerate(spec.cells):
        scen = ScenarioSpec(
            cell.m, cell.n_x, cell.n_y, cell.entry_model, PerturbationModel(cell.thetas),
            seed=_cell_seed(spec.seed, ci),
        )
        slots: list = [None] * spec.replicates

        def work(r: int, scen=scen, cell=cell) -> None:
            slots[r] = _one_replicate(cell, scen, r, spec.moment_source, spec.mc_per_replicate)

        if spec.n_jobs == 1:
            for r in range(spec.replicates):
                work(r)
        else:
            with ThreadPoolExecutor(spec.n_jobs) as pool:
                list(pool.map(work, range(spec.replicates)))

        emp_max = np.array([s[0] for s in slots])
        emp_min = np.array([s[1] for s in slots])
        law = np.array([s[2] for s in slots]).mean(axis=0)
        results.append(
            CellResult(
                cell,
                max_model=(float(law[0]), float(law[1])),
                max_empirical=(float(emp_max.mean()), float(emp_max.std(ddof=1))),
                min_model=(float(law[2]), float(law[3])),
                min_empirical=(float(emp_min.mean()), float(emp_min.std(ddof=1))),
                empirical_max_values=emp_max,
                empirical_min_values=emp_min,
            )
        )
    return TableResult(spec, tuple(results), time.perf_counter() - t0)


def run_k_misspec(spec: TableSpec) -> TableResult:
    """Table over k_est with moments estimated from the sample spectra."""
    if spec.table_id != "k_misspec":
        raise ValidationError("run_k_misspec needs table_id = 'k_misspec'")
    for c in spec.cells:
        if c.k != 4 or c.thetas != MISSPEC_THETAS or not 1 <= c.k_est <= 6:
            raise ValidationError(
                f"k-misspecification cells need k=4, thetas={MISSPEC_THETAS} and k_est in 1..6"
            )
    if spec.moment_source != "estimated":
        raise ValidationError("k-misspecification tables use estimated moments")
    return run_table(spec)


def _cell_from_dict(d: dict) -> Cell:
    allowed = {"m", "n_x", "n_y", "k", "thetas", "entry_model", "k_est"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown cell keys: {sorted(extra)}")
    try:
        return Cell(
            m=int(d["m"]),
            n_x=int(d["n_x"]),
            n_y=int(d["n_y"]),
            k=int(d["k"]),
            thetas=tuple(d.get("thetas", ())),
            entry_model=entry_model_from_dict(d.get("entry_model", {})),
            k_est=None if d.get("k_est") is None else int(d["k_est"]),
        )
    except KeyError as exc:
        raise ValidationError(f"cell is missing required key {exc.args[0]!r}") from None


def table_spec_from_dict(d: dict, **overrides) -> TableSpec:
    allowed = {"table_id", "cells", "replicates", "seed", "moment_source", "mc_per_replicate", "n_jobs"}
    extra = set(d) - allowed
    if extra:
        raise ValidationError(f"unknown table keys: {sorted(extra)}")
    if "table_id" not in d:
        raise ValidationError("table spec needs a table_id")
    kw = {k: v for k, v in d.items() if k != "cells"}
    kw["cells"] = tuple(_cell_from_dict(c) for c in d.get("cells", ()))
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TableSpec(**kw)


def load_table_spec(path: str | Path, **overrides) -> TableSpec:
    return table_spec_from_dict(load_toml(path), **overrides)


def run_spec(spec: TableSpec) -> TableResult:
    return run_k_misspec(spec) if spec.table_id == "k_misspec" else run_table(spec)

