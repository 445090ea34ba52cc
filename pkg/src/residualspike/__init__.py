"""Residual-spike test for equality of two high-dimensional covariance matrices."""

from .errors import CSVFormatError, DegenerateError, PoleError, ValidationError
from .harness import Cell, TableResult, TableSpec, load_table_spec, run_k_misspec, run_spec, run_table
from .matgen import (
    DataMatrix,
    EntryModel,
    PerturbationModel,
    ScenarioSpec,
    apply_perturbation,
    generate_base,
    generate_pair,
    load_scenario,
    read_csv,
    sample_covariance,
    write_csv,
)
from .nulldist import (
    MomentSet,
    NullSample,
    NullSpikeModel,
    ResidualZone,
    gram_reduce,
    mp_special_case,
    order1_null,
    orderk_null_sample,
    pvalues,
    rank2_eigen,
    residual_zone,
    spike_domination_check,
)
from .pipeline import (
    ResidualSpectrum,
    TestConfig,
    TestReport,
    extract_residual_vectors,
    residual_spectrum,
    run_test,
)
from .spectra import SpectralSummary, eigen_sym, moment, robust_second_moment, t_transform
from .spikes import (
    FilteredCovariance,
    SpikeEstimate,
    build_filtered,
    debias_theta,
    double_center,
    rescale_variance,
    select_k,
)

__version__ = "0.1.0"
