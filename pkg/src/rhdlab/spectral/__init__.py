from .expm import matrix_exponential_oracle
from .symbol import (
    CubicCoeffs, DispersionPoint, ProjectorSet, SymbolMatrix, assemble_symbol,
    characteristic_cubic, cubic_coefficients, dispersion_roots, longitudinal_roots,
    projector_batch, projector_set, radiative_damping, semigroup_batch,
    semigroup_matrix, symbol_batch, track_branches,
)
from .analysis import (
    ExpansionReport, GapScan, OracleSweep, PointwiseBound, asymptotic_fit, high_frequency_limits_no_conduction,
    low_frequency_targets, pointwise_bound_fit, random_frequency_samples,
    semigroup_oracle_sweep, spectral_gap_scan,
)
