"""twinbeam: simulator for waveguided twin-beam squeezed-light sources.

Computes full-gain Heisenberg propagators for pulsed, group-velocity-mismatched
twin-beam generation in periodically poled waveguides, extracts the
temporal-mode (Schmidt) structure, and models spectral filtering through
Gaussian-state decompositions.
"""

from twinbeam.gaussian import (
    BlochMessiahResult,
    Correlators,
    CovarianceMatrix,
    FilteredModeSet,
    PureFilteredMode,
    WilliamsonResult,
    bloch_messiah,
    correlators_from_propagator,
    correlators_from_schmidt,
    covariance_from_state,
    extract_mode_sets,
    fidelity_matrix,
    filter_pure_mode,
    filtered_correlators,
    purity,
    symplectic_eigenvalues,
    williamson,
)
from twinbeam.grids import (
    HBAR,
    FilterFunction,
    FrequencyGrid,
    MediumSpec,
    PumpSpectrum,
    delta_k,
    filter_transmission,
    pump_amplitude,
)
from twinbeam.poling import (
    PmfTarget,
    PolingProfile,
    design_domains,
    pmf_of_profile,
    sigma_th_from_separability,
    uniform_profile,
)
from twinbeam.propagation import (
    Propagator,
    double_pass_propagator,
    naive_stitch,
    stitch,
)
from twinbeam.schmidt import (
    JsaMatrix,
    SchmidtDecomposition,
    calibrate_pump_power,
    jsa,
    mean_signal_photons,
    mode_fidelity,
    schmidt_decompose,
    schmidt_number,
)
from twinbeam.errors import (
    CalibrationError,
    ConfigError,
    MixedStateError,
    NumericalGateError,
)
from twinbeam.scenarios import (
    GEOMETRIES,
    OUTPUT_KINDS,
    FilterSweepResult,
    FilteredStateAnalysis,
    ScenarioConfig,
    ScenarioResult,
    analyze_filtered_state,
    build_propagator,
    calibrate_gain_point,
    default_gain_ladder,
    run_scenario,
    sweep_filters,
)

__version__ = "0.1.0"

__all__ = [
    "HBAR",
    "FrequencyGrid",
    "MediumSpec",
    "PumpSpectrum",
    "FilterFunction",
    "pump_amplitude",
    "delta_k",
    "filter_transmission",
    "PmfTarget",
    "PolingProfile",
    "design_domains",
    "pmf_of_profile",
    "sigma_th_from_separability",
    "uniform_profile",
    "Propagator",
    "stitch",
    "naive_stitch",
    "double_pass_propagator",
    "SchmidtDecomposition",
    "JsaMatrix",
    "schmidt_decompose",
    "schmidt_number",
    "mean_signal_photons",
    "jsa",
    "mode_fidelity",
    "calibrate_pump_power",
    "Correlators",
    "PureFilteredMode",
    "CovarianceMatrix",
    "WilliamsonResult",
    "BlochMessiahResult",
    "FilteredModeSet",
    "correlators_from_propagator",
    "correlators_from_schmidt",
    "filtered_correlators",
    "filter_pure_mode",
    "covariance_from_state",
    "williamson",
    "bloch_messiah",
    "extract_mode_sets",
    "symplectic_eigenvalues",
    "purity",
    "fidelity_matrix",
    "CalibrationError",
    "ConfigError",
    "MixedStateError",
    "NumericalGateError",
    "GEOMETRIES",
    "OUTPUT_KINDS",
    "ScenarioConfig",
    "ScenarioResult",
    "FilterSweepResult",
    "FilteredStateAnalysis",
    "default_gain_ladder",
    "build_propagator",
    "calibrate_gain_point",
    "analyze_filtered_state",
    "run_scenario",
    "sweep_filters",
    "__version__",
]
