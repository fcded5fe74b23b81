"""End-to-end simulation scenarios: configuration, gain sweeps, and reports.

A scenario bundles a source geometry (uniform or Gaussian-apodized poling,
single or double pass), a frequency grid, medium and pump parameters, a
ladder of gain targets, and an optional spectral filter.  Running a scenario
calibrates the pump photon number to each gain target (coarse-grid presolve
followed by a full-grid confirmation), builds the propagator, extracts the
temporal-mode structure, and writes deterministic summary, curve, and matrix
files whose names carry a short hash of the configuration; rerunning the
same configuration rewrites identical bytes.

Filtered states are analyzed through their Gaussian decomposition chain
(covariance matrix, normal-mode transform, squeeze/thermal mode extraction).
A hard-edged filter leaves every out-of-band frequency bin in the vacuum, so
the chain runs on the in-band sub-grid and results are embedded back into
the full grid; the purity of the discarded vacuum factor is exactly one.
"""

import dataclasses
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalGateError
from .gaussian import (
    Correlators,
    bloch_messiah,
    correlators_from_propagator,
    correlators_from_schmidt,
    covariance_from_state,
    extract_mode_sets,
    FilteredModeSet,
    purity,
    williamson,
)
from .grids import FilterFunction, FrequencyGrid, MediumSpec, PumpSpectrum
from .poling import (
    PmfTarget,
    PolingProfile,
    design_domains,
    sigma_th_from_separability,
    uniform_profile,
)
from .propagation import Propagator, double_pass_propagator, stitch
from .schmidt import (
    SchmidtDecomposition,
    calibrate_pump_power,
    jsa,
    mode_fidelity,
    schmidt_decompose,
)

__all__ = [
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
]

GEOMETRIES = ("unapodized_single", "apodized_single", "apodized_double")

OUTPUT_KINDS = (
    "jsa",
    "schmidt_modes",
    "K_vs_gain",
    "fidelity_vs_gain",
    "purity_vs_gain",
    "fidelity_matrix",
    "poling_amplitude",
)

_CURVE_KINDS = ("K_vs_gain", "fidelity_vs_gain", "purity_vs_gain")

#: Outputs that only make sense once a spectral filter is configured.
_FILTER_ONLY_OUTPUTS = ("purity_vs_gain", "fidelity_matrix")

#: Grid size used for the pump-power presolve; the mean photon number is a
#: spectrally integrated quantity and converges far earlier than the mode
#: shapes, so a coarse grid pins the pump power before the one full-grid run.
_COARSE_POINTS = 201

#: Relative mismatch between the confirmed full-grid gain and its target
#: above which one corrected full-grid evaluation is attempted.
_FULL_GRID_RTOL = 0.02

_SPEED_OF_LIGHT = 2.99792458e8  # m/s

_LADDER_START = 3e-4
_LADDER_STOP = 10.6
_LADDER_POINTS = 20


def default_gain_ladder(
    start: float = _LADDER_START,
    stop: float = _LADDER_STOP,
    points: int = _LADDER_POINTS,
) -> tuple:
    """Logarithmically spaced mean-signal-photon targets, low gain to high."""
    if points < 1:
        raise ConfigError("gain.ladder.points: must be a positive integer, got {}".format(points))
    if points == 1:
        return (float(start),)
    return tuple(float(x) for x in np.geomspace(start, stop, points))


def _is_number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool)


class _Validator:
    """Collects field-level configuration errors before raising once."""

    def __init__(self):
        self.errors = []

    def add(self, field: str, message: str, value=None):
        suffix = "" if value is None else ", got {!r}".format(value)
        self.errors.append("{}: {}{}".format(field, message, suffix))

    def number(self, field: str, value, minimum=None, strict=True, allow_inf=False):
        if not _is_number(value):
            self.add(field, "must be a number", value)
            return None
        value = float(value)
        if not allow_inf and not math.isfinite(value):
            self.add(field, "must be finite", value)
            return None
        if minimum is not None:
            if strict and not value > minimum:
                self.add(field, "must be greater than {}".format(minimum), value)
                return None
            if not strict and not value >= minimum:
                self.add(field, "must be at least {}".format(minimum), value)
                return None
        return value

    def integer(self, field: str, value, minimum: int):
        if not isinstance(value, int) or isinstance(value, bool):
            self.add(field, "must be an integer", value)
            return None
        if value < minimum:
            self.add(field, "must be at least {}".format(minimum), value)
            return None
        return value

    def block(self, field: str, value, known_keys):
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.add(field, "must be an object", value)
            return {}
        for key in value:
            if key not in known_keys:
                self.add("{}.{}".format(field, key), "unknown key")
        return value

    def raise_if_any(self):
        if self.errors:
            raise ConfigError("; ".join(self.errors))


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete, validated description of one simulation scenario.

    Instances are built with :meth:`preset` or :meth:`from_dict`; both fill
    geometry-appropriate defaults (grid, medium, gain ladder) and validate
    every field, raising :class:`~twinbeam.errors.ConfigError` with messages
    that name the offending fields.  All quantities are dimensionless, in
    units of the pump spectral bandwidth; an optional laboratory-units block
    fixes the carrier-to-bandwidth ratio from a pump wavelength and duration.

    Args:
        geometry (str): one of ``GEOMETRIES``.
        grid_center (float): shared signal/idler central frequency.
        grid_half_width (float): half-span of the frequency grid.
        grid_points (int): number of grid points (>= 2).
        kappa_s (float): signal inverse-group-velocity mismatch to the pump;
            the idler mirrors it with the opposite sign.
        inv_v_P (float): inverse pump group velocity (> ``kappa_s``).
        gamma (float): real coupling constant.
        length (float): nonlinear-region length.
        n_domains (int): number of poling domains.
        pump_sigma (float): pump spectral bandwidth.
        gain_targets (tuple): mean signal photon numbers to calibrate to.
        filter_kind (str or None): ``"top_hat"``/``"identity"``, or ``None``
            for no filter.
        filter_center (float or None): filter center (defaults to the grid
            center).
        filter_half_width (float or None): top-hat half-width.
        outputs (tuple): subset of ``OUTPUT_KINDS`` to write.
        lab_pump_wavelength_nm (float or None): pump wavelength, if the
            configuration was given in laboratory units.
        lab_pump_duration_fs (float or None): pump duration, likewise.
    """

    geometry: str
    grid_center: float
    grid_half_width: float
    grid_points: int
    kappa_s: float
    inv_v_P: float
    gamma: float
    length: float
    n_domains: int
    pump_sigma: float
    gain_targets: tuple
    filter_kind: str = None
    filter_center: float = None
    filter_half_width: float = None
    outputs: tuple = ()
    lab_pump_wavelength_nm: float = None
    lab_pump_duration_fs: float = None

    # -- construction ------------------------------------------------------

    @classmethod
    def preset(cls, geometry: str) -> "ScenarioConfig":
        """The pinned default scenario for ``geometry``."""
        return cls.from_dict({"geometry": geometry})

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        """Build and validate a configuration from nested dictionaries.

        Missing blocks fall back to geometry-appropriate defaults: a uniform
        single-domain region for the unapodized geometry, and a Gaussian
        target envelope with the separability width and ``length = 8
        sigma_th`` split into 1000 domains for the apodized geometries.

        Raises:
            ConfigError: naming every invalid or unknown field.
        """
        if not isinstance(data, dict):
            raise ConfigError("configuration root: must be an object, got {!r}".format(data))
        v = _Validator()
        known = ("geometry", "grid", "medium", "pump", "gain", "filter", "outputs", "lab_units")
        for key in data:
            if key not in known:
                v.add(key, "unknown key")

        geometry = data.get("geometry")
        if geometry not in GEOMETRIES:
            v.add("geometry", "must be one of {}".format(list(GEOMETRIES)), geometry)
            v.raise_if_any()
        apodized = geometry != "unapodized_single"

        lab = v.block("lab_units", data.get("lab_units"), ("pump_wavelength_nm", "pump_duration_fs"))
        lab_wavelength = lab_duration = None
        default_center = 100.0
        if lab:
            lab_wavelength = v.number("lab_units.pump_wavelength_nm", lab.get("pump_wavelength_nm"), minimum=0.0)
            lab_duration = v.number("lab_units.pump_duration_fs", lab.get("pump_duration_fs"), minimum=0.0)
            if lab_wavelength is not None and lab_duration is not None:
                # Carrier over bandwidth: omega_bar_S / sigma_omega with
                # omega_bar_S = pi c / lambda_P and sigma_omega = 1 / tau.
                default_center = math.pi * _SPEED_OF_LIGHT * (lab_duration * 1e-15) / (lab_wavelength * 1e-9)

        pump = v.block("pump", data.get("pump"), ("sigma",))
        pump_sigma = 1.0
        if "sigma" in pump:
            got = v.number("pump.sigma", pump.get("sigma"), minimum=0.0)
            if got is not None:
                if lab and got != 1.0:
                    v.add("pump.sigma", "laboratory units fix the bandwidth unit, so sigma must be 1", got)
                else:
                    pump_sigma = got

        grid = v.block("grid", data.get("grid"), ("center", "half_width", "points"))
        grid_center = default_center
        if "center" in grid:
            got = v.number("grid.center", grid.get("center"), minimum=0.0)
            if got is not None:
                grid_center = got
        grid_half_width = 6.0
        if "half_width" in grid:
            got = v.number("grid.half_width", grid.get("half_width"), minimum=0.0)
            if got is not None:
                grid_half_width = got
        grid_points = 501
        if "points" in grid:
            got = v.integer("grid.points", grid.get("points"), minimum=2)
            if got is not None:
                grid_points = got

        medium = v.block(
            "medium", data.get("medium"), ("kappa_s", "inv_v_P", "gamma", "length", "n_domains")
        )
        kappa_s = 8.0 if apodized else 3.0
        if "kappa_s" in medium:
            got = v.number("medium.kappa_s", medium.get("kappa_s"), minimum=0.0)
            if got is not None:
                kappa_s = got
        inv_v_P = 10.0
        if "inv_v_P" in medium:
            got = v.number("medium.inv_v_P", medium.get("inv_v_P"), minimum=0.0)
            if got is not None:
                inv_v_P = got
        if inv_v_P <= kappa_s:
            v.add(
                "medium.inv_v_P",
                "must exceed kappa_s = {} (both group velocities forward)".format(kappa_s),
                inv_v_P,
            )
        gamma = 1.0
        if "gamma" in medium:
            got = v.number("medium.gamma", medium.get("gamma"), minimum=0.0)
            if got is not None:
                gamma = got
        if apodized:
            # Default region: eight envelope widths, so the Gaussian target
            # has decayed to ~3e-4 of its peak at the edges.
            default_length = 8.0 * 2.0 / (pump_sigma * 2.0 * kappa_s)
        else:
            default_length = 1.0
        length = default_length
        if "length" in medium:
            got = v.number("medium.length", medium.get("length"), minimum=0.0)
            if got is not None:
                length = got
        n_domains = 1000 if apodized else 1
        if "n_domains" in medium:
            got = v.integer("medium.n_domains", medium.get("n_domains"), minimum=2 if apodized else 1)
            if got is not None:
                n_domains = got
        elif apodized and n_domains < 2:
            n_domains = 2

        gain = v.block("gain", data.get("gain"), ("targets", "ladder"))
        gain_targets = None
        if "targets" in gain and "ladder" in gain:
            v.add("gain", "give either targets or ladder, not both")
        elif "targets" in gain:
            targets = gain.get("targets")
            if not isinstance(targets, (list, tuple)):
                v.add("gain.targets", "must be a list of numbers", targets)
            else:
                out = []
                for i, t in enumerate(targets):
                    got = v.number("gain.targets[{}]".format(i), t, minimum=0.0)
                    if got is not None:
                        out.append(got)
                gain_targets = tuple(out)
        elif "ladder" in gain:
            ladder = v.block("gain.ladder", gain.get("ladder"), ("start", "stop", "points"))
            start = v.number("gain.ladder.start", ladder.get("start", _LADDER_START), minimum=0.0)
            stop = v.number("gain.ladder.stop", ladder.get("stop", _LADDER_STOP), minimum=0.0)
            points = v.integer("gain.ladder.points", ladder.get("points", _LADDER_POINTS), minimum=1)
            if start is not None and stop is not None and points is not None:
                if stop < start:
                    v.add("gain.ladder.stop", "must be at least the start {}".format(start), stop)
                else:
                    gain_targets = default_gain_ladder(start, stop, points)
        if gain_targets is None and not v.errors:
            gain_targets = default_gain_ladder()
        if gain_targets is None:
            gain_targets = ()

        filt = v.block("filter", data.get("filter"), ("kind", "center", "half_width"))
        filter_kind = filter_center = filter_half_width = None
        if filt:
            filter_kind = filt.get("kind", "top_hat")
            if filter_kind not in ("top_hat", "identity"):
                v.add("filter.kind", "must be 'top_hat' or 'identity'", filter_kind)
                filter_kind = None
            if filter_kind == "top_hat":
                filter_center = grid_center
                if "center" in filt:
                    got = v.number("filter.center", filt.get("center"))
                    if got is not None:
                        filter_center = got
                filter_half_width = v.number("filter.half_width", filt.get("half_width"), minimum=0.0)
                if filter_half_width is not None and filter_center is not None:
                    lo = filter_center - filter_half_width
                    hi = filter_center + filter_half_width
                    if hi <= grid_center - grid_half_width or lo >= grid_center + grid_half_width:
                        v.add(
                            "filter.half_width",
                            "pass band [{:g}, {:g}] lies outside the frequency grid".format(lo, hi),
                        )
            elif filter_kind == "identity":
                if "half_width" in filt or "center" in filt:
                    v.add("filter.kind", "identity filter takes no center or half_width")

        outputs_raw = data.get("outputs", ())
        outputs = []
        if not isinstance(outputs_raw, (list, tuple)):
            v.add("outputs", "must be a list", outputs_raw)
        else:
            for name in outputs_raw:
                if name not in OUTPUT_KINDS:
                    v.add("outputs", "unknown output kind (choose from {})".format(list(OUTPUT_KINDS)), name)
                elif name in outputs:
                    v.add("outputs", "duplicate output kind", name)
                else:
                    outputs.append(name)
        if filter_kind is None:
            for name in outputs:
                if name in _FILTER_ONLY_OUTPUTS:
                    v.add("outputs", "{} requires a filter block".format(name))
        if "poling_amplitude" in outputs and not apodized:
            v.add("outputs", "poling_amplitude requires an apodized geometry")

        v.raise_if_any()
        return cls(
            geometry=geometry,
            grid_center=grid_center,
            grid_half_width=grid_half_width,
            grid_points=grid_points,
            kappa_s=kappa_s,
            inv_v_P=inv_v_P,
            gamma=gamma,
            length=length,
            n_domains=n_domains,
            pump_sigma=pump_sigma,
            gain_targets=gain_targets,
            filter_kind=filter_kind,
            filter_center=filter_center,
            filter_half_width=filter_half_width,
            outputs=tuple(outputs),
            lab_pump_wavelength_nm=lab_wavelength,
            lab_pump_duration_fs=lab_duration,
        )

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        """Parse and validate a JSON configuration document."""
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("configuration is not valid JSON: {}".format(exc))
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        """Read and validate a JSON configuration file."""
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError("cannot read configuration file: {}".format(exc))
        return cls.from_json(text)

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        """The canonical nested-dictionary form (hash and file stable)."""
        data = {
            "geometry": self.geometry,
            "grid": {
                "center": self.grid_center,
                "half_width": self.grid_half_width,
                "points": self.grid_points,
            },
            "medium": {
                "kappa_s": self.kappa_s,
                "inv_v_P": self.inv_v_P,
                "gamma": self.gamma,
                "length": self.length,
                "n_domains": self.n_domains,
            },
            "pump": {"sigma": self.pump_sigma},
            "gain": {"targets": list(self.gain_targets)},
            "outputs": list(self.outputs),
        }
        if self.filter_kind == "top_hat":
            data["filter"] = {
                "kind": "top_hat",
                "center": self.filter_center,
                "half_width": self.filter_half_width,
            }
        elif self.filter_kind == "identity":
            data["filter"] = {"kind": "identity"}
        if self.lab_pump_wavelength_nm is not None:
            data["lab_units"] = {
                "pump_wavelength_nm": self.lab_pump_wavelength_nm,
                "pump_duration_fs": self.lab_pump_duration_fs,
            }
        return data

    def config_hash(self) -> str:
        """Short stable hash identifying the configuration in file names."""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()[:12]

    def with_gain_targets(self, targets) -> "ScenarioConfig":
        """The same scenario with a different tuple of gain targets."""
        for i, t in enumerate(targets):
            if not _is_number(t) or not (math.isfinite(t) and t > 0):
                raise ConfigError("gain.targets[{}]: must be a positive number, got {!r}".format(i, t))
        return dataclasses.replace(self, gain_targets=tuple(float(t) for t in targets))

    def resampled_ladder(self, points: int) -> "ScenarioConfig":
        """The same scenario with its ladder resampled to ``points`` targets."""
        if not isinstance(points, int) or isinstance(points, bool) or points < 1:
            raise ConfigError("gain points: must be a positive integer, got {!r}".format(points))
        if not self.gain_targets:
            raise ConfigError("gain.targets: cannot resample an empty gain ladder")
        return self.with_gain_targets(
            default_gain_ladder(min(self.gain_targets), max(self.gain_targets), points)
        )

    # -- physical builders -------------------------------------------------

    def grid(self) -> FrequencyGrid:
        """The configured frequency grid."""
        return FrequencyGrid.centered(self.grid_center, self.grid_half_width, self.grid_points)

    def medium(self) -> MediumSpec:
        """The configured symmetric group-velocity-matched medium."""
        return MediumSpec.symmetric_gvm(
            kappa_s=self.kappa_s,
            omega_bar=self.grid_center,
            gamma=self.gamma,
            length=self.length,
            n_domains=self.n_domains,
            inv_v_P=self.inv_v_P,
        )

    def pump(self, n_pump_photons: float) -> PumpSpectrum:
        """The configured pump at a given mean photon number."""
        return PumpSpectrum(self.pump_sigma, n_pump_photons, 2.0 * self.grid_center)

    def separability_width(self) -> float:
        """Target-envelope width rendering the low-gain joint spectrum separable."""
        medium = self.medium()
        return sigma_th_from_separability(self.pump_sigma, medium.v_S, medium.v_I)

    def profile(self) -> PolingProfile:
        """The poling profile: uniform, or designed for the Gaussian target."""
        if self.geometry == "unapodized_single":
            return uniform_profile(self.length, self.n_domains)
        target = PmfTarget(length=self.length, sigma_th=self.separability_width())
        return design_domains(target, self.n_domains)

    def filter(self):
        """The configured spectral filter, or ``None``."""
        if self.filter_kind is None:
            return None
        if self.filter_kind == "identity":
            return FilterFunction.identity()
        return FilterFunction.top_hat(self.filter_center, self.filter_half_width)


def build_propagator(
    config: ScenarioConfig,
    n_pump_photons: float,
    grid: FrequencyGrid = None,
    cache_dir=None,
) -> Propagator:
    """Propagator of the configured geometry at a given pump photon number.

    Args:
        config (ScenarioConfig): scenario description.
        n_pump_photons (float): mean pump photon number.
        grid (FrequencyGrid, optional): overrides the configured grid (used
            by the coarse calibration presolve).
        cache_dir (path, optional): propagator disk cache.

    Returns:
        Propagator: the full-region (or two-pass) propagator.
    """
    if grid is None:
        grid = config.grid()
    medium = config.medium()
    pump = config.pump(n_pump_photons)
    profile = config.profile()
    if config.geometry == "apodized_double":
        return double_pass_propagator(grid, medium, pump, profile, cache_dir=cache_dir)
    return stitch(profile, grid, medium, pump, cache_dir=cache_dir)


# -- calibration -----------------------------------------------------------


def _coarse_grid(config: ScenarioConfig) -> FrequencyGrid:
    points = min(config.grid_points, _COARSE_POINTS)
    return FrequencyGrid.centered(config.grid_center, config.grid_half_width, points)


def _mean_signal_photons(prop: Propagator) -> float:
    # Trace of the signal number correlator, without a mode decomposition.
    return float(np.sum(np.abs(prop.U_SI) ** 2))


def calibrate_gain_point(
    config: ScenarioConfig,
    target_ns: float,
    cache_dir=None,
    rel_tol: float = 1e-3,
):
    """Pump photon number reaching a mean-signal-photon target.

    A coarse-grid secant presolve pins the pump power (the integrated photon
    number converges on much coarser grids than the mode shapes), a single
    full-grid evaluation confirms it, and one corrected full-grid evaluation
    is attempted if the confirmation misses the target by more than 2%.

    Args:
        config (ScenarioConfig): scenario description.
        target_ns (float): target mean signal photon number (> 0).
        cache_dir (path, optional): propagator disk cache.
        rel_tol (float): relative tolerance of the coarse presolve.

    Returns:
        tuple: ``(n_pump_photons, propagator, measured_ns)`` with the
        full-grid propagator and its measured mean signal photon number.
    """
    if not target_ns > 0:
        raise ConfigError("gain target: must be positive, got {!r}".format(target_ns))
    coarse = _coarse_grid(config)

    def evaluate(n_pump: float) -> float:
        return _mean_signal_photons(build_propagator(config, n_pump, grid=coarse, cache_dir=cache_dir))

    # Deterministic physics-informed start: the low-gain response is linear
    # in the pump photon number, so one probe fixes the slope.
    probe_power = 1e-9
    linear_gain = evaluate(probe_power) / probe_power
    if not linear_gain > 0:
        raise NumericalGateError("pump-power calibration: zero low-gain response")
    initial = target_ns / linear_gain
    n_pump = calibrate_pump_power(target_ns, evaluate, initial_guess=initial, rel_tol=rel_tol)

    prop = build_propagator(config, n_pump, cache_dir=cache_dir)
    measured = _mean_signal_photons(prop)
    if abs(measured - target_ns) > _FULL_GRID_RTOL * target_ns:
        # Local log-log slope from the coarse model, then one correction.
        base = evaluate(n_pump)
        bumped = evaluate(n_pump * 1.1)
        slope = math.log(bumped / base) / math.log(1.1) if bumped > base > 0 else 1.0
        corrected = n_pump * (target_ns / measured) ** (1.0 / max(slope, 1.0))
        prop2 = build_propagator(config, corrected, cache_dir=cache_dir)
        measured2 = _mean_signal_photons(prop2)
        if abs(measured2 - target_ns) < abs(measured - target_ns):
            n_pump, prop, measured = corrected, prop2, measured2
    return n_pump, prop, measured


# -- filtered-state analysis ----------------------------------------------


@dataclass(frozen=True)
class FilteredStateAnalysis:
    """Gaussian decomposition of a spectrally filtered twin-beam state.

    Args:
        purity (float): purity of the filtered state.
        mean_signal_photons (float): transmitted signal photon number.
        schmidt_number (float): effective mode number of the squeeze-pair
            weights ``sinh^2 r``.
        r (np.ndarray): two-mode squeezing parameters, descending.
        nbar (np.ndarray): thermal occupancies, descending.
        modes (FilteredModeSet or None): mode functions on the full grid
            (``None`` when only the purity was requested).
        support (tuple): first and last grid indices of the analyzed band.
    """

    purity: float
    mean_signal_photons: float
    schmidt_number: float
    r: np.ndarray
    nbar: np.ndarray
    modes: FilteredModeSet
    support: tuple


def _state_correlators(state) -> Correlators:
    if isinstance(state, Correlators):
        return state
    if isinstance(state, Propagator):
        return correlators_from_propagator(state)
    if isinstance(state, SchmidtDecomposition):
        return correlators_from_schmidt(state)
    raise TypeError("cannot build correlators from {!r}".format(type(state).__name__))


def _embed_rows(rows: np.ndarray, n_points: int, span: slice) -> np.ndarray:
    full = np.zeros((rows.shape[0], n_points), dtype=complex)
    full[:, span] = rows
    return full


def analyze_filtered_state(
    state,
    filt: FilterFunction,
    want_modes: bool = True,
    gate_tol: float = 1e-8,
) -> FilteredStateAnalysis:
    """Purity and mode structure of a filtered twin-beam state.

    Every frequency bin with zero transmission ends in the vacuum after
    filtering, so the covariance chain runs on the sub-grid spanning the
    transmitting bins and the extracted mode functions are zero-padded back
    to the full grid; the purity of the discarded vacuum factor is one.

    Args:
        state: :class:`Propagator`, :class:`Correlators`, or
            :class:`SchmidtDecomposition`.
        filt (FilterFunction): spectral filter, applied to both beams.
        want_modes (bool): if false, stop after the purity (no normal-mode
            transform), leaving the mode fields empty.
        gate_tol (float): tolerance of the decomposition validity gates.

    Returns:
        FilteredStateAnalysis: decomposition results on the full grid.

    Raises:
        ValueError: if the filter transmits no light on the grid.
    """
    corr = _state_correlators(state)
    grid = corr.grid
    filtered = corr.filtered(filt)
    transmitting = np.flatnonzero(filt.transmission(grid.omegas) > 0)
    if transmitting.size == 0:
        raise ValueError("filter transmits no light on this grid")
    lo, hi = int(transmitting[0]), int(transmitting[-1])
    span = slice(lo, hi + 1)
    if transmitting.size == grid.n_points:
        sub = filtered
        subgrid = grid
    else:
        subgrid = FrequencyGrid(float(grid.omegas[lo]), float(grid.omegas[hi]), hi - lo + 1)
        sub = Correlators(
            filtered.n_signal[span, span],
            filtered.n_idler[span, span],
            filtered.m_pair[span, span],
            subgrid,
        )

    cov = covariance_from_state(sub, gate_tol=gate_tol)
    p = purity(cov)
    mean_ns = sub.mean_signal_photons
    if not want_modes:
        return FilteredStateAnalysis(
            purity=p,
            mean_signal_photons=mean_ns,
            schmidt_number=float("nan"),
            r=np.empty(0),
            nbar=np.empty(0),
            modes=None,
            support=(lo, hi),
        )

    will = williamson(cov, gate_tol=gate_tol)
    bm = bloch_messiah(will.s, atol=1e-6, r_tol=gate_tol)
    modes = extract_mode_sets(will, bm, subgrid)
    weights = np.sinh(modes.r) ** 2
    total = float(np.sum(weights))
    if total > 0:
        schmidt_number = total**2 / float(np.sum(weights**2))
    else:
        schmidt_number = float("nan")
    if subgrid is not grid:
        modes = FilteredModeSet(
            squeeze_signal=_embed_rows(modes.squeeze_signal, grid.n_points, span),
            squeeze_idler=_embed_rows(modes.squeeze_idler, grid.n_points, span),
            thermal_signal=_embed_rows(modes.thermal_signal, grid.n_points, span),
            thermal_idler=_embed_rows(modes.thermal_idler, grid.n_points, span),
            r=modes.r,
            nbar=modes.nbar,
            grid=grid,
        )
    return FilteredStateAnalysis(
        purity=p,
        mean_signal_photons=mean_ns,
        schmidt_number=schmidt_number,
        r=modes.r,
        nbar=modes.nbar,
        modes=modes,
        support=(lo, hi),
    )


# -- gain-point worker -----------------------------------------------------


def _run_gain_point(payload):
    """Calibrate and analyze one gain point (module-level for worker pools)."""
    config, index, target, cache_dir, is_endpoint = payload
    n_pump, prop, measured = calibrate_gain_point(config, target, cache_dir=cache_dir)
    if not prop.passes_bogoliubov(1e-8):
        raise NumericalGateError(
            "propagator at gain target {:g} violates the canonical-commutation identities".format(target)
        )
    decomposition = schmidt_decompose(prop)
    weights = np.sinh(decomposition.r) ** 2
    result = {
        "index": index,
        "target": target,
        "n_pump_photons": float(n_pump),
        "mean_signal_photons": float(np.sum(weights)),
        "schmidt_number": float(np.sum(weights) ** 2 / np.sum(weights**2)),
        "r": np.asarray(decomposition.r, dtype=float),
        "rho_S1": decomposition.rho_S[0].copy(),
    }
    filt = config.filter()
    if filt is not None:
        want_matrix = is_endpoint and "fidelity_matrix" in config.outputs
        analysis = analyze_filtered_state(prop, filt, want_modes=True)
        result["purity"] = analysis.purity
        result["filtered_schmidt_number"] = analysis.schmidt_number
        if want_matrix:
            if analysis.modes.squeeze_signal.shape[0] < 2 or analysis.modes.thermal_signal.shape[0] < 2:
                raise NumericalGateError(
                    "filtered state at gain target {:g} has fewer than two squeeze or "
                    "thermal pairs; the fidelity matrix needs two of each".format(target)
                )
            result["matrix_modes"] = np.stack(
                [
                    analysis.modes.squeeze_signal[0],
                    analysis.modes.squeeze_signal[1],
                    analysis.modes.thermal_signal[0],
                    analysis.modes.thermal_signal[1],
                ]
            )
    if is_endpoint:
        if "jsa" in config.outputs:
            result["abs_jsa"] = np.abs(jsa(decomposition).values)
        if "schmidt_modes" in config.outputs:
            n_keep = min(2, decomposition.rho_S.shape[0])
            result["rho_S"] = decomposition.rho_S[:n_keep].copy()
            result["rho_I"] = decomposition.rho_I[:n_keep].copy()
    return result


# -- file writers ----------------------------------------------------------


def _jsonify(obj):
    """Convert results to strictly JSON-serializable structures."""
    if isinstance(obj, dict):
        return {key: _jsonify(value) for key, value in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(value) for value in obj]
    if isinstance(obj, np.ndarray):
        return _jsonify(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(obj, (np.integer,)):
        return int(obj)
    return obj


def _write_json(path: Path, document) -> None:
    text = json.dumps(_jsonify(document), sort_keys=True, indent=2, allow_nan=False)
    path.write_text(text + "\n")


def _format_cell(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
        return str(int(value))
    return format(float(value), ".17g")


def _write_csv(path: Path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_format_cell(cell) for cell in row))
    path.write_text("\n".join(lines) + "\n")


def _round_matrix(values: np.ndarray, digits: int = 6):
    return [[float(format(x, ".{}g".format(digits))) for x in row] for row in values]


# -- scenario runner -------------------------------------------------------


@dataclass(frozen=True)
class ScenarioResult:
    """Everything a scenario run produced.

    Args:
        config (ScenarioConfig): the configuration that was run.
        gain_points (tuple): one summary record per gain target, in the
            configured order.
        files (dict): output kind to written file path.
        out_dir (str): directory holding the files.
    """

    config: ScenarioConfig
    gain_points: tuple
    files: dict
    out_dir: str


def _summary_record(raw: dict, fidelity: float) -> dict:
    record = {
        "index": raw["index"],
        "target_mean_signal_photons": raw["target"],
        "n_pump_photons": raw["n_pump_photons"],
        "mean_signal_photons": raw["mean_signal_photons"],
        "schmidt_number": raw["schmidt_number"],
        "squeeze_parameters": [float(x) for x in raw["r"][:5]],
        "fidelity_to_lowest_gain": fidelity,
    }
    if "purity" in raw:
        record["purity"] = raw["purity"]
        record["filtered_schmidt_number"] = raw["filtered_schmidt_number"]
    return record


def _resolve_workers(max_workers, n_tasks: int) -> int:
    if max_workers is None:
        max_workers = os.cpu_count() or 1
    return max(1, min(int(max_workers), n_tasks))


def _run_points(payloads, max_workers) -> list:
    workers = _resolve_workers(max_workers, len(payloads))
    if workers == 1:
        return [_run_gain_point(p) for p in payloads]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_gain_point, payloads))


def run_scenario(
    config: ScenarioConfig,
    out_dir,
    cache_dir=None,
    max_workers=None,
) -> ScenarioResult:
    """Run a configured scenario and write its output files.

    Gain points are processed by a worker pool (one task per gain target)
    and assembled in the configured order; every file name carries the
    configuration hash and every writer is deterministic, so rerunning the
    same configuration rewrites identical bytes.

    Args:
        config (ScenarioConfig): validated scenario description.
        out_dir (path): directory for the output files (created if needed).
        cache_dir (path, optional): propagator disk cache.
        max_workers (int, optional): worker-pool size (defaults to the CPU
            count; capped by the number of gain points).

    Returns:
        ScenarioResult: summary records and written file paths.
    """
    out_path = Path(out_dir)
    out_path.mkdir(parents=True, exist_ok=True)
    tag = config.config_hash()
    files = {}

    targets = config.gain_targets
    if targets:
        low = min(range(len(targets)), key=lambda i: targets[i])
        high = max(range(len(targets)), key=lambda i: targets[i])
        endpoints = {low, high}
    else:
        low = high = None
        endpoints = set()

    payloads = [
        (config, i, target, cache_dir, i in endpoints) for i, target in enumerate(targets)
    ]
    raws = _run_points(payloads, max_workers)

    dw = config.grid().delta_omega
    records = []
    for raw in raws:
        fidelity = mode_fidelity(raws[low]["rho_S1"], raw["rho_S1"], dw)
        records.append(_summary_record(raw, fidelity))

    summary_path = out_path / "summary_{}.json".format(tag)
    _write_json(summary_path, {"config": config.to_dict(), "gain_points": records})
    files["summary"] = str(summary_path)

    curve_columns = [name for name in config.outputs if name in _CURVE_KINDS]
    if curve_columns:
        header = ["index", "target_mean_signal_photons", "n_pump_photons", "mean_signal_photons"]
        getters = []
        if "K_vs_gain" in curve_columns:
            header.append("schmidt_number")
            getters.append(lambda rec: rec["schmidt_number"])
        if "fidelity_vs_gain" in curve_columns:
            header.append("fidelity_to_lowest_gain")
            getters.append(lambda rec: rec["fidelity_to_lowest_gain"])
        if "purity_vs_gain" in curve_columns:
            header.append("purity")
            getters.append(lambda rec: rec["purity"])
        rows = [
            [
                rec["index"],
                rec["target_mean_signal_photons"],
                rec["n_pump_photons"],
                rec["mean_signal_photons"],
            ]
            + [getter(rec) for getter in getters]
            for rec in records
        ]
        curve_path = out_path / "gain_sweep_{}.csv".format(tag)
        _write_csv(curve_path, header, rows)
        files["gain_sweep"] = str(curve_path)

    grid = config.grid()

    if "jsa" in config.outputs and raws:
        document = {"omega_min": grid.omega_min, "delta_omega": dw, "n_points": grid.n_points}
        for label, idx in (("low", low), ("high", high)):
            raw = raws[idx]
            document[label] = {
                "target_mean_signal_photons": raw["target"],
                "mean_signal_photons": raw["mean_signal_photons"],
                "abs_jsa": _round_matrix(raw["abs_jsa"]),
            }
        jsa_path = out_path / "jsa_{}.json".format(tag)
        _write_json(jsa_path, document)
        files["jsa"] = str(jsa_path)

    if "schmidt_modes" in config.outputs and raws:
        document = {"omegas": grid.omegas.tolist()}
        for label, idx in (("low", low), ("high", high)):
            raw = raws[idx]
            document[label] = {
                "target_mean_signal_photons": raw["target"],
                "mean_signal_photons": raw["mean_signal_photons"],
                "squeeze_parameters": raw["r"][:5],
                "signal_modes_real": raw["rho_S"].real,
                "signal_modes_imag": raw["rho_S"].imag,
                "idler_modes_real": raw["rho_I"].real,
                "idler_modes_imag": raw["rho_I"].imag,
            }
        modes_path = out_path / "schmidt_modes_{}.json".format(tag)
        _write_json(modes_path, document)
        files["schmidt_modes"] = str(modes_path)

    if "fidelity_matrix" in config.outputs and raws:
        from .gaussian import fidelity_matrix as _fidelity_matrix

        document = {"labels": ["squeeze_1", "squeeze_2", "thermal_1", "thermal_2"]}
        for label, idx in (("low", low), ("high", high)):
            raw = raws[idx]
            matrix = _fidelity_matrix(list(raw["matrix_modes"]), dw)
            document[label] = {
                "target_mean_signal_photons": raw["target"],
                "mean_signal_photons": raw["mean_signal_photons"],
                "fidelities": matrix,
            }
        matrix_path = out_path / "fidelity_matrix_{}.json".format(tag)
        _write_json(matrix_path, document)
        files["fidelity_matrix"] = str(matrix_path)

    if "poling_amplitude" in config.outputs:
        files["poling_amplitude"] = str(
            write_poling_amplitude(config, out_path / "poling_amplitude_{}.csv".format(tag))
        )

    return ScenarioResult(
        config=config,
        gain_points=tuple(records),
        files=files,
        out_dir=str(out_path),
    )


def write_poling_amplitude(config: ScenarioConfig, path) -> Path:
    """Write the designed cumulative poling amplitude against its target.

    One row per domain: the far-edge position, the domain sign, the designed
    cumulative amplitude at that edge, and the target cumulative amplitude.

    Args:
        config (ScenarioConfig): an apodized scenario.
        path (path): CSV destination.

    Returns:
        Path: the written file.
    """
    if config.geometry == "unapodized_single":
        raise ConfigError("outputs: poling_amplitude requires an apodized geometry")
    profile = config.profile()
    target = PmfTarget(length=config.length, sigma_th=config.separability_width())
    edges = profile.domain_length * np.arange(1, profile.n_domains + 1)
    designed = np.cumsum(profile.signs) * profile.domain_length
    desired = target.cumulative_amplitude(edges)
    rows = [
        [float(edges[i]), int(profile.signs[i]), float(designed[i]), float(desired[i])]
        for i in range(profile.n_domains)
    ]
    path = Path(path)
    _write_csv(path, ["edge_z", "sign", "designed_cumulative", "target_cumulative"], rows)
    return path


# -- filter sweeps ---------------------------------------------------------


@dataclass(frozen=True)
class FilterSweepResult:
    """Purity and low/high fidelity across filter widths and gain targets.

    Args:
        config (ScenarioConfig): the (unfiltered) scenario that was swept.
        widths (tuple): top-hat half-widths (``inf`` means no filtering).
        records (tuple): one record per (width, gain target), grouped by
            width in the given order, gains in the configured order.
        files (dict): output kind to written file path (empty if no
            directory was given).
        out_dir (str or None): directory holding the files.
    """

    config: ScenarioConfig
    widths: tuple
    records: tuple
    files: dict
    out_dir: str

    def by_width(self, width: float) -> list:
        """The records of one width, in configured gain order."""
        return [rec for rec in self.records if rec["half_width"] == width]


def _sweep_gain_point(payload):
    """Analyze one gain point of a filter sweep (shared bare propagator)."""
    config, index, target, widths, cache_dir = payload
    n_pump, prop, measured = calibrate_gain_point(config, target, cache_dir=cache_dir)
    if not prop.passes_bogoliubov(1e-8):
        raise NumericalGateError(
            "propagator at gain target {:g} violates the canonical-commutation identities".format(target)
        )
    corr = correlators_from_propagator(prop)
    out = []
    for width in widths:
        if math.isinf(width):
            filt = FilterFunction.identity()
        else:
            filt = FilterFunction.top_hat(config.grid_center, width)
        analysis = analyze_filtered_state(corr, filt, want_modes=True)
        out.append(
            {
                "half_width": float(width),
                "index": index,
                "target_mean_signal_photons": float(target),
                "n_pump_photons": float(n_pump),
                "bare_mean_signal_photons": float(measured),
                "filtered_mean_signal_photons": analysis.mean_signal_photons,
                "purity": analysis.purity,
                "filtered_schmidt_number": analysis.schmidt_number,
                "mode": analysis.modes.squeeze_signal[0].copy(),
            }
        )
    return out


def sweep_filters(
    config: ScenarioConfig,
    widths,
    out_dir=None,
    cache_dir=None,
    max_workers=None,
) -> FilterSweepResult:
    """Sweep top-hat filter widths across the configured gain ladder.

    The pump is calibrated and the propagator built once per gain target and
    shared by every width; gain points are labeled by their pre-filter mean
    signal photon number.  Each record carries the purity, the filtered
    effective mode number, and the fidelity of the dominant filtered squeeze
    mode to its own width's lowest-gain reference.

    Args:
        config (ScenarioConfig): an ``apodized_single`` scenario; any
            configured filter block is ignored in favor of ``widths``.
        widths: positive top-hat half-widths; ``inf`` means no filtering.
        out_dir (path, optional): if given, a sweep CSV and JSON are written.
        cache_dir (path, optional): propagator disk cache.
        max_workers (int, optional): worker-pool size over gain points.

    Returns:
        FilterSweepResult: per-(width, gain) records and any written files.
    """
    if config.geometry != "apodized_single":
        raise ConfigError(
            "geometry: filter sweeps require 'apodized_single', got {!r}".format(config.geometry)
        )
    widths = tuple(float(w) for w in widths)
    if not widths:
        raise ConfigError("filter widths: at least one half-width is required")
    for i, width in enumerate(widths):
        if not width > 0 or math.isnan(width):
            raise ConfigError("filter widths[{}]: must be positive, got {!r}".format(i, width))

    targets = config.gain_targets
    payloads = [(config, i, target, widths, cache_dir) for i, target in enumerate(targets)]
    workers = _resolve_workers(max_workers, len(payloads)) if payloads else 1
    if workers == 1:
        per_point = [_sweep_gain_point(p) for p in payloads]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_point = list(pool.map(_sweep_gain_point, payloads))

    dw = config.grid().delta_omega
    records = []
    for w_idx, width in enumerate(widths):
        rows = [point[w_idx] for point in per_point]
        if rows:
            ref_idx = min(range(len(rows)), key=lambda i: rows[i]["target_mean_signal_photons"])
            reference = rows[ref_idx]["mode"]
        for row in rows:
            row = dict(row)
            mode = row.pop("mode")
            row["fidelity_to_lowest_gain"] = mode_fidelity(reference, mode, dw)
            records.append(row)

    files = {}
    out_str = None
    if out_dir is not None:
        out_path = Path(out_dir)
        out_path.mkdir(parents=True, exist_ok=True)
        out_str = str(out_path)
        tag = config.config_hash()
        header = [
            "half_width",
            "index",
            "target_mean_signal_photons",
            "n_pump_photons",
            "bare_mean_signal_photons",
            "filtered_mean_signal_photons",
            "purity",
            "filtered_schmidt_number",
            "fidelity_to_lowest_gain",
        ]
        rows = [[rec[key] for key in header] for rec in records]
        csv_path = out_path / "filter_sweep_{}.csv".format(tag)
        _write_csv(csv_path, header, rows)
        files["filter_sweep"] = str(csv_path)
        json_path = out_path / "filter_sweep_{}.json".format(tag)
        _write_json(json_path, {"config": config.to_dict(), "widths": list(widths), "records": records})
        files["filter_sweep_json"] = str(json_path)

    return FilterSweepResult(
        config=config,
        widths=widths,
        records=tuple(records),
        files=files,
        out_dir=out_str,
    )
