"""Tests for scenario configuration, calibration, filtered analysis, and outputs."""

import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from twinbeam.errors import ConfigError, NumericalGateError
from twinbeam.gaussian import (
    bloch_messiah,
    correlators_from_propagator,
    correlators_from_schmidt,
    covariance_from_state,
    extract_mode_sets,
    purity,
    williamson,
)
from twinbeam.grids import FilterFunction, FrequencyGrid
from twinbeam.poling import PmfTarget, design_domains
from twinbeam.propagation import double_pass_propagator, stitch
from twinbeam.scenarios import (
    GEOMETRIES,
    OUTPUT_KINDS,
    ScenarioConfig,
    analyze_filtered_state,
    build_propagator,
    calibrate_gain_point,
    default_gain_ladder,
    run_scenario,
    sweep_filters,
    write_poling_amplitude,
)
from twinbeam.schmidt import mode_fidelity, schmidt_decompose

np.random.seed(42)


def small_unapodized(**overrides) -> ScenarioConfig:
    """A fast unapodized scenario on a coarse grid."""
    data = {
        "geometry": "unapodized_single",
        "grid": {"points": 61},
        "gain": {"targets": [1e-3, 0.5]},
    }
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


def small_apodized(**overrides) -> ScenarioConfig:
    """A fast apodized scenario with a short domain ladder."""
    data = {
        "geometry": "apodized_single",
        "grid": {"points": 61},
        "medium": {"n_domains": 50},
        "gain": {"targets": [1e-3, 0.5]},
    }
    data.update(overrides)
    return ScenarioConfig.from_dict(data)


class TestDefaultGainLadder:
    def test_endpoints_and_length(self):
        ladder = default_gain_ladder(3e-4, 10.6, 20)
        assert len(ladder) == 20
        assert ladder[0] == pytest.approx(3e-4, rel=1e-12)
        assert ladder[-1] == pytest.approx(10.6, rel=1e-12)

    def test_log_spacing(self):
        ladder = np.array(default_gain_ladder(1e-3, 1.0, 7))
        ratios = ladder[1:] / ladder[:-1]
        assert np.allclose(ratios, ratios[0])

    def test_single_point(self):
        assert default_gain_ladder(0.5, 2.0, 1) == (0.5,)

    @given(
        start=st.floats(1e-6, 1.0),
        factor=st.floats(1.0, 1e4),
        points=st.integers(1, 30),
    )
    @settings(max_examples=50, deadline=None)
    def test_monotone_with_exact_endpoints(self, start, factor, points):
        ladder = default_gain_ladder(start, start * factor, points)
        assert len(ladder) == points
        assert ladder[0] == pytest.approx(start, rel=1e-9)
        assert all(b >= a * (1.0 - 1e-12) for a, b in zip(ladder, ladder[1:]))


class TestScenarioConfigValidation:
    def test_preset_unapodized_defaults(self):
        config = ScenarioConfig.preset("unapodized_single")
        assert config.grid_center == 100.0
        assert config.grid_half_width == 6.0
        assert config.grid_points == 501
        assert config.kappa_s == 3.0
        assert config.inv_v_P == 10.0
        assert config.gamma == 1.0
        assert config.length == 1.0
        assert config.n_domains == 1
        assert config.pump_sigma == 1.0
        assert len(config.gain_targets) == 20
        assert config.gain_targets[0] == pytest.approx(3e-4)
        assert config.gain_targets[-1] == pytest.approx(10.6)
        assert config.filter_kind is None

    def test_preset_apodized_defaults(self):
        config = ScenarioConfig.preset("apodized_single")
        assert config.kappa_s == 8.0
        assert config.n_domains == 1000
        # Eight envelope widths with sigma_th = 1 / (sigma kappa_s).
        assert config.separability_width() == pytest.approx(1.0 / 8.0)
        assert config.length == pytest.approx(8.0 * config.separability_width())

    def test_preset_rejects_unknown_geometry(self):
        with pytest.raises(ConfigError, match="geometry"):
            ScenarioConfig.preset("curved_waveguide")

    def test_round_trip_through_dict(self):
        config = small_unapodized(filter={"kind": "top_hat", "half_width": 1.5})
        rebuilt = ScenarioConfig.from_dict(config.to_dict())
        assert rebuilt == config

    def test_round_trip_through_json(self):
        config = small_apodized()
        rebuilt = ScenarioConfig.from_json(json.dumps(config.to_dict()))
        assert rebuilt == config

    def test_hash_is_stable_and_sensitive(self):
        config = small_unapodized()
        assert config.config_hash() == small_unapodized().config_hash()
        assert len(config.config_hash()) == 12
        assert int(config.config_hash(), 16) >= 0
        changed = small_unapodized(grid={"points": 71})
        assert changed.config_hash() != config.config_hash()

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError, match="pumps"):
            ScenarioConfig.from_dict({"geometry": "unapodized_single", "pumps": {}})

    def test_unknown_block_key(self):
        with pytest.raises(ConfigError, match="grid.spacing"):
            small_unapodized(grid={"points": 61, "spacing": 0.1})

    def test_bad_grid_points(self):
        with pytest.raises(ConfigError, match="grid.points"):
            small_unapodized(grid={"points": 1})

    def test_bad_half_width(self):
        with pytest.raises(ConfigError, match="grid.half_width"):
            small_unapodized(grid={"points": 61, "half_width": -2.0})

    def test_multiple_errors_reported_together(self):
        with pytest.raises(ConfigError, match="grid.points.*medium.gamma|medium.gamma.*grid.points"):
            small_unapodized(grid={"points": 0}, medium={"gamma": -1.0})

    def test_pump_velocity_must_exceed_signal_mismatch(self):
        with pytest.raises(ConfigError, match="inv_v_P"):
            small_unapodized(medium={"kappa_s": 3.0, "inv_v_P": 2.0})

    def test_gain_targets_and_ladder_conflict(self):
        with pytest.raises(ConfigError, match="targets or ladder"):
            small_unapodized(gain={"targets": [0.1], "ladder": {"points": 3}})

    def test_gain_ladder_block(self):
        config = small_unapodized(gain={"ladder": {"start": 1e-3, "stop": 1.0, "points": 4}})
        assert len(config.gain_targets) == 4
        assert config.gain_targets[0] == pytest.approx(1e-3)
        assert config.gain_targets[-1] == pytest.approx(1.0)

    def test_gain_ladder_backwards(self):
        with pytest.raises(ConfigError, match="gain.ladder.stop"):
            small_unapodized(gain={"ladder": {"start": 1.0, "stop": 0.1, "points": 3}})

    def test_negative_gain_target(self):
        with pytest.raises(ConfigError, match=r"gain.targets\[1\]"):
            small_unapodized(gain={"targets": [0.1, -0.2]})

    def test_empty_targets_allowed(self):
        config = small_unapodized(gain={"targets": []})
        assert config.gain_targets == ()

    def test_filter_requires_half_width(self):
        with pytest.raises(ConfigError, match="filter.half_width"):
            small_unapodized(filter={"kind": "top_hat"})

    def test_filter_center_defaults_to_grid_center(self):
        config = small_unapodized(filter={"kind": "top_hat", "half_width": 1.5})
        assert config.filter_center == config.grid_center

    def test_filter_outside_grid(self):
        with pytest.raises(ConfigError, match="outside the frequency grid"):
            small_unapodized(filter={"kind": "top_hat", "center": 150.0, "half_width": 1.0})

    def test_identity_filter_takes_no_geometry(self):
        with pytest.raises(ConfigError, match="identity"):
            small_unapodized(filter={"kind": "identity", "half_width": 1.0})

    def test_unknown_filter_kind(self):
        with pytest.raises(ConfigError, match="filter.kind"):
            small_unapodized(filter={"kind": "butterworth", "half_width": 1.0})

    def test_unknown_output_kind(self):
        with pytest.raises(ConfigError, match="unknown output kind"):
            small_unapodized(outputs=["spectrogram"])

    def test_duplicate_output_kind(self):
        with pytest.raises(ConfigError, match="duplicate"):
            small_unapodized(outputs=["jsa", "jsa"])

    def test_filter_only_outputs_need_filter(self):
        with pytest.raises(ConfigError, match="purity_vs_gain requires a filter"):
            small_unapodized(outputs=["purity_vs_gain"])

    def test_poling_amplitude_needs_apodized(self):
        with pytest.raises(ConfigError, match="apodized"):
            small_unapodized(outputs=["poling_amplitude"])

    def test_all_output_kinds_accepted(self):
        config = small_apodized(
            outputs=list(OUTPUT_KINDS),
            filter={"kind": "top_hat", "half_width": 1.5},
        )
        assert config.outputs == OUTPUT_KINDS

    def test_lab_units_fix_the_grid_center(self):
        config = small_unapodized(lab_units={"pump_wavelength_nm": 776.0, "pump_duration_fs": 200.0})
        expected = math.pi * 2.99792458e8 * 200e-15 / 776e-9
        assert config.grid_center == pytest.approx(expected)
        assert config.pump_sigma == 1.0

    def test_lab_units_conflict_with_pump_sigma(self):
        with pytest.raises(ConfigError, match="pump.sigma"):
            small_unapodized(
                lab_units={"pump_wavelength_nm": 776.0, "pump_duration_fs": 200.0},
                pump={"sigma": 2.0},
            )

    def test_explicit_center_overrides_lab_units(self):
        config = small_unapodized(
            grid={"points": 61, "center": 80.0},
            lab_units={"pump_wavelength_nm": 776.0, "pump_duration_fs": 200.0},
        )
        assert config.grid_center == 80.0

    def test_from_json_rejects_bad_text(self):
        with pytest.raises(ConfigError, match="not valid JSON"):
            ScenarioConfig.from_json("{geometry:")

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            ScenarioConfig.load(tmp_path / "missing.json")

    def test_load_round_trip(self, tmp_path):
        config = small_unapodized()
        path = tmp_path / "config.json"
        path.write_text(json.dumps(config.to_dict()))
        assert ScenarioConfig.load(path) == config

    def test_with_gain_targets(self):
        config = small_unapodized().with_gain_targets([0.25])
        assert config.gain_targets == (0.25,)
        with pytest.raises(ConfigError, match=r"gain.targets\[0\]"):
            small_unapodized().with_gain_targets([-1.0])

    def test_resampled_ladder(self):
        config = small_unapodized().resampled_ladder(5)
        assert len(config.gain_targets) == 5
        assert config.gain_targets[0] == pytest.approx(1e-3)
        assert config.gain_targets[-1] == pytest.approx(0.5)

    def test_resampled_ladder_rejects_empty(self):
        config = small_unapodized(gain={"targets": []})
        with pytest.raises(ConfigError, match="empty gain ladder"):
            config.resampled_ladder(5)


class TestBuilders:
    def test_grid_matches_configuration(self):
        config = small_unapodized()
        grid = config.grid()
        assert grid.n_points == 61
        assert grid.omegas[0] == pytest.approx(94.0)
        assert grid.omegas[-1] == pytest.approx(106.0)

    def test_medium_is_group_velocity_symmetric(self):
        config = small_unapodized()
        medium = config.medium()
        assert 1.0 / medium.v_S - 1.0 / medium.v_P == pytest.approx(config.kappa_s)
        assert 1.0 / medium.v_I - 1.0 / medium.v_P == pytest.approx(-config.kappa_s)
        assert medium.length == config.length

    def test_pump_carrier_doubles_grid_center(self):
        pump = small_unapodized().pump(1e-4)
        assert pump.omega_bar_P == pytest.approx(200.0)
        assert pump.sigma == 1.0
        assert pump.n_pump_photons == 1e-4

    def test_separability_width(self):
        assert small_apodized().separability_width() == pytest.approx(1.0 / 8.0)
        custom = small_apodized(medium={"kappa_s": 4.0, "n_domains": 50})
        assert custom.separability_width() == pytest.approx(1.0 / 4.0)

    def test_unapodized_profile_is_uniform(self):
        profile = small_unapodized().profile()
        assert profile.n_domains == 1
        assert np.all(profile.signs == 1)

    def test_apodized_profile_matches_direct_design(self):
        config = small_apodized()
        profile = config.profile()
        target = PmfTarget(length=config.length, sigma_th=config.separability_width())
        direct = design_domains(target, config.n_domains)
        assert np.array_equal(profile.signs, direct.signs)
        assert profile.domain_length == pytest.approx(config.length / config.n_domains)
        assert set(np.unique(profile.signs)) <= {-1, 1}

    def test_filter_builders(self):
        assert small_unapodized().filter() is None
        ident = small_unapodized(filter={"kind": "identity"}).filter()
        assert ident.kind == "identity"
        top = small_unapodized(filter={"kind": "top_hat", "half_width": 1.5}).filter()
        assert top.kind == "top_hat"
        assert top.center == 100.0
        assert top.half_width == 1.5

    def test_build_propagator_matches_stitch(self):
        config = small_unapodized(grid={"points": 41})
        prop = build_propagator(config, 1e-4)
        direct = stitch(config.profile(), config.grid(), config.medium(), config.pump(1e-4))
        assert np.allclose(prop.matrix, direct.matrix)

    def test_build_propagator_double_pass(self):
        config = ScenarioConfig.from_dict(
            {
                "geometry": "apodized_double",
                "grid": {"points": 41},
                "medium": {"n_domains": 40},
                "gain": {"targets": [1e-3]},
            }
        )
        prop = build_propagator(config, 1e-4)
        direct = double_pass_propagator(
            config.grid(), config.medium(), config.pump(1e-4), config.profile()
        )
        assert np.allclose(prop.matrix, direct.matrix)
        single = stitch(config.profile(), config.grid(), config.medium(), config.pump(1e-4))
        assert not np.allclose(prop.matrix, single.matrix)


class TestCalibration:
    def test_hits_the_target(self):
        config = small_unapodized()
        for target in (1e-3, 0.5):
            n_pump, prop, measured = calibrate_gain_point(config, target)
            assert measured == pytest.approx(target, rel=0.02)
            assert n_pump > 0
            assert prop.grid.n_points == 61

    def test_deterministic(self):
        config = small_unapodized()
        first = calibrate_gain_point(config, 0.1)
        second = calibrate_gain_point(config, 0.1)
        assert first[0] == second[0]
        assert first[2] == second[2]

    def test_low_gain_response_is_linear(self):
        config = small_unapodized()
        n_small = calibrate_gain_point(config, 1e-5)[0]
        n_large = calibrate_gain_point(config, 3e-5)[0]
        assert n_large / n_small == pytest.approx(3.0, rel=1e-3)

    def test_rejects_nonpositive_target(self):
        with pytest.raises(ConfigError, match="gain target"):
            calibrate_gain_point(small_unapodized(), 0.0)


@pytest.fixture(scope="module")
def propagator():
    return calibrate_gain_point(small_unapodized(), 0.5)[1]


class TestAnalyzeFilteredState:
    def test_identity_filter_preserves_purity_and_modes(self, propagator):
        analysis = analyze_filtered_state(propagator, FilterFunction.identity())
        assert analysis.purity == pytest.approx(1.0, abs=1e-8)
        decomposition = schmidt_decompose(propagator)
        assert analysis.mean_signal_photons == pytest.approx(
            float(np.sum(np.sinh(decomposition.r) ** 2)), rel=1e-8
        )
        dw = propagator.grid.delta_omega
        fid = mode_fidelity(analysis.modes.squeeze_signal[0], decomposition.rho_S[0], dw)
        assert fid == pytest.approx(1.0, abs=1e-8)
        assert analysis.r[0] == pytest.approx(decomposition.r[0], rel=1e-8)

    def test_band_reduction_matches_full_grid_chain(self, propagator):
        filt = FilterFunction.top_hat(100.0, 1.5)
        analysis = analyze_filtered_state(propagator, filt)
        # Reference: run the decomposition chain on the full grid, vacuum
        # bins included.
        corr = correlators_from_propagator(propagator).filtered(filt)
        cov = covariance_from_state(corr)
        assert analysis.purity == pytest.approx(purity(cov), abs=1e-10)
        will = williamson(cov)
        bm = bloch_messiah(will.s, atol=1e-6)
        full = extract_mode_sets(will, bm, propagator.grid)
        assert analysis.r[0] == pytest.approx(full.r[0], rel=1e-7)
        assert analysis.nbar[0] == pytest.approx(full.nbar[0], rel=1e-6, abs=1e-12)
        dw = propagator.grid.delta_omega
        fid = mode_fidelity(analysis.modes.squeeze_signal[0], full.squeeze_signal[0], dw)
        assert fid == pytest.approx(1.0, abs=1e-7)
        fid_th = mode_fidelity(analysis.modes.thermal_signal[0], full.thermal_signal[0], dw)
        assert fid_th == pytest.approx(1.0, abs=1e-6)

    def test_support_covers_transmitting_bins(self, propagator):
        filt = FilterFunction.top_hat(100.0, 1.5)
        analysis = analyze_filtered_state(propagator, filt)
        transmitting = np.flatnonzero(filt.transmission(propagator.grid.omegas) > 0)
        assert analysis.support == (transmitting[0], transmitting[-1])
        lo, hi = analysis.support
        outside = np.ones(propagator.grid.n_points, dtype=bool)
        outside[lo : hi + 1] = False
        assert np.all(analysis.modes.squeeze_signal[:, outside] == 0)

    def test_filtering_reduces_photon_number_and_purity(self, propagator):
        bare = analyze_filtered_state(propagator, FilterFunction.identity(), want_modes=False)
        cut = analyze_filtered_state(propagator, FilterFunction.top_hat(100.0, 1.5), want_modes=False)
        assert cut.mean_signal_photons < bare.mean_signal_photons
        assert cut.purity < bare.purity

    def test_purity_only_mode(self, propagator):
        analysis = analyze_filtered_state(propagator, FilterFunction.top_hat(100.0, 1.5), want_modes=False)
        assert analysis.modes is None
        assert analysis.r.size == 0
        assert math.isnan(analysis.schmidt_number)

    def test_blocked_filter_raises(self, propagator):
        filt = FilterFunction.top_hat(100.0, propagator.grid.delta_omega / 10.0)
        shifted = FilterFunction.top_hat(
            100.0 + propagator.grid.delta_omega / 2.0, propagator.grid.delta_omega / 10.0
        )
        for blocked in (filt, shifted):
            if np.any(blocked.transmission(propagator.grid.omegas) > 0):
                continue
            with pytest.raises(ValueError, match="transmits no light"):
                analyze_filtered_state(propagator, blocked)

    def test_correlator_and_schmidt_inputs_agree(self, propagator):
        filt = FilterFunction.top_hat(100.0, 1.5)
        from_prop = analyze_filtered_state(propagator, filt, want_modes=False)
        from_corr = analyze_filtered_state(
            correlators_from_propagator(propagator), filt, want_modes=False
        )
        from_schmidt = analyze_filtered_state(schmidt_decompose(propagator), filt, want_modes=False)
        assert from_corr.purity == pytest.approx(from_prop.purity, abs=1e-12)
        assert from_schmidt.purity == pytest.approx(from_prop.purity, abs=1e-8)

    def test_rejects_unknown_state_type(self):
        with pytest.raises(TypeError, match="ndarray"):
            analyze_filtered_state(np.eye(4), FilterFunction.identity())


@pytest.fixture(scope="module")
def config():
    return small_unapodized(
        gain={"targets": [1e-3, 0.05, 0.5]},
        filter={"kind": "top_hat", "half_width": 1.5},
        outputs=[
            "jsa",
            "schmidt_modes",
            "K_vs_gain",
            "fidelity_vs_gain",
            "purity_vs_gain",
            "fidelity_matrix",
        ],
    )


@pytest.fixture(scope="module")
def result(config, tmp_path_factory):
    return run_scenario(config, tmp_path_factory.mktemp("scenario"), max_workers=1)


class TestRunScenario:
    def test_summary_records(self, config, result):
        assert len(result.gain_points) == 3
        for record, target in zip(result.gain_points, config.gain_targets):
            assert record["target_mean_signal_photons"] == target
            assert record["mean_signal_photons"] == pytest.approx(target, rel=0.02)
            assert record["schmidt_number"] > 1.0
            assert 0.0 < record["purity"] <= 1.0 + 1e-9
            assert record["filtered_schmidt_number"] >= 1.0
        assert result.gain_points[0]["fidelity_to_lowest_gain"] == pytest.approx(1.0, abs=1e-12)
        fidelities = [rec["fidelity_to_lowest_gain"] for rec in result.gain_points]
        assert fidelities[2] < fidelities[0]

    def test_files_carry_config_hash(self, config, result):
        tag = config.config_hash()
        expected = {"summary", "gain_sweep", "jsa", "schmidt_modes", "fidelity_matrix"}
        assert expected == set(result.files)
        for path in result.files.values():
            assert tag in Path(path).name
            assert Path(path).exists()

    def test_summary_file_round_trips(self, config, result):
        document = json.loads(Path(result.files["summary"]).read_text())
        assert ScenarioConfig.from_dict(document["config"]) == config
        assert len(document["gain_points"]) == 3
        for record, live in zip(document["gain_points"], result.gain_points):
            assert record["n_pump_photons"] == live["n_pump_photons"]

    def test_summary_matches_recomputation(self, config, result):
        record = result.gain_points[1]
        prop = build_propagator(config, record["n_pump_photons"])
        measured = float(np.sum(np.abs(prop.U_SI) ** 2))
        assert record["mean_signal_photons"] == pytest.approx(measured, rel=1e-12)
        decomposition = schmidt_decompose(prop)
        weights = np.sinh(decomposition.r) ** 2
        k_direct = float(np.sum(weights)) ** 2 / float(np.sum(weights**2))
        assert record["schmidt_number"] == pytest.approx(k_direct, rel=1e-9)

    def test_gain_sweep_columns(self, result):
        lines = Path(result.files["gain_sweep"]).read_text().splitlines()
        header = lines[0].split(",")
        assert header == [
            "index",
            "target_mean_signal_photons",
            "n_pump_photons",
            "mean_signal_photons",
            "schmidt_number",
            "fidelity_to_lowest_gain",
            "purity",
        ]
        assert len(lines) == 4

    def test_jsa_file_shape(self, config, result):
        document = json.loads(Path(result.files["jsa"]).read_text())
        n = config.grid_points
        assert document["n_points"] == n
        for label in ("low", "high"):
            jsa = np.array(document[label]["abs_jsa"], dtype=float)
            assert jsa.shape == (n, n)
            assert np.all(jsa >= 0)
        assert document["low"]["target_mean_signal_photons"] == config.gain_targets[0]
        assert document["high"]["target_mean_signal_photons"] == config.gain_targets[-1]

    def test_schmidt_modes_file(self, config, result):
        document = json.loads(Path(result.files["schmidt_modes"]).read_text())
        assert len(document["omegas"]) == config.grid_points
        for label in ("low", "high"):
            block = document[label]
            assert len(block["squeeze_parameters"]) == 5
            real = np.array(block["signal_modes_real"], dtype=float)
            assert real.shape == (2, config.grid_points)
            imag = np.array(block["idler_modes_imag"], dtype=float)
            assert imag.shape == (2, config.grid_points)

    def test_fidelity_matrix_file(self, result):
        document = json.loads(Path(result.files["fidelity_matrix"]).read_text())
        assert document["labels"] == ["squeeze_1", "squeeze_2", "thermal_1", "thermal_2"]
        for label in ("low", "high"):
            matrix = np.array(document[label]["fidelities"], dtype=float)
            assert matrix.shape == (4, 4)
            assert np.allclose(matrix, matrix.T, atol=1e-12)
            assert np.allclose(np.diag(matrix), 1.0, atol=1e-9)
            assert matrix[0, 1] < 1e-6

    def test_rerun_is_byte_identical(self, config, result, tmp_path):
        again = run_scenario(config, tmp_path / "again", max_workers=1)
        for kind, path in result.files.items():
            assert Path(path).read_bytes() == Path(again.files[kind]).read_bytes()

    def test_worker_pool_matches_serial(self, tmp_path):
        config = small_unapodized(
            grid={"points": 41},
            gain={"targets": [1e-3, 0.2]},
            outputs=["K_vs_gain"],
        )
        serial = run_scenario(config, tmp_path / "serial", max_workers=1)
        pooled = run_scenario(config, tmp_path / "pooled", max_workers=2)
        for kind, path in serial.files.items():
            assert Path(path).read_bytes() == Path(pooled.files[kind]).read_bytes()

    def test_empty_ladder(self, tmp_path):
        config = small_unapodized(gain={"targets": []}, outputs=["K_vs_gain"])
        result = run_scenario(config, tmp_path / "empty")
        assert result.gain_points == ()
        lines = Path(result.files["gain_sweep"]).read_text().splitlines()
        assert len(lines) == 1
        assert "jsa" not in result.files


class TestWritePolingAmplitude:
    def test_rows_track_the_target(self, tmp_path):
        config = small_apodized()
        path = write_poling_amplitude(config, tmp_path / "poling.csv")
        lines = path.read_text().splitlines()
        assert lines[0] == "edge_z,sign,designed_cumulative,target_cumulative"
        assert len(lines) == config.n_domains + 1
        rows = np.array([[float(cell) for cell in line.split(",")] for line in lines[1:]])
        assert rows[-1, 0] == pytest.approx(config.length)
        assert set(np.unique(rows[:, 1])) <= {-1.0, 1.0}
        profile = config.profile()
        worst = np.max(np.abs(rows[:, 2] - rows[:, 3]))
        total = rows[-1, 3]
        assert worst / total == pytest.approx(profile.tracking_error, abs=1e-12)

    def test_rejects_unapodized(self, tmp_path):
        with pytest.raises(ConfigError, match="apodized"):
            write_poling_amplitude(small_unapodized(), tmp_path / "poling.csv")


@pytest.fixture(scope="module")
def sweep(tmp_path_factory):
    config = small_apodized()
    widths = (1.0, 2.0, float("inf"))
    return config, widths, sweep_filters(
        config, widths, out_dir=tmp_path_factory.mktemp("sweep"), max_workers=1
    )


class TestSweepFilters:
    def test_record_grid_is_complete(self, sweep):
        config, widths, result = sweep
        assert len(result.records) == len(widths) * len(config.gain_targets)
        for width in widths:
            rows = result.by_width(width)
            assert [row["target_mean_signal_photons"] for row in rows] == list(config.gain_targets)

    def test_infinite_width_means_no_filtering(self, sweep):
        _, _, result = sweep
        for row in result.by_width(float("inf")):
            assert row["filtered_mean_signal_photons"] == pytest.approx(
                row["bare_mean_signal_photons"], rel=1e-9
            )
            assert row["purity"] == pytest.approx(1.0, abs=1e-8)

    def test_narrow_filters_cost_purity(self, sweep):
        config, _, result = sweep
        high = max(config.gain_targets)
        purities = {
            width: [r for r in result.by_width(width) if r["target_mean_signal_photons"] == high][0][
                "purity"
            ]
            for width in (1.0, 2.0, float("inf"))
        }
        assert purities[1.0] < purities[2.0] < purities[float("inf")]

    def test_lowest_gain_is_its_own_reference(self, sweep):
        config, widths, result = sweep
        low = min(config.gain_targets)
        for width in widths:
            rows = result.by_width(width)
            ref = [r for r in rows if r["target_mean_signal_photons"] == low][0]
            assert ref["fidelity_to_lowest_gain"] == pytest.approx(1.0, abs=1e-12)

    def test_files_written(self, sweep):
        _, _, result = sweep
        assert set(result.files) == {"filter_sweep", "filter_sweep_json"}
        document = json.loads(Path(result.files["filter_sweep_json"]).read_text())
        assert len(document["records"]) == len(result.records)
        lines = Path(result.files["filter_sweep"]).read_text().splitlines()
        assert len(lines) == len(result.records) + 1

    def test_requires_apodized_single(self):
        with pytest.raises(ConfigError, match="apodized_single"):
            sweep_filters(small_unapodized(), (1.0,))

    def test_rejects_bad_widths(self):
        config = small_apodized()
        with pytest.raises(ConfigError, match="at least one"):
            sweep_filters(config, ())
        with pytest.raises(ConfigError, match=r"widths\[1\]"):
            sweep_filters(config, (1.0, -2.0))
