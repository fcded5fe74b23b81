"""Command-line interface: run scenarios, design poling, decompose covariances.

Exit codes: 0 on success, 1 for configuration problems (unreadable or
invalid configuration files, bad field values, malformed input data), and 2
when a numerical validity gate fails during a computation.
"""

import json
import os
import sys

import click
import numpy as np

from .errors import ConfigError, NumericalGateError
from .gaussian import bloch_messiah, purity, williamson
from .scenarios import (
    ScenarioConfig,
    _jsonify,
    run_scenario,
    write_poling_amplitude,
)

_CACHE_ENV = "TWINBEAM_CACHE_DIR"


def _resolve_cache(option):
    if option:
        return option
    return os.environ.get(_CACHE_ENV) or None


def _fail(code: int, prefix: str, exc: Exception):
    click.echo("{}: {}".format(prefix, exc), err=True)
    sys.exit(code)


@click.group()
def main():
    """Simulator for waveguided twin-beam squeezed-light sources."""


@main.command()
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_dir", default="twinbeam-out", show_default=True, help="Output directory.")
@click.option("--gain-points", type=int, default=None, help="Resample the gain ladder to this many points.")
@click.option("--cache", "cache_dir", default=None, help="Propagator cache directory (or set $TWINBEAM_CACHE_DIR).")
@click.option("--workers", type=int, default=None, help="Worker-pool size over gain points.")
def simulate(config_path, out_dir, gain_points, cache_dir, workers):
    """Run the scenario described by a JSON configuration file."""
    try:
        config = ScenarioConfig.load(config_path)
        if gain_points is not None:
            config = config.resampled_ladder(gain_points)
        result = run_scenario(
            config,
            out_dir,
            cache_dir=_resolve_cache(cache_dir),
            max_workers=workers,
        )
    except ConfigError as exc:
        _fail(1, "configuration error", exc)
    except NumericalGateError as exc:
        _fail(2, "numerical gate failure", exc)
    click.echo("scenario {} ({} gain points)".format(config.config_hash(), len(result.gain_points)))
    for record in result.gain_points:
        line = (
            "  target {:<12.6g} N_P {:<12.6g} <N_S> {:<12.6g} K {:<10.6g} F(L,H) {:.6g}".format(
                record["target_mean_signal_photons"],
                record["n_pump_photons"],
                record["mean_signal_photons"],
                record["schmidt_number"],
                record["fidelity_to_lowest_gain"],
            )
        )
        if "purity" in record:
            line += " purity {:.6g}".format(record["purity"])
        click.echo(line)
    for kind in sorted(result.files):
        click.echo("wrote {}: {}".format(kind, result.files[kind]))


@main.command("pole-design")
@click.argument("config_path", type=click.Path())
@click.option("--out", "out_path", default=None, help="Write the cumulative-amplitude CSV here.")
def pole_design(config_path, out_path):
    """Design the poling profile of a configuration and report its quality."""
    try:
        config = ScenarioConfig.load(config_path)
        profile = config.profile()
        if out_path is not None:
            written = write_poling_amplitude(config, out_path)
    except ConfigError as exc:
        _fail(1, "configuration error", exc)
    except NumericalGateError as exc:
        _fail(2, "numerical gate failure", exc)
    click.echo("geometry {}".format(config.geometry))
    click.echo("domains {}".format(profile.n_domains))
    click.echo("domain_length {:.10g}".format(profile.domain_length))
    click.echo("envelope_width {:.10g}".format(config.separability_width()))
    if np.isfinite(profile.tracking_error):
        click.echo("tracking_error {:.6g}".format(profile.tracking_error))
    if out_path is not None:
        click.echo("wrote poling_amplitude: {}".format(written))


def _load_covariance(path):
    try:
        loaded = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError("cannot read covariance file: {}".format(exc))
    if isinstance(loaded, np.ndarray):
        matrix = loaded
    else:
        with loaded:
            names = list(loaded.files)
            key = "covariance" if "covariance" in names else names[0] if names else None
            if key is None:
                raise ConfigError("covariance archive is empty")
            matrix = loaded[key]
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % 2:
        raise ConfigError(
            "covariance must be a square even-dimensional matrix, got shape {}".format(matrix.shape)
        )
    return matrix.astype(float)


@main.command()
@click.argument("covariance_path", type=click.Path())
@click.option("--out", "out_path", default=None, help="Write the JSON report here instead of stdout.")
def decompose(covariance_path, out_path):
    """Normal-mode decomposition of a covariance matrix (.npy or .npz)."""
    try:
        matrix = _load_covariance(covariance_path)
        try:
            will = williamson(matrix)
        except ValueError as exc:
            raise ConfigError(str(exc))
        bm = bloch_messiah(will.s, atol=1e-6)
        state_purity = purity(matrix)
    except ConfigError as exc:
        _fail(1, "configuration error", exc)
    except NumericalGateError as exc:
        _fail(2, "numerical gate failure", exc)
    report = {
        "n_modes": will.n_modes,
        "purity": state_purity,
        "symplectic_eigenvalues": list(will.nu),
        "thermal_occupancies": list(will.nbar),
        "squeeze_parameters": list(bm.r),
    }
    text = json.dumps(_jsonify(report), sort_keys=True, indent=2)
    if out_path is None:
        click.echo(text)
    else:
        with open(out_path, "w") as handle:
            handle.write(text + "\n")
        click.echo("wrote decomposition: {}".format(out_path))


if __name__ == "__main__":
    main()
