"""Temporal-mode structure of a twin-beam propagator.

The squeezing blocks of a canonical propagator share one set of singular
values ``sinh(r_lambda)``; their left singular families are the output
temporal (Schmidt) modes of the two beams.  With those families the only
nonvanishing output moments take diagonal form::

    <a_S^dag a_S> = sum sinh^2(r) conj(rho_S) rho_S
    <a_S a_I>     = sum sinh(r) cosh(r) rho_S rho_I

All mode functions carry unit L2 norm with respect to the grid measure,
``sum |rho(omega_n)|^2 d_omega = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twinbeam.errors import CalibrationError, NumericalGateError
from twinbeam.grids import FrequencyGrid
from twinbeam.propagation import Propagator

__all__ = [
    "SchmidtDecomposition",
    "JsaMatrix",
    "schmidt_decompose",
    "mean_signal_photons",
    "schmidt_number",
    "jsa",
    "mode_fidelity",
    "calibrate_pump_power",
]

_MODE_FLOOR = 1e-10


@dataclass(frozen=True)
class SchmidtDecomposition:
    """Squeezing parameters and temporal-mode families of a propagator.

    Args:
        r (np.ndarray): squeezing parameters, nonnegative, descending.
        rho_S (np.ndarray): signal modes, shape ``(n_modes, N)``; row
            ``lambda`` is the mode paired with ``r[lambda]``.
        rho_I (np.ndarray): idler modes, same layout.
        grid (FrequencyGrid): frequency grid the modes live on.
    """

    r: np.ndarray
    rho_S: np.ndarray
    rho_I: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        m = self.r.shape[0]
        n = self.grid.n_points
        if self.rho_S.shape != (m, n) or self.rho_I.shape != (m, n):
            raise ValueError("mode arrays must have shape (n_modes, n_points)")
        if np.any(self.r < 0):
            raise ValueError("squeezing parameters must be nonnegative")

    @property
    def n_modes(self) -> int:
        """Number of retained Schmidt modes."""
        return self.r.shape[0]

    @property
    def delta_omega(self) -> float:
        """Grid measure."""
        return self.grid.delta_omega


@dataclass(frozen=True)
class JsaMatrix:
    """Joint spectral amplitude on the (signal frequency, idler frequency) grid.

    Args:
        values (np.ndarray): ``N x N`` complex amplitudes.
        grid (FrequencyGrid): axis grid (same for both axes).
    """

    values: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        n = self.grid.n_points
        if self.values.shape != (n, n):
            raise ValueError("JSA must be square on the grid")


def schmidt_decompose(prop: Propagator, gate_tol: float = 1e-8) -> SchmidtDecomposition:
    """Extract squeezing parameters and Schmidt modes from a propagator.

    The singular value decompositions of the two squeezing blocks give
    ``sinh(r_lambda)`` and the output mode family of each beam.  The idler
    family is aligned to the signal family (pairing within degenerate
    singular values, and the relative phase) through the pair correlation,
    so the diagonal moment expansions hold with the returned modes as
    written.  Modes are normalized with the grid measure and gauge-fixed so
    each signal mode is real and positive at its maximum-magnitude grid
    point (the paired idler mode absorbs the opposite phase).  Modes below
    ``1e-10`` of the leading singular value are discarded.  As a consistency
    check, the singular values of the signal-to-signal block must equal
    ``cosh(r_lambda)``.

    Args:
        prop (Propagator): canonical propagator to analyze.
        gate_tol (float): bound on the canonical-structure residual.

    Returns:
        SchmidtDecomposition: descending squeezing parameters and modes.

    Raises:
        NumericalGateError: if the propagator violates the canonical
            commutation condition beyond ``gate_tol``, the two squeezing
            blocks disagree on the singular values, or the ``U_SS`` singular
            values are inconsistent with the extracted squeezing.
    """
    if not prop.passes_bogoliubov(gate_tol):
        raise NumericalGateError(
            "inconsistent propagator: canonical-commutation residual exceeds "
            "{:g}".format(gate_tol)
        )
    grid = prop.grid
    left, sinh_r, _ = np.linalg.svd(prop.U_SI)
    left_idler, sinh_idler, _ = np.linalg.svd(np.conj(prop.U_IS_conj))
    if np.max(np.abs(sinh_idler - sinh_r)) > 1e-6 * max(1.0, sinh_r[0]):
        raise NumericalGateError(
            "inconsistent propagator: the two squeezing blocks disagree on "
            "the singular values"
        )

    cosh_check = np.linalg.svd(prop.U_SS, compute_uv=False)
    expected = np.sqrt(1.0 + sinh_r**2)
    if np.max(np.abs(np.sort(cosh_check)[::-1] - expected)) > 1e-6:
        raise NumericalGateError(
            "inconsistent propagator: transfer-block singular values do not "
            "match the squeezing parameters"
        )

    if sinh_r[0] > 0:
        keep = sinh_r >= _MODE_FLOOR * sinh_r[0]
    else:
        keep = np.ones_like(sinh_r, dtype=bool)
    sinh_kept = sinh_r[keep]
    u_signal = left[:, keep]
    candidates = left_idler[:, keep]

    # Common-phase gauge: signal mode real-positive at its peak.
    peak = np.argmax(np.abs(u_signal), axis=0)
    phases = np.exp(-1j * np.angle(u_signal[peak, np.arange(u_signal.shape[1])]))
    u_signal = u_signal * phases[None, :]

    # Align the idler family to the signal family through the pair
    # correlation <a_S a_I> = U_SS (U_IS_conj)^dag: in the correct pairing
    # and phase its mode-basis overlap is diag(sinh cosh), so the polar
    # factor of the overlap block per degenerate cluster is the alignment.
    m_corr = prop.U_SS @ np.conj(prop.U_IS_conj).T
    targets = m_corr.T @ np.conj(u_signal)
    overlap = candidates.conj().T @ targets
    aligned = np.empty_like(candidates)
    atol = 1e-8 * max(1.0, float(sinh_kept[0]) if sinh_kept.size else 1.0)
    start = 0
    for stop in range(1, sinh_kept.size + 1):
        if stop == sinh_kept.size or sinh_kept[stop - 1] - sinh_kept[stop] > atol:
            group = np.arange(start, stop)
            uu, _, vv = np.linalg.svd(overlap[np.ix_(group, group)])
            aligned[:, group] = candidates[:, group] @ (uu @ vv)
            start = stop

    sc = sinh_kept * np.sqrt(1.0 + sinh_kept**2)
    m_resid = float(np.max(np.abs((u_signal * sc[None, :]) @ aligned.T - m_corr)))
    if m_resid > 1e-6 * max(1.0, float(np.max(np.abs(m_corr)))):
        raise NumericalGateError(
            "idler mode alignment failed: pair correlation is not diagonal "
            "in the extracted modes (residual {:.3g})".format(m_resid)
        )

    scale = 1.0 / np.sqrt(grid.delta_omega)
    rho_S = u_signal.T * scale
    rho_I = aligned.T * scale
    return SchmidtDecomposition(np.arcsinh(sinh_kept), rho_S, rho_I, grid)


def mean_signal_photons(d: SchmidtDecomposition) -> float:
    """Mean signal photon number, ``sum_lambda sinh^2(r_lambda)``."""
    return float(np.sum(np.sinh(d.r) ** 2))


def schmidt_number(d: SchmidtDecomposition) -> float:
    """Effective mode number ``K = (sum sinh^2 r)^2 / sum sinh^4 r``.

    Raises:
        ValueError: if all squeezing parameters vanish.
    """
    weights = np.sinh(d.r) ** 2
    total = np.sum(weights)
    if total == 0:
        raise ValueError("Schmidt number undefined: all squeezing parameters are zero")
    return float(total**2 / np.sum(weights**2))


def jsa(d: SchmidtDecomposition) -> JsaMatrix:
    """Joint spectral amplitude ``J = sum_lambda r_lambda rho^S_lambda rho^I_lambda``."""
    values = (d.rho_S.T * d.r) @ d.rho_I
    return JsaMatrix(values, d.grid)


def mode_fidelity(a: np.ndarray, b: np.ndarray, delta_omega: float) -> float:
    """Spectral overlap ``|sum a(omega_n) b*(omega_n) d_omega|^2``.

    Args:
        a, b (np.ndarray): unit-normalized mode functions on a common grid.
        delta_omega (float): grid measure.

    Returns:
        float: fidelity in [0, 1].

    Raises:
        ValueError: if either input is not unit-normalized.
    """
    for name, vec in (("a", a), ("b", b)):
        norm = np.sum(np.abs(vec) ** 2) * delta_omega
        if abs(norm - 1.0) > 1e-6:
            raise ValueError(
                "mode {} is not unit-normalized (norm^2 = {:.6g})".format(name, norm)
            )
    # Real-arithmetic evaluation keeps the result bit-identical under
    # argument exchange (fused complex multiplies are not).
    a = np.asarray(a, dtype=complex)
    b = np.asarray(b, dtype=complex)
    re = float(np.sum(a.real * b.real + a.imag * b.imag))
    im = float(np.sum(a.imag * b.real - a.real * b.imag))
    return float((re * re + im * im) * delta_omega**2)


def calibrate_pump_power(
    target_ns: float,
    evaluate,
    initial_guess: float = 1e-6,
    rel_tol: float = 1e-3,
    max_evals: int = 100,
) -> float:
    """Find the pump photon number producing a target mean signal photon number.

    Safeguarded secant iteration on ``log <N_S>`` vs ``log N_P``, using the
    monotonicity of gain in pump power; a bracket is maintained once both
    sides of the target have been seen, and overflowing evaluations (the
    high-gain regime grows double-exponentially) are treated as upper
    brackets. Deterministic for fixed inputs.

    Args:
        target_ns (float): target mean signal photon number (>= 0).
        evaluate (callable): maps a pump photon number to the resulting mean
            signal photon number; must be monotone increasing.
        initial_guess (float): starting pump photon number.
        rel_tol (float): relative tolerance on the achieved gain.
        max_evals (int): evaluation budget.

    Returns:
        float: calibrated pump photon number.

    Raises:
        ValueError: for a negative target.
        CalibrationError: if the budget is exhausted before convergence.
    """
    if target_ns < 0:
        raise ValueError("target_ns must be nonnegative, got {}".format(target_ns))
    if target_ns == 0:
        return 0.0

    log_target = np.log(target_ns)
    lo = hi = None  # (x, y) brackets in log-log space
    evals = 0

    def probe(x):
        nonlocal evals, lo, hi
        evals += 1
        try:
            ns = evaluate(float(np.exp(x)))
        except NumericalGateError:
            ns = np.inf
        if not np.isfinite(ns) or ns <= 0:
            y = np.inf if (not np.isfinite(ns) or ns > 0) else -np.inf
        else:
            y = np.log(ns)
        if y < log_target and (lo is None or x > lo[0]):
            lo = (x, y)
        if y >= log_target and (hi is None or x < hi[0]):
            hi = (x, y)
        return y

    x = float(np.log(initial_guess))
    y = probe(x)
    if np.isfinite(y) and abs(np.exp(y - log_target) - 1.0) < rel_tol:
        return float(np.exp(x))
    # Linear first step: exact in the perturbative regime.
    prev = (x, y)
    x = x + (log_target - y) if np.isfinite(y) else x - np.log(10.0)

    while evals < max_evals:
        if lo is not None and hi is not None and not (lo[0] < x < hi[0]):
            x = 0.5 * (lo[0] + hi[0])
        y = probe(x)
        if np.isfinite(y) and abs(np.exp(y - log_target) - 1.0) < rel_tol:
            return float(np.exp(x))
        if np.isfinite(y) and np.isfinite(prev[1]) and y != prev[1]:
            step = (log_target - y) * (x - prev[0]) / (y - prev[1])
            step = float(np.clip(step, -np.log(100.0), np.log(100.0)))
            prev, x = (x, y), x + step
        elif lo is not None and hi is not None:
            prev, x = (x, y), 0.5 * (lo[0] + hi[0])
        else:
            prev, x = (x, y), (x - np.log(10.0) if not np.isfinite(y) else x + np.log(10.0))
    raise CalibrationError(
        "pump calibration did not converge to <N_S> = {:g} within {} evaluations".format(
            target_ns, max_evals
        )
    )
