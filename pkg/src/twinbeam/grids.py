"""Core domain types: frequency grid, medium, pump spectrum, and filters.

All quantities use natural units with ``hbar = 1``. Frequencies are angular
frequencies; the scenario layer conventionally measures them in units of the
pump bandwidth and lengths in units of the nonlinear region length, but
nothing in this module depends on that choice.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

HBAR = 1.0

__all__ = [
    "HBAR",
    "FrequencyGrid",
    "MediumSpec",
    "PumpSpectrum",
    "FilterFunction",
    "pump_amplitude",
    "delta_k",
    "filter_transmission",
]


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform angular-frequency grid on which all operators are discretized.

    Args:
        omega_min (float): first grid frequency.
        omega_max (float): last grid frequency.
        n_points (int): number of grid points (>= 2).
    """

    omega_min: float
    omega_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 2:
            raise ValueError("n_points must be at least 2, got {}".format(self.n_points))
        if not self.omega_max > self.omega_min:
            raise ValueError(
                "omega_max must exceed omega_min, got [{}, {}]".format(
                    self.omega_min, self.omega_max
                )
            )

    @classmethod
    def centered(cls, center: float, half_span: float, n_points: int) -> "FrequencyGrid":
        """Build a grid symmetric about ``center`` spanning ``center ± half_span``."""
        if half_span <= 0:
            raise ValueError("half_span must be positive, got {}".format(half_span))
        return cls(center - half_span, center + half_span, n_points)

    @property
    def delta_omega(self) -> float:
        """Grid spacing."""
        return (self.omega_max - self.omega_min) / (self.n_points - 1)

    @cached_property
    def omegas(self) -> np.ndarray:
        """All grid frequencies as a length-``n_points`` array."""
        return np.linspace(self.omega_min, self.omega_max, self.n_points)

    def omega(self, n: int) -> float:
        """Frequency of grid point ``n``."""
        if not 0 <= n < self.n_points:
            raise ValueError(
                "grid index {} outside [0, {})".format(n, self.n_points)
            )
        return float(self.omegas[n])

    def index_of(self, omega: float) -> int:
        """Index of the grid point nearest to ``omega``."""
        return int(round((omega - self.omega_min) / self.delta_omega))

    def detunings(self, center: float) -> np.ndarray:
        """Grid frequencies measured from ``center``."""
        return self.omegas - center


@dataclass(frozen=True)
class MediumSpec:
    """Nonlinear-medium parameters: group velocities, central frequencies,
    coupling, and region geometry.

    The phase mismatches are linear in detuning,
    ``delta_k_l(omega) = (1/v_l - 1/v_P)(omega - omega_bar_l)`` for
    ``l in {S, I}``; group-velocity dispersion within each band is neglected.

    Args:
        v_P, v_S, v_I (float): group velocities of pump, signal, idler.
        omega_bar_P, omega_bar_S, omega_bar_I (float): central frequencies,
            satisfying energy matching ``omega_bar_P = omega_bar_S + omega_bar_I``.
        gamma (float): real coupling constant.
        length (float): total nonlinear-region length.
        n_domains (int): number of equal-length poling domains.
    """

    v_P: float
    v_S: float
    v_I: float
    omega_bar_P: float
    omega_bar_S: float
    omega_bar_I: float
    gamma: float
    length: float
    n_domains: int = 1

    def __post_init__(self):
        for name in ("v_P", "v_S", "v_I"):
            if getattr(self, name) == 0:
                raise ValueError("group velocity {} must be nonzero".format(name))
        mismatch = abs(self.omega_bar_P - self.omega_bar_S - self.omega_bar_I)
        scale = max(abs(self.omega_bar_P), 1.0)
        if mismatch > 1e-9 * scale:
            raise ValueError(
                "energy matching violated: omega_bar_P - omega_bar_S - omega_bar_I = {}".format(
                    self.omega_bar_P - self.omega_bar_S - self.omega_bar_I
                )
            )
        if self.length <= 0:
            raise ValueError("region length must be positive, got {}".format(self.length))
        if self.n_domains < 1:
            raise ValueError("n_domains must be at least 1, got {}".format(self.n_domains))

    @classmethod
    def symmetric_gvm(
        cls,
        kappa_s: float,
        omega_bar: float,
        gamma: float = 1.0,
        length: float = 1.0,
        n_domains: int = 1,
        inv_v_P: float = 10.0,
    ) -> "MediumSpec":
        """Build a degenerate, symmetric group-velocity-matched medium.

        ``kappa_s = 1/v_S - 1/v_P`` and the idler mirror,
        ``1/v_I - 1/v_P = -kappa_s``; signal and idler share the central
        frequency ``omega_bar``.
        """
        inv_v_S = inv_v_P + kappa_s
        inv_v_I = inv_v_P - kappa_s
        if inv_v_S == 0 or inv_v_I == 0:
            raise ValueError(
                "kappa_s = {} makes a group velocity infinite for 1/v_P = {}".format(
                    kappa_s, inv_v_P
                )
            )
        return cls(
            v_P=1.0 / inv_v_P,
            v_S=1.0 / inv_v_S,
            v_I=1.0 / inv_v_I,
            omega_bar_P=2 * omega_bar,
            omega_bar_S=omega_bar,
            omega_bar_I=omega_bar,
            gamma=gamma,
            length=length,
            n_domains=n_domains,
        )

    @property
    def domain_length(self) -> float:
        """Length of one poling domain."""
        return self.length / self.n_domains

    @property
    def gvm_slope_S(self) -> float:
        """Signal inverse-group-velocity mismatch ``1/v_S - 1/v_P``."""
        return 1.0 / self.v_S - 1.0 / self.v_P

    @property
    def gvm_slope_I(self) -> float:
        """Idler inverse-group-velocity mismatch ``1/v_I - 1/v_P``."""
        return 1.0 / self.v_I - 1.0 / self.v_P

    @property
    def is_symmetric_gvm(self) -> bool:
        """Whether ``1/v_S - 1/v_P = -(1/v_I - 1/v_P)`` to relative 1e-9."""
        s, i = self.gvm_slope_S, self.gvm_slope_I
        scale = max(abs(s), abs(i), 1e-300)
        return abs(s + i) <= 1e-9 * scale

    def with_swapped_velocities(self) -> "MediumSpec":
        """The same medium with the signal and idler group velocities exchanged."""
        return MediumSpec(
            v_P=self.v_P,
            v_S=self.v_I,
            v_I=self.v_S,
            omega_bar_P=self.omega_bar_P,
            omega_bar_S=self.omega_bar_S,
            omega_bar_I=self.omega_bar_I,
            gamma=self.gamma,
            length=self.length,
            n_domains=self.n_domains,
        )

    def delta_k(self, mode: str, omega):
        """Phase mismatch of ``mode`` ("S" or "I") at frequency ``omega``."""
        if mode == "S":
            slope, center = self.gvm_slope_S, self.omega_bar_S
        elif mode == "I":
            slope, center = self.gvm_slope_I, self.omega_bar_I
        else:
            raise ValueError("mode must be 'S' or 'I', got {!r}".format(mode))
        return slope * (np.asarray(omega) - center)


@dataclass(frozen=True)
class PumpSpectrum:
    """Gaussian pump spectral amplitude.

    ``beta_P(omega) = sqrt(hbar*omega_bar_P*n_pump_photons) * pi**(-1/4)
    * sigma**(-1/2) * exp(-(omega - omega_bar_P)**2 / (2 sigma**2))``,
    normalized so that the integral of ``|beta_P|**2`` equals
    ``hbar * omega_bar_P * n_pump_photons``.

    Args:
        sigma (float): pump bandwidth (> 0).
        n_pump_photons (float): mean pump photon number (>= 0).
        omega_bar_P (float): pump central frequency.
    """

    sigma: float
    n_pump_photons: float
    omega_bar_P: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("pump sigma must be positive, got {}".format(self.sigma))
        if self.n_pump_photons < 0:
            raise ValueError(
                "n_pump_photons must be nonnegative, got {}".format(self.n_pump_photons)
            )

    def amplitude(self, omega):
        """Pump spectral amplitude at ``omega`` (real, nonnegative)."""
        prefactor = np.sqrt(HBAR * self.omega_bar_P * self.n_pump_photons)
        norm = np.pi ** -0.25 / np.sqrt(self.sigma)
        detuning = np.asarray(omega) - self.omega_bar_P
        return prefactor * norm * np.exp(-(detuning**2) / (2 * self.sigma**2))

    def with_photons(self, n_pump_photons: float) -> "PumpSpectrum":
        """The same pump profile with a different mean photon number."""
        return PumpSpectrum(self.sigma, n_pump_photons, self.omega_bar_P)


@dataclass(frozen=True)
class FilterFunction:
    """Spectral transmission function applied symmetrically to both modes.

    Args:
        kind (str): "top_hat" or "identity".
        center (float): filter center frequency (top-hat only).
        half_width (float): half-width of the pass band (top-hat only).
    """

    kind: str
    center: float = 0.0
    half_width: float = field(default=0.0)

    _KINDS = ("top_hat", "identity")

    def __post_init__(self):
        if self.kind not in self._KINDS:
            raise ValueError(
                "filter kind must be one of {}, got {!r}".format(self._KINDS, self.kind)
            )
        if self.kind == "top_hat" and self.half_width <= 0:
            raise ValueError(
                "top_hat filter needs a positive half_width, got {}".format(self.half_width)
            )

    @classmethod
    def identity(cls) -> "FilterFunction":
        """The all-pass filter, ``T(omega) = 1``."""
        return cls(kind="identity")

    @classmethod
    def top_hat(cls, center: float, half_width: float) -> "FilterFunction":
        """Unit transmission for ``|omega - center| < half_width``, zero outside."""
        return cls(kind="top_hat", center=center, half_width=half_width)

    def transmission(self, omega):
        """Transmission ``T(omega)`` in [0, 1]."""
        omega = np.asarray(omega, dtype=float)
        if self.kind == "identity":
            return np.ones_like(omega)
        return (np.abs(omega - self.center) < self.half_width).astype(float)


def pump_amplitude(pump: PumpSpectrum, omega):
    """Pump spectral amplitude ``beta_P(omega)``; see :class:`PumpSpectrum`."""
    return pump.amplitude(omega)


def delta_k(medium: MediumSpec, mode: str, omega):
    """Phase mismatch ``(1/v_l - 1/v_P)(omega - omega_bar_l)``; see
    :meth:`MediumSpec.delta_k`."""
    return medium.delta_k(mode, omega)


def filter_transmission(f: FilterFunction, omega):
    """Filter transmission ``T(omega)``; see :meth:`FilterFunction.transmission`."""
    return f.transmission(omega)
