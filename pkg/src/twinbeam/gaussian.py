"""Gaussian-state description of spectrally filtered twin beams.

A spectral filter acts on every frequency bin as a beamsplitter with vacuum,
so the filtered state stays Gaussian.  For a spectrally pure input a single
renormalized mode pair suffices; in general the filtered state is mixed and
its structure is read off the ``4N x 4N`` quadrature covariance matrix:

* a Williamson decomposition ``V = S D S^T`` splits off thermal occupancies,
* a Bloch-Messiah decomposition ``S = O Lam O~^T`` isolates the squeezing
  layer between two passive layers, and
* a pairwise 50:50 beamsplitter conversion turns the equal-and-opposite
  single-mode squeezers into two-mode squeezers, each acting on one
  signal-side and one idler-side mode.

The result is a thermal squeezed state with two mode families — squeeze
modes ``(A_lam, B_lam)`` and thermal modes ``(cal_A_i, cal_B_i)`` — that
coincide only when the input is spectrally pure and no light is rejected.

Quadrature ordering is ``(x_S, x_I, p_S, p_I)`` with ``a = (x + ip) /
sqrt(2 hbar)`` and hbar = 1, so the vacuum covariance is ``(hbar/2) * 1``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from twinbeam.errors import MixedStateError, NumericalGateError
from twinbeam.grids import HBAR, FilterFunction, FrequencyGrid
from twinbeam.propagation import Propagator
from twinbeam.schmidt import SchmidtDecomposition, mode_fidelity, schmidt_number

__all__ = [
    "Correlators",
    "PureFilteredMode",
    "CovarianceMatrix",
    "WilliamsonResult",
    "BlochMessiahResult",
    "FilteredModeSet",
    "symplectic_form",
    "complex_representation",
    "real_from_unitary",
    "pair_beamsplitter",
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
]


def symplectic_form(n_modes: int) -> np.ndarray:
    """The symplectic form ``Omega = [[0, 1], [-1, 0]]`` in (x.., p..) ordering."""
    eye = np.eye(n_modes)
    zero = np.zeros((n_modes, n_modes))
    return np.block([[zero, eye], [-eye, zero]])


def complex_representation(s: np.ndarray):
    """Annihilation-basis blocks ``(alpha, beta)`` of a real symplectic matrix.

    With ``a = (x + ip)/sqrt(2 hbar)``, the quadrature map ``r -> S r``
    becomes ``a -> alpha a + beta a^dag`` where::

        alpha = ((S_xx + S_pp) + i (S_px - S_xp)) / 2
        beta  = ((S_xx - S_pp) + i (S_px + S_xp)) / 2

    Args:
        s (np.ndarray): real matrix of even dimension.

    Returns:
        tuple: ``(alpha, beta)`` complex ``n x n`` blocks.
    """
    n = s.shape[0] // 2
    s_xx, s_xp = s[:n, :n], s[:n, n:]
    s_px, s_pp = s[n:, :n], s[n:, n:]
    alpha = 0.5 * ((s_xx + s_pp) + 1j * (s_px - s_xp))
    beta = 0.5 * ((s_xx - s_pp) + 1j * (s_px + s_xp))
    return alpha, beta


def real_from_unitary(u: np.ndarray) -> np.ndarray:
    """Orthogonal symplectic quadrature form of a unitary mode transform."""
    return np.block(
        [[u.real, -u.imag], [u.imag, u.real]]
    )


def _unitary_of_passive(o: np.ndarray, atol: float = 1e-8) -> np.ndarray:
    """Complex unitary of an orthogonal symplectic matrix.

    Raises:
        NumericalGateError: if the matrix has an active (squeezing) part.
    """
    alpha, beta = complex_representation(o)
    if np.max(np.abs(beta)) > atol:
        raise NumericalGateError(
            "matrix is not orthogonal symplectic (active part {:.3g})".format(
                float(np.max(np.abs(beta)))
            )
        )
    return alpha


def pair_beamsplitter(n_pairs: int) -> np.ndarray:
    """Block-diagonal 50:50 beamsplitter ``B = w (+) ... (+) w`` on mode pairs.

    Each ``2 x 2`` block is ``w = (1/sqrt(2)) [[1, i], [i, 1]]``, the unitary
    that converts a pair of equal-and-opposite single-mode squeezers into one
    two-mode squeezer.  Its quadrature form is obtained with
    :func:`real_from_unitary`.
    """
    w = np.array([[1.0, 1.0j], [1.0j, 1.0]]) / np.sqrt(2.0)
    b = np.zeros((2 * n_pairs, 2 * n_pairs), dtype=complex)
    for k in range(n_pairs):
        b[2 * k : 2 * k + 2, 2 * k : 2 * k + 2] = w
    return b


def _fix_phase(vec: np.ndarray) -> np.ndarray:
    """Rotate a global phase so the largest-magnitude entry is real positive."""
    peak = int(np.argmax(np.abs(vec)))
    phase = vec[peak]
    if np.abs(phase) == 0.0:
        return vec
    return vec * np.conj(phase) / np.abs(phase)


# ---------------------------------------------------------------------------
# Correlation functions and filtering
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Correlators:
    """Second moments of the two beams over a frequency grid.

    ``n_signal[n, m] = <a_S^dag(omega_n) a_S(omega_m)>``, likewise
    ``n_idler`` for the idler, and ``m_pair[n, m] = <a_S(omega_n)
    a_I(omega_m)>``.  Same-beam anomalous moments vanish for twin beams and
    are not stored.

    Args:
        n_signal (np.ndarray): Hermitian ``N x N`` signal photon-number matrix.
        n_idler (np.ndarray): Hermitian ``N x N`` idler photon-number matrix.
        m_pair (np.ndarray): ``N x N`` signal-idler pair correlation.
        grid (FrequencyGrid): frequency discretization.
    """

    n_signal: np.ndarray
    n_idler: np.ndarray
    m_pair: np.ndarray
    grid: FrequencyGrid

    def __post_init__(self):
        n = self.grid.n_points
        for name in ("n_signal", "n_idler", "m_pair"):
            if getattr(self, name).shape != (n, n):
                raise ValueError("correlator {} must be {}x{}".format(name, n, n))

    @classmethod
    def vacuum(cls, grid: FrequencyGrid) -> "Correlators":
        """Vacuum (all second moments zero)."""
        zero = np.zeros((grid.n_points, grid.n_points), dtype=complex)
        return cls(zero, zero.copy(), zero.copy(), grid)

    @property
    def mean_signal_photons(self) -> float:
        """Total mean signal photon number."""
        return float(np.real(np.trace(self.n_signal)))

    @property
    def mean_idler_photons(self) -> float:
        """Total mean idler photon number."""
        return float(np.real(np.trace(self.n_idler)))

    def filtered(self, filt: FilterFunction) -> "Correlators":
        """Correlators after symmetric spectral filtering of both beams."""
        n_s, m = filtered_correlators(self.n_signal, self.m_pair, filt, self.grid)
        n_i, _ = filtered_correlators(self.n_idler, self.m_pair, filt, self.grid)
        return Correlators(n_s, n_i, m, self.grid)


def correlators_from_propagator(prop: Propagator) -> Correlators:
    """Output second moments of a propagator acting on vacuum.

    Args:
        prop (Propagator): Bogoliubov propagator.

    Returns:
        Correlators: photon-number and pair-correlation matrices.
    """
    u_si = prop.U_SI
    u_is_conj = prop.U_IS_conj
    n_signal = u_si.conj() @ u_si.T
    n_idler = u_is_conj @ u_is_conj.conj().T
    m_pair = prop.U_SS @ u_is_conj.conj().T
    return Correlators(n_signal, n_idler, m_pair, prop.grid)


def correlators_from_schmidt(d: SchmidtDecomposition) -> Correlators:
    """Second moments reconstructed from a temporal-mode decomposition."""
    dw = d.delta_omega
    sinh_sq = np.sinh(d.r) ** 2
    sc = np.sinh(d.r) * np.cosh(d.r)
    n_signal = (d.rho_S.conj().T * sinh_sq) @ d.rho_S * dw
    n_idler = (d.rho_I.conj().T * sinh_sq) @ d.rho_I * dw
    m_pair = (d.rho_S.T * sc) @ d.rho_I * dw
    return Correlators(n_signal, n_idler, m_pair, d.grid)


def filtered_correlators(
    n_mat: np.ndarray, m_mat: np.ndarray, filt: FilterFunction, grid: FrequencyGrid
):
    """Apply a symmetric spectral filter to second moments.

    The filter acts as a beamsplitter with vacuum on each bin, so the
    normally ordered moments transform elementwise::

        n~(w, w') = T*(w) n(w, w') T(w')
        m~(w, w') = T(w)  m(w, w') T(w')

    (the pair correlation carries two annihilators, hence no conjugate).

    Args:
        n_mat (np.ndarray): photon-number matrix of one beam.
        m_mat (np.ndarray): signal-idler pair correlation.
        filt (FilterFunction): transmission applied identically to both beams.
        grid (FrequencyGrid): frequency discretization.

    Returns:
        tuple: ``(n_filtered, m_filtered)``.
    """
    t = np.asarray(filt.transmission(grid.omegas), dtype=complex)
    n_f = np.conj(t)[:, None] * n_mat * t[None, :]
    m_f = t[:, None] * m_mat * t[None, :]
    return n_f, m_f


@dataclass(frozen=True)
class PureFilteredMode:
    """Filtered state of a spectrally pure twin-beam source.

    When one Schmidt pair carries all the light, filtering only reshapes the
    pair: the new modes are ``A = T rho_1 / sqrt(eta)`` with in-band fraction
    ``eta = integral |T rho_1|^2 domega``, and the effective photon number
    per beam becomes ``eta * sinh^2(r_1)``.

    Args:
        mode_S (np.ndarray): renormalized filtered signal mode.
        mode_I (np.ndarray): renormalized filtered idler mode.
        eta_S (float): signal in-band fraction.
        eta_I (float): idler in-band fraction.
        r_input (float): squeezing parameter of the unfiltered pair.
        grid (FrequencyGrid): frequency discretization.
    """

    mode_S: np.ndarray
    mode_I: np.ndarray
    eta_S: float
    eta_I: float
    r_input: float
    grid: FrequencyGrid

    @property
    def effective_sinh_sq(self) -> float:
        """Mean photon number per beam after filtering."""
        return float(np.sqrt(self.eta_S * self.eta_I) * np.sinh(self.r_input) ** 2)

    def correlators(self) -> Correlators:
        """Rank-one second moments of the filtered pure state."""
        dw = self.grid.delta_omega
        s1 = np.sinh(self.r_input)
        c1 = np.cosh(self.r_input)
        n_signal = (
            self.eta_S * s1**2 * dw * np.outer(np.conj(self.mode_S), self.mode_S)
        )
        n_idler = (
            self.eta_I * s1**2 * dw * np.outer(np.conj(self.mode_I), self.mode_I)
        )
        m_pair = (
            np.sqrt(self.eta_S * self.eta_I)
            * s1
            * c1
            * dw
            * np.outer(self.mode_S, self.mode_I)
        )
        return Correlators(n_signal, n_idler, m_pair, self.grid)


def filter_pure_mode(
    d: SchmidtDecomposition, filt: FilterFunction, purity_tol: float = 1e-3
) -> PureFilteredMode:
    """Filter a spectrally pure source by reshaping its single mode pair.

    Args:
        d (SchmidtDecomposition): source decomposition; its Schmidt number
            must satisfy ``K - 1 < purity_tol``.
        filt (FilterFunction): symmetric spectral filter.
        purity_tol (float): threshold on ``K - 1`` for the shortcut.

    Returns:
        PureFilteredMode: renormalized modes and in-band fractions.

    Raises:
        MixedStateError: if the input is not spectrally pure enough.
        ValueError: if the filter rejects all light in the dominant mode.
    """
    k = schmidt_number(d)
    if k - 1.0 >= purity_tol:
        raise MixedStateError(
            "Schmidt number K = {:.6g} exceeds the single-mode threshold "
            "(K - 1 < {:.1g}); use the covariance-matrix path".format(k, purity_tol)
        )
    t = np.asarray(filt.transmission(d.grid.omegas), dtype=complex)
    dw = d.delta_omega
    filtered_s = t * d.rho_S[0]
    filtered_i = t * d.rho_I[0]
    eta_s = float(np.sum(np.abs(filtered_s) ** 2) * dw)
    eta_i = float(np.sum(np.abs(filtered_i) ** 2) * dw)
    if eta_s <= 0.0 or eta_i <= 0.0:
        raise ValueError("filter transmits no light in the dominant mode pair")
    return PureFilteredMode(
        mode_S=filtered_s / np.sqrt(eta_s),
        mode_I=filtered_i / np.sqrt(eta_i),
        eta_S=eta_s,
        eta_I=eta_i,
        r_input=float(d.r[0]),
        grid=d.grid,
    )


# ---------------------------------------------------------------------------
# Covariance matrix
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CovarianceMatrix:
    """Real symmetric quadrature covariance matrix.

    Ordering is ``(x_S, x_I, p_S, p_I)``; the vacuum is ``(hbar/2) * 1``.

    Args:
        matrix (np.ndarray): ``2M x 2M`` real symmetric matrix (``M`` modes).
    """

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise ValueError("covariance matrix must be square with even dimension")
        scale = max(1.0, float(np.max(np.abs(m))))
        if np.max(np.abs(m - m.T)) > 1e-10 * scale:
            raise ValueError("covariance matrix must be symmetric")
        object.__setattr__(self, "matrix", (m + m.T) / 2.0)

    @property
    def n_modes(self) -> int:
        """Number of bosonic modes (half the matrix dimension)."""
        return self.matrix.shape[0] // 2

    def physicality_residual(self) -> float:
        """How far ``V + i (hbar/2) Omega >= 0`` is from holding.

        Returns the negative part of the smallest eigenvalue of the
        uncertainty matrix (0.0 for a physical state).
        """
        omega = symplectic_form(self.n_modes)
        h = self.matrix + 0.5j * HBAR * omega
        min_eig = float(np.linalg.eigvalsh(h)[0])
        return max(0.0, -min_eig)

    def is_physical(self, tol: float = 1e-8) -> bool:
        """Whether the uncertainty relation holds within ``tol``."""
        scale = max(1.0, float(np.max(np.abs(self.matrix))))
        return self.physicality_residual() <= tol * scale


def _as_correlators(state) -> Correlators:
    if isinstance(state, Correlators):
        return state
    if isinstance(state, Propagator):
        return correlators_from_propagator(state)
    if isinstance(state, SchmidtDecomposition):
        return correlators_from_schmidt(state)
    if isinstance(state, PureFilteredMode):
        return state.correlators()
    raise TypeError(
        "cannot build correlators from {!r}".format(type(state).__name__)
    )


def covariance_from_state(
    state, filt: FilterFunction = None, gate_tol: float = 1e-8
) -> CovarianceMatrix:
    """Assemble the quadrature covariance matrix of the (filtered) output.

    Accepts a :class:`Propagator`, :class:`SchmidtDecomposition`,
    :class:`Correlators`, or :class:`PureFilteredMode`.  With
    ``a = (x + ip)/sqrt(2 hbar)`` the blocks are::

        V_xx = hbar (1/2 + Re N + Re M)
        V_pp = hbar (1/2 + Re N - Re M)
        V_xp = hbar (Im N + Im M)

    where ``N = diag(n_S, n_I)`` and ``M`` holds the pair correlation in the
    off-diagonal (signal, idler) blocks.  Frequency bins emptied by the
    filter keep their vacuum variance — the beamsplitter model inserts the
    bath contribution automatically.

    Args:
        state: source object (see above).
        filt (FilterFunction, optional): symmetric filter applied first.
        gate_tol (float): tolerance of the physicality gate.

    Returns:
        CovarianceMatrix: ``4N x 4N`` covariance in (x_S, x_I, p_S, p_I).

    Raises:
        NumericalGateError: if the assembled matrix violates the
            uncertainty relation — an assembly bug, not a physical state.
    """
    corr = _as_correlators(state)
    if filt is not None:
        corr = corr.filtered(filt)
    n = corr.grid.n_points
    n_full = np.zeros((2 * n, 2 * n), dtype=complex)
    n_full[:n, :n] = corr.n_signal
    n_full[n:, n:] = corr.n_idler
    m_full = np.zeros((2 * n, 2 * n), dtype=complex)
    m_full[:n, n:] = corr.m_pair
    m_full[n:, :n] = corr.m_pair.T
    half = 0.5 * np.eye(2 * n)
    v_xx = HBAR * (half + n_full.real + m_full.real)
    v_pp = HBAR * (half + n_full.real - m_full.real)
    v_xp = HBAR * (n_full.imag + m_full.imag)
    v = np.block([[v_xx, v_xp], [v_xp.T, v_pp]])
    cov = CovarianceMatrix(v)
    if not cov.is_physical(gate_tol):
        raise NumericalGateError(
            "assembled covariance violates the uncertainty relation "
            "(residual {:.3g}); correlator input is inconsistent".format(
                cov.physicality_residual()
            )
        )
    return cov


# ---------------------------------------------------------------------------
# Williamson decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WilliamsonResult:
    """Normal-mode decomposition ``V = S D S^T`` of a physical covariance.

    Args:
        s (np.ndarray): real symplectic matrix.
        nu (np.ndarray): symplectic eigenvalues, descending, each >= hbar/2.
        nbar (np.ndarray): thermal occupancies, ``nu = hbar (2 nbar + 1) / 2``.
    """

    s: np.ndarray
    nu: np.ndarray
    nbar: np.ndarray

    @property
    def n_modes(self) -> int:
        """Number of bosonic modes."""
        return self.nu.size

    def diagonal(self) -> np.ndarray:
        """The diagonal thermal covariance ``D = diag(nu, nu)``."""
        return np.diag(np.concatenate([self.nu, self.nu]))


def _covariance_array(v) -> np.ndarray:
    if isinstance(v, CovarianceMatrix):
        return v.matrix
    arr = np.asarray(v, dtype=float)
    return CovarianceMatrix(arr).matrix


def _sqrtm_spd(v: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(v)
    if w[0] <= 0.0:
        raise ValueError(
            "matrix is not positive definite (min eigenvalue {:.3g})".format(w[0])
        )
    return (q * np.sqrt(w)) @ q.T


def williamson(v, gate_tol: float = 1e-8) -> WilliamsonResult:
    """Williamson decomposition of a physical covariance matrix.

    Diagonalizes the Hermitian form ``i V^{1/2} Omega V^{1/2}``; the positive
    eigenvalues are the symplectic eigenvalues and the eigenvectors assemble
    the symplectic factor ``S = V^{1/2} Q Sigma^{-1/2}``.

    Args:
        v (CovarianceMatrix | np.ndarray): physical covariance matrix.
        gate_tol (float): tolerance of the physicality and reconstruction
            gates.

    Returns:
        WilliamsonResult: ``S``, descending ``nu``, and occupancies.

    Raises:
        ValueError: if ``v`` is not a physical covariance matrix.
        NumericalGateError: if the reconstruction gates fail.
    """
    mat = _covariance_array(v)
    cov = CovarianceMatrix(mat)
    if not cov.is_physical(gate_tol):
        raise ValueError(
            "covariance matrix is not physical (uncertainty residual "
            "{:.3g})".format(cov.physicality_residual())
        )
    n_modes = cov.n_modes
    omega = symplectic_form(n_modes)
    root = _sqrtm_spd(mat)
    h = 1j * (root @ omega @ root)
    evals, evecs = np.linalg.eigh(h)
    nu = evals[::-1][:n_modes].copy()
    vectors = evecs[:, ::-1][:, :n_modes]
    if np.max(np.abs(evals[:n_modes] + nu)) > gate_tol * max(1.0, nu[0]):
        raise NumericalGateError("symplectic spectrum is not paired (+nu, -nu)")
    # Deterministic phase per eigenvector, then real/imaginary splitting:
    # u = x - i y maps the +nu eigenvector to an (x, p) plane of the normal
    # mode, and [sqrt(2) x | sqrt(2) y] columns form an orthogonal matrix.
    x_cols = np.empty((2 * n_modes, n_modes))
    y_cols = np.empty((2 * n_modes, n_modes))
    for k in range(n_modes):
        u = _fix_phase(vectors[:, k])
        x_cols[:, k] = np.sqrt(2.0) * u.real
        y_cols[:, k] = -np.sqrt(2.0) * u.imag
    q = np.concatenate([x_cols, y_cols], axis=1)
    inv_root_nu = 1.0 / np.sqrt(np.concatenate([nu, nu]))
    s = (root @ q) * inv_root_nu[None, :]

    scale = max(1.0, float(np.max(np.abs(mat))))
    sym_resid = float(np.max(np.abs(s @ omega @ s.T - omega)))
    if sym_resid > 1e-8 * max(1.0, float(np.max(np.abs(s))) ** 2):
        raise NumericalGateError(
            "Williamson factor is not symplectic (residual {:.3g})".format(sym_resid)
        )
    d = np.concatenate([nu, nu])
    recon = (s * d[None, :]) @ s.T
    recon_resid = float(np.max(np.abs(recon - mat))) / scale
    if recon_resid > 1e-6:
        raise NumericalGateError(
            "Williamson reconstruction failed (relative residual {:.3g})".format(
                recon_resid
            )
        )
    nbar = np.maximum(nu / HBAR - 0.5, 0.0)
    return WilliamsonResult(s=s, nu=nu, nbar=nbar)


def symplectic_eigenvalues(v) -> np.ndarray:
    """Symplectic eigenvalues of a covariance matrix, descending.

    Eigenvalue-only version of :func:`williamson` for fast spectral checks.
    """
    mat = _covariance_array(v)
    n_modes = mat.shape[0] // 2
    omega = symplectic_form(n_modes)
    root = _sqrtm_spd(mat)
    evals = np.linalg.eigvalsh(1j * (root @ omega @ root))
    return evals[::-1][:n_modes].copy()


# ---------------------------------------------------------------------------
# Bloch-Messiah decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BlochMessiahResult:
    """Decomposition ``S = O Lam O~^T`` of a real symplectic matrix.

    ``O`` and ``O~`` are orthogonal symplectic; ``Lam = diag(e^r, e^-r)``
    holds one squeezing exponent per mode, all nonnegative and descending
    (opposite-sign partners of two-mode squeezing appear as equal exponents
    whose 90-degree rotations are absorbed in the passive factors).

    Args:
        o (np.ndarray): output-side orthogonal symplectic factor.
        r (np.ndarray): per-mode squeezing exponents, >= 0, descending.
        o_tilde (np.ndarray): input-side orthogonal symplectic factor.
    """

    o: np.ndarray
    r: np.ndarray
    o_tilde: np.ndarray

    @property
    def n_modes(self) -> int:
        """Number of bosonic modes."""
        return self.r.size

    def lambda_diagonal(self) -> np.ndarray:
        """Diagonal of ``Lam`` in (x.., p..) ordering."""
        return np.concatenate([np.exp(self.r), np.exp(-self.r)])


def _symplectic_unit_basis(basis: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Arrange an Omega-invariant orthonormal basis into symplectic pairs.

    Args:
        basis (np.ndarray): odd columns spanning the unit-eigenvalue subspace
            (even count, Omega-invariant).
        omega (np.ndarray): symplectic form.

    Returns:
        np.ndarray: the x-side columns; their partners are ``-Omega x``.
    """
    remaining = basis
    x_cols = []
    while remaining.shape[1] > 0:
        vec = remaining[:, 0]
        vec = vec / np.linalg.norm(vec)
        partner = -omega @ vec
        x_cols.append(vec)
        deflated = (
            remaining
            - np.outer(vec, vec @ remaining)
            - np.outer(partner, partner @ remaining)
        )
        if deflated.shape[1] <= 2:
            break
        u, sv, _ = np.linalg.svd(deflated, full_matrices=False)
        remaining = u[:, sv > 0.5]
    return np.column_stack(x_cols) if x_cols else np.empty((basis.shape[0], 0))


def bloch_messiah(
    s: np.ndarray, atol: float = 1e-8, r_tol: float = 1e-8
) -> BlochMessiahResult:
    """Bloch-Messiah decomposition of a real symplectic matrix.

    Uses the polar route: the SPD factor ``P = (S S^T)^{1/2}`` is symplectic
    with eigenvalues in ``(lam, 1/lam)`` pairs coupled by ``Omega``, so its
    eigenvectors assemble directly into the orthogonal symplectic ``O`` and
    ``Lam``, and ``O~ = S^T O Lam^{-1}``.

    Args:
        s (np.ndarray): real symplectic matrix.
        atol (float): symplecticity tolerance on the input.
        r_tol (float): threshold below which an exponent counts as zero.

    Returns:
        BlochMessiahResult: factors with ``r >= 0`` descending.

    Raises:
        ValueError: if the input is not symplectic within ``atol``.
        NumericalGateError: if the factorization gates fail.
    """
    s = np.asarray(s, dtype=float)
    if s.ndim != 2 or s.shape[0] != s.shape[1] or s.shape[0] % 2:
        raise ValueError("input must be square with even dimension")
    n_modes = s.shape[0] // 2
    omega = symplectic_form(n_modes)
    scale = max(1.0, float(np.max(np.abs(s))) ** 2)
    if np.max(np.abs(s @ omega @ s.T - omega)) > atol * scale:
        raise ValueError("input matrix is not symplectic")

    gram = s @ s.T
    gram = (gram + gram.T) / 2.0
    w, q = np.linalg.eigh(gram)
    rho = 0.5 * np.log(w)
    big = np.where(rho > r_tol)[0][::-1]  # descending exponent
    small = np.where(rho < -r_tol)[0]
    unit = np.where(np.abs(rho) <= r_tol)[0]
    if big.size != small.size or (unit.size % 2):
        raise NumericalGateError(
            "eigenvalues of S S^T do not pair into (lam, 1/lam)"
        )
    x_big = q[:, big]
    x_unit = (
        _symplectic_unit_basis(q[:, unit], omega)
        if unit.size
        else np.empty((2 * n_modes, 0))
    )
    x_side = np.concatenate([x_big, x_unit], axis=1)
    o = np.concatenate([x_side, -omega @ x_side], axis=1)
    r = np.concatenate([rho[big], np.zeros(x_unit.shape[1])])
    lam_inv = np.concatenate([np.exp(-r), np.exp(r)])
    o_tilde = (s.T @ o) * lam_inv[None, :]

    for name, mat in (("O", o), ("O~", o_tilde)):
        ortho_resid = float(np.max(np.abs(mat.T @ mat - np.eye(2 * n_modes))))
        if ortho_resid > 1e-6:
            raise NumericalGateError(
                "{} factor is not orthogonal (residual {:.3g})".format(
                    name, ortho_resid
                )
            )
        sympl_resid = float(np.max(np.abs(mat @ omega @ mat.T - omega)))
        if sympl_resid > 1e-6:
            raise NumericalGateError(
                "{} factor is not symplectic (residual {:.3g})".format(
                    name, sympl_resid
                )
            )
    lam = np.concatenate([np.exp(r), np.exp(-r)])
    recon_resid = float(np.max(np.abs((o * lam[None, :]) @ o_tilde.T - s)))
    if recon_resid > 1e-6 * scale:
        raise NumericalGateError(
            "Bloch-Messiah reconstruction failed (residual {:.3g})".format(
                recon_resid
            )
        )
    return BlochMessiahResult(o=o, r=r, o_tilde=o_tilde)


# ---------------------------------------------------------------------------
# Mode-set extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FilteredModeSet:
    """Squeeze and thermal mode families of a filtered twin-beam state.

    Rows of the mode arrays are unit-normalized frequency mode functions
    (``integral |f|^2 domega = 1``).  Pair ``lam`` couples
    ``squeeze_signal[lam]`` with ``squeeze_idler[lam]`` through a two-mode
    squeezer of parameter ``r[lam]``; thermal pair ``i`` carries occupancy
    ``nbar[i]`` in each beam.

    Args:
        squeeze_signal (np.ndarray): signal-side squeeze modes, one per row.
        squeeze_idler (np.ndarray): idler-side squeeze modes.
        thermal_signal (np.ndarray): signal-side thermal modes.
        thermal_idler (np.ndarray): idler-side thermal modes.
        r (np.ndarray): two-mode squeezing parameters, descending.
        nbar (np.ndarray): thermal occupancies, descending.
        grid (FrequencyGrid): frequency discretization.
    """

    squeeze_signal: np.ndarray
    squeeze_idler: np.ndarray
    thermal_signal: np.ndarray
    thermal_idler: np.ndarray
    r: np.ndarray
    nbar: np.ndarray
    grid: FrequencyGrid

    @property
    def squeeze_modes(self):
        """List of ``(A_lam, B_lam)`` squeeze-mode pairs."""
        return list(zip(self.squeeze_signal, self.squeeze_idler))

    @property
    def thermal_modes(self):
        """List of ``(cal_A_i, cal_B_i)`` thermal-mode pairs."""
        return list(zip(self.thermal_signal, self.thermal_idler))


def _cluster_descending(values: np.ndarray, atol: float):
    """Split a descending array into runs of (near-)equal values."""
    groups = []
    start = 0
    for i in range(1, values.size + 1):
        if i == values.size or values[i - 1] - values[i] > atol:
            groups.append(np.arange(start, i))
            start = i
    return groups


def _species_mode(column: np.ndarray, n_bins: int, take_signal: bool, dw: float):
    """Cut one beam's component out of a full-space column and normalize."""
    part = column[:n_bins] if take_signal else column[n_bins:]
    leak = float(
        np.sum(np.abs(column[n_bins:] if take_signal else column[:n_bins]) ** 2)
    )
    norm = np.linalg.norm(part)
    mode = _fix_phase(part / (norm * np.sqrt(dw)))
    return mode, leak


def _species_rotate(cols: np.ndarray, n_bins: int):
    """Rotate orthonormal columns so each is supported on a single beam.

    Valid whenever the columns span a degenerate block (full unitary
    freedom).  Returns the rotated columns ordered signal-dominant first.
    """
    h = cols[:n_bins].conj().T @ cols[:n_bins]
    evals, evecs = np.linalg.eigh(h)
    order = np.argsort(evals)[::-1]
    return cols @ evecs[:, order]


def extract_mode_sets(
    will: WilliamsonResult,
    bm: BlochMessiahResult,
    grid: FrequencyGrid,
    pair_atol: float = 1e-8,
    species_tol: float = 1e-6,
) -> FilteredModeSet:
    """Read the squeeze and thermal mode pairs out of the decompositions.

    Squeeze modes are the columns of the complex representation of
    ``O W^T``, where ``W`` is the pairwise 50:50 beamsplitter built from
    ``w = (1/sqrt 2)[[1, i], [i, 1]]`` — for each pair of equal squeezing
    exponents the combinations ``(E_1 -+ i E_2)/sqrt(2)`` of the passive
    factor's columns.  Thermal modes are the columns of the complex
    representation of ``O O~^T``.  Two-mode squeezing parameters follow from
    ``Sigma = W Lam W^T``, whose pair blocks are two-mode squeezers with the
    same exponents.  Degenerate thermal blocks are rotated so every mode is
    supported on a single beam, which keeps mode identities stable across
    parameter sweeps.

    Args:
        will (WilliamsonResult): thermal layer of the state.
        bm (BlochMessiahResult): decomposition of ``will.s``.
        grid (FrequencyGrid): frequency discretization (``N`` bins for a
            ``2N``-mode state).
        pair_atol (float): tolerance for matching equal-and-opposite
            squeezer pairs and degenerate occupancies.
        species_tol (float): maximum tolerated weight on the wrong beam.

    Returns:
        FilteredModeSet: paired mode families with ``r`` and ``nbar``.

    Raises:
        ValueError: if a squeezing value has no partner of equal magnitude
            (single-beam squeezing), or a mode cannot be assigned to a
            single beam (asymmetric filtering is not supported).
    """
    n_modes = bm.n_modes
    if n_modes % 2:
        raise ValueError("mode count must be even (signal and idler halves)")
    n_bins = n_modes // 2
    if grid.n_points != n_bins:
        raise ValueError(
            "grid has {} bins but the state has {} per beam".format(
                grid.n_points, n_bins
            )
        )
    dw = grid.delta_omega
    e_full = _unitary_of_passive(bm.o)
    f_full = _unitary_of_passive(bm.o_tilde)

    # --- squeeze pairs -----------------------------------------------------
    sq_signal, sq_idler, r_pairs = [], [], []
    for group in _cluster_descending(bm.r, pair_atol):
        r_bar = float(np.mean(bm.r[group]))
        if r_bar > pair_atol:
            if group.size % 2:
                raise ValueError(
                    "squeezing value {:.6g} has no equal-and-opposite partner "
                    "within {:.1g}".format(r_bar, pair_atol)
                )
            for first, second in zip(group[0::2], group[1::2]):
                e1 = e_full[:, first]
                e2 = e_full[:, second]
                c_minus = (e1 - 1j * e2) / np.sqrt(2.0)
                c_plus = (-1j * e1 + e2) / np.sqrt(2.0)
                weight = float(np.sum(np.abs(c_minus[:n_bins]) ** 2))
                signal_col, idler_col = (
                    (c_minus, c_plus) if weight >= 0.5 else (c_plus, c_minus)
                )
                mode_s, leak_s = _species_mode(signal_col, n_bins, True, dw)
                mode_i, leak_i = _species_mode(idler_col, n_bins, False, dw)
                if max(leak_s, leak_i) > species_tol:
                    raise ValueError(
                        "squeeze pair at r = {:.6g} is not supported on single "
                        "beams (leak {:.3g}); only symmetric filtering is "
                        "supported".format(r_bar, max(leak_s, leak_i))
                    )
                sq_signal.append(mode_s)
                sq_idler.append(mode_i)
                r_pairs.append(float(np.mean(bm.r[[first, second]])))
        else:
            cols = _species_rotate(e_full[:, group], n_bins)
            half = group.size // 2
            for k in range(half):
                mode_s, _ = _species_mode(cols[:, k], n_bins, True, dw)
                mode_i, _ = _species_mode(cols[:, half + k], n_bins, False, dw)
                sq_signal.append(mode_s)
                sq_idler.append(mode_i)
                r_pairs.append(0.0)

    # --- thermal pairs -----------------------------------------------------
    u_thermal = e_full @ f_full.conj().T
    th_signal, th_idler, nbar_pairs = [], [], []
    nu_scale = max(float(will.nu[0]), 1.0)
    for group in _cluster_descending(will.nu, pair_atol * nu_scale):
        if group.size % 2:
            raise ValueError(
                "thermal occupancy nbar = {:.6g} has no equal partner in the "
                "other beam; only symmetric filtering is supported".format(
                    float(will.nbar[group[0]])
                )
            )
        cols = _species_rotate(u_thermal[:, group], n_bins)
        half = group.size // 2
        for k in range(half):
            mode_s, leak_s = _species_mode(cols[:, k], n_bins, True, dw)
            mode_i, leak_i = _species_mode(cols[:, half + k], n_bins, False, dw)
            if max(leak_s, leak_i) > species_tol and will.nbar[group[0]] > 1e-10:
                raise ValueError(
                    "thermal pair at nbar = {:.6g} is not supported on single "
                    "beams (leak {:.3g}); only symmetric filtering is "
                    "supported".format(float(will.nbar[group[0]]), max(leak_s, leak_i))
                )
            th_signal.append(mode_s)
            th_idler.append(mode_i)
            nbar_pairs.append(float(np.mean(will.nbar[group])))

    return FilteredModeSet(
        squeeze_signal=np.array(sq_signal),
        squeeze_idler=np.array(sq_idler),
        thermal_signal=np.array(th_signal),
        thermal_idler=np.array(th_idler),
        r=np.array(r_pairs),
        nbar=np.array(nbar_pairs),
        grid=grid,
    )


# ---------------------------------------------------------------------------
# Purity and mode comparison
# ---------------------------------------------------------------------------


def purity(v, check: bool = False, check_tol: float = 1e-8) -> float:
    """Purity of a Gaussian state, ``P = (hbar/2)^M / sqrt(det V)``.

    Args:
        v (CovarianceMatrix | np.ndarray): covariance matrix (``M`` modes).
        check (bool): also evaluate the symplectic-spectrum route
            ``P = prod (hbar/2)/nu_i`` and require agreement.
        check_tol (float): tolerance of the route-consistency gate.

    Returns:
        float: purity in (0, 1].

    Raises:
        NumericalGateError: if ``det V <= 0`` or the two routes disagree.
    """
    mat = _covariance_array(v)
    n_modes = mat.shape[0] // 2
    sign, logdet = np.linalg.slogdet(mat)
    if sign <= 0.0:
        raise NumericalGateError("covariance determinant is not positive")
    p_det = float(np.exp(n_modes * np.log(HBAR / 2.0) - 0.5 * logdet))
    if check:
        nu = symplectic_eigenvalues(mat)
        p_nu = float(np.exp(np.sum(np.log(HBAR / 2.0) - np.log(nu))))
        if abs(p_det - p_nu) > check_tol * (1.0 + p_det):
            raise NumericalGateError(
                "purity routes disagree: determinant {:.12g} vs symplectic "
                "spectrum {:.12g}".format(p_det, p_nu)
            )
    return p_det


def fidelity_matrix(modes, delta_omega: float) -> np.ndarray:
    """Pairwise overlap fidelities of a list of mode functions.

    Args:
        modes: sequence of unit-normalized complex mode functions.
        delta_omega (float): grid spacing of the mode functions.

    Returns:
        np.ndarray: real symmetric matrix with unit diagonal.
    """
    count = len(modes)
    out = np.empty((count, count))
    for i in range(count):
        for j in range(i + 1, count):
            out[i, j] = out[j, i] = mode_fidelity(modes[i], modes[j], delta_omega)
    np.fill_diagonal(out, 1.0)
    return out
