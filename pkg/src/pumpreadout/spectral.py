"""Spatial/momentum grids, Fourier Hamiltonians and Chebyshev propagation.

The propagator approximates exp(-i*H*dt) by a Chebyshev polynomial series
in the normalized operator Ht = (2H - Eu - El)/(Eu - El), with Bessel
coefficients a_i = 2*J_i(alpha) (a_0 = J_0), alpha = (Eu - El)*dt/2.  An
imaginary-time variant with scaled modified-Bessel coefficients drives the
ground-state solver.  Both run on the same three-term recurrence
phi_{i+1} = -2i*Ht*phi_i + phi_{i-1} (without the -i in imaginary time).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import ive, jv

from .errors import InvalidParameterError, ShapeError, StepSizeError

DEFAULT_TERM_CAP = 100_000


def _check_pow2(n: int) -> None:
    if n < 8 or (n & (n - 1)) != 0:
        raise InvalidParameterError(f"grid size must be a power of two >= 8, got {n}")


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid with FFT-ordered momentum lattice."""

    x_min: float
    x_max: float
    n: int
    dx: float
    x: np.ndarray
    k: np.ndarray

    @property
    def k_max(self) -> float:
        return np.pi / self.dx

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def dk(self) -> float:
        return 2.0 * np.pi / self.length


def make_grid(x_min: float, x_max: float, n: int) -> Grid1D:
    """Build a 1D grid; n must be a power of two >= 8."""
    if not (x_max > x_min):
        raise InvalidParameterError("x_max must exceed x_min")
    _check_pow2(n)
    dx = (x_max - x_min) / n
    x = x_min + dx * np.arange(n)
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=dx)
    return Grid1D(x_min, x_max, n, dx, x, k)


@dataclass(frozen=True)
class Grid2D:
    """Tensor product of two 1D grids; arrays are laid out (ny, nx)."""

    gx: Grid1D
    gy: Grid1D

    @property
    def cell_area(self) -> float:
        return self.gx.dx * self.gy.dx

    @property
    def shape(self) -> tuple[int, int]:
        return (self.gy.n, self.gx.n)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) coordinate arrays of shape (ny, nx)."""
        return np.meshgrid(self.gx.x, self.gy.x, indexing="xy")

    def k2_mesh(self) -> np.ndarray:
        return self.gy.k[:, None] ** 2 + self.gx.k[None, :] ** 2


def make_grid2d(x_min, x_max, nx, y_min, y_max, ny) -> Grid2D:
    return Grid2D(make_grid(x_min, x_max, nx), make_grid(y_min, y_max, ny))


@dataclass
class ChannelField:
    """Coupled-channel complex wavefunction: one 1D component per channel."""

    grid: Grid1D
    components: np.ndarray  # (n_ch, n) complex

    def __post_init__(self):
        self.components = np.ascontiguousarray(self.components, dtype=complex)
        if self.components.ndim != 2 or self.components.shape[1] != self.grid.n:
            raise ShapeError("components must be (n_ch, grid.n)")

    @property
    def n_channels(self) -> int:
        return self.components.shape[0]

    def norm_sq(self) -> float:
        return float(np.sum(np.abs(self.components) ** 2) * self.grid.dx)

    def norm(self) -> float:
        return np.sqrt(self.norm_sq())

    def copy(self) -> "ChannelField":
        return ChannelField(self.grid, self.components.copy())

    def window_norm_sq(self, x_lo: float, x_hi: float) -> float:
        sel = (self.grid.x >= x_lo) & (self.grid.x <= x_hi)
        return float(np.sum(np.abs(self.components[:, sel]) ** 2) * self.grid.dx)

    def edge_density(self, n_cells: int = 8) -> float:
        """Max |psi|^2 summed over channels within n_cells of either edge."""
        dens = np.sum(np.abs(self.components) ** 2, axis=0)
        return float(max(dens[:n_cells].max(), dens[-n_cells:].max()))


@dataclass(frozen=True)
class SpectralBounds:
    """Upper/lower bounds on the energies sampled by the state, meV."""

    e_lower: float
    e_upper: float

    def __post_init__(self):
        if not (self.e_upper > self.e_lower):
            raise InvalidParameterError("need e_upper > e_lower")

    @property
    def span(self) -> float:
        return self.e_upper - self.e_lower

    @property
    def center(self) -> float:
        return 0.5 * (self.e_upper + self.e_lower)


class ChannelHamiltonian1D:
    """H acting on a ChannelField: kinetic via FFT plus a matrix potential.

    vmat has shape (n_ch, n_ch, n); vmat[i, i] is the full channel-diagonal
    potential (wire barrier + channel coupling + channel energy) and
    vmat[i, j] the real symmetric coupling between channels.
    """

    def __init__(self, grid: Grid1D, vmat: np.ndarray, kinetic_coeff: float):
        vmat = np.asarray(vmat, dtype=float)
        if vmat.ndim != 3 or vmat.shape[0] != vmat.shape[1] or vmat.shape[2] != grid.n:
            raise ShapeError("vmat must be (n_ch, n_ch, n)")
        if not np.allclose(vmat, vmat.transpose(1, 0, 2), atol=1e-12):
            raise ShapeError("vmat must be symmetric in the channel indices")
        self.grid = grid
        self.vmat = vmat
        self.kinetic_coeff = kinetic_coeff
        self.n_channels = vmat.shape[0]
        self._kin = kinetic_coeff * grid.k ** 2

    def apply(self, components: np.ndarray) -> np.ndarray:
        """(H psi) for components of shape (n_ch, n)."""
        if components.shape != (self.n_channels, self.grid.n):
            raise ShapeError(
                f"field shape {components.shape} does not match Hamiltonian "
                f"({self.n_channels}, {self.grid.n})")
        out = sfft.ifft(self._kin * sfft.fft(components, axis=-1), axis=-1)
        out += np.einsum("ijx,jx->ix", self.vmat, components)
        return out

    def apply_field(self, field: ChannelField) -> ChannelField:
        if field.grid is not self.grid and (
                field.grid.n != self.grid.n
                or field.grid.x_min != self.grid.x_min
                or field.grid.x_max != self.grid.x_max):
            raise ShapeError("field grid does not match Hamiltonian grid")
        return ChannelField(self.grid, self.apply(field.components))

    def spectral_bounds(self, pad: float = 0.05) -> SpectralBounds:
        return estimate_spectral_bounds(self, pad=pad)


class GridHamiltonian2D:
    """H = -K * laplacian + V(x, y) on a 2D grid; batched over leading axes."""

    def __init__(self, grid: Grid2D, potential: np.ndarray, kinetic_coeff: float):
        potential = np.asarray(potential, dtype=float)
        if potential.shape != grid.shape:
            raise ShapeError("potential shape must match grid (ny, nx)")
        self.grid = grid
        self.potential = potential
        self.kinetic_coeff = kinetic_coeff
        self._kin = kinetic_coeff * grid.k2_mesh()

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Works for real or complex psi of shape (..., ny, nx)."""
        if psi.shape[-2:] != self.grid.shape:
            raise ShapeError("psi shape does not match grid")
        if np.isrealobj(psi):
            kin = sfft.irfft2(self._kin[:, :psi.shape[-1] // 2 + 1]
                              * sfft.rfft2(psi, axes=(-2, -1)),
                              axes=(-2, -1), s=self.grid.shape)
        else:
            kin = sfft.ifft2(self._kin * sfft.fft2(psi, axes=(-2, -1)),
                             axes=(-2, -1))
        return kin + self.potential * psi

    def spectral_bounds(self, pad: float = 0.05) -> SpectralBounds:
        kmax2 = self.grid.gx.k_max ** 2 + self.grid.gy.k_max ** 2
        e_up = self.kinetic_coeff * kmax2 + float(self.potential.max())
        e_lo = float(self.potential.min())
        span = e_up - e_lo
        return SpectralBounds(e_lo - pad * span, e_up + pad * span)


def estimate_spectral_bounds(ham: ChannelHamiltonian1D, pad: float = 0.05) -> SpectralBounds:
    """Gershgorin-style bounds wide enough for any state on the grid."""
    diag = np.einsum("iix->ix", ham.vmat)
    offdiag_rowsum = np.sum(np.abs(ham.vmat), axis=1) - np.abs(diag)
    e_up = ham.kinetic_coeff * ham.grid.k_max ** 2 + float((diag + offdiag_rowsum).max())
    e_lo = float((diag - offdiag_rowsum).min())
    span = e_up - e_lo
    return SpectralBounds(e_lo - pad * span, e_up + pad * span)


def _chebyshev_order(alpha: float, coeff_fn, tol: float, cap: int) -> tuple[int, np.ndarray]:
    """Smallest N >= ceil(alpha) with |a_N| < tol, plus 4 guard terms."""
    n0 = max(int(np.ceil(alpha)), 1)
    n_try = n0 + 64
    while True:
        if n_try > cap + 64:
            raise StepSizeError(
                f"Chebyshev order exceeds cap {cap} (alpha={alpha:.1f}); "
                "reduce dt or tighten spectral bounds")
        coeffs = coeff_fn(np.arange(n_try + 1), alpha)
        small = np.nonzero(np.abs(coeffs) < tol)[0]
        small = small[small >= n0]
        if small.size:
            n = int(small[0]) + 4
            if n > cap:
                raise StepSizeError(
                    f"Chebyshev order {n} exceeds cap {cap}; reduce dt")
            return n, coeffs[:n + 1]
        n_try = n_try * 2


def _real_time_coeffs(idx: np.ndarray, alpha: float) -> np.ndarray:
    c = 2.0 * jv(idx, alpha)
    c[0] *= 0.5
    return c


def _imag_time_coeffs(idx: np.ndarray, alpha: float) -> np.ndarray:
    # scaled so the step implements exp(-tau*(H - E_l)); ive = I_n(a)*exp(-a);
    # the (-1)^n of exp(-a*z) is absorbed into the recurrence sign
    c = 2.0 * ive(idx, alpha)
    c[0] *= 0.5
    return c


def _cheb_sum(psi: np.ndarray, apply_h, bounds: SpectralBounds, coeffs: np.ndarray,
              imag_time: bool) -> np.ndarray:
    """Three-term Chebyshev recurrence; apply_h must be linear."""
    inv_half_span = 2.0 / bounds.span
    shift = bounds.center

    def h_norm(phi):
        return (apply_h(phi) - shift * phi) * inv_half_span

    factor = -1.0 if imag_time else -1.0j
    # phi_n = factor^n T_n(xi): the previous-term sign in the three-term
    # recurrence is -factor^2 (+1 for real time, -1 for imaginary time)
    prev_sign = 1.0 if not imag_time else -1.0
    phi_prev = psi.astype(complex) if not imag_time else psi.copy()
    phi_cur = factor * h_norm(phi_prev)
    acc = coeffs[0] * phi_prev + coeffs[1] * phi_cur
    for a_i in coeffs[2:]:
        phi_next = 2.0 * factor * h_norm(phi_cur) + prev_sign * phi_prev
        acc += a_i * phi_next
        phi_prev = phi_cur
        phi_cur = phi_next
    return acc


def chebyshev_step(field: ChannelField, ham: ChannelHamiltonian1D,
                   bounds: SpectralBounds, dt: float, tol: float = 1e-12,
                   term_cap: int = DEFAULT_TERM_CAP) -> ChannelField:
    """One real-time step exp(-i*H*dt) applied to a coupled-channel field."""
    if not (dt > 0.0):
        raise InvalidParameterError("dt must be positive")
    if not (0.0 < tol < 1.0):
        raise InvalidParameterError("tol must lie in (0, 1)")
    if field.components.shape[0] != ham.n_channels:
        raise ShapeError("channel count mismatch")
    out = chebyshev_apply_exp(field.components, ham.apply, bounds, dt, tol, term_cap)
    return ChannelField(field.grid, out)


def chebyshev_apply_exp(psi: np.ndarray, apply_h, bounds: SpectralBounds,
                        dt: float, tol: float = 1e-12,
                        term_cap: int = DEFAULT_TERM_CAP) -> np.ndarray:
    """exp(-i*H*dt) on a raw array (any shape apply_h accepts)."""
    alpha = 0.5 * bounds.span * dt
    _, coeffs = _chebyshev_order(alpha, _real_time_coeffs, tol, term_cap)
    acc = _cheb_sum(np.asarray(psi, dtype=complex), apply_h, bounds, coeffs,
                    imag_time=False)
    return np.exp(-1.0j * bounds.center * dt) * acc


def chebyshev_apply_filter(psi: np.ndarray, apply_h, bounds: SpectralBounds,
                           tau: float, tol: float = 1e-12,
                           term_cap: int = DEFAULT_TERM_CAP) -> np.ndarray:
    """Imaginary-time filter exp(-tau*(H - E_l)) on a raw real/complex array.

    The E_l shift keeps the result O(1) for states near the bottom of the
    spectrum; callers normalize afterwards anyway.
    """
    alpha = 0.5 * bounds.span * tau
    _, coeffs = _chebyshev_order(alpha, _imag_time_coeffs, tol, term_cap)
    return _cheb_sum(psi, apply_h, bounds, coeffs, imag_time=True)


class _SplitOperatorStepper:
    """Second-order split-operator reference propagator (test oracle only)."""

    def __init__(self, ham: ChannelHamiltonian1D, dt: float):
        self.ham = ham
        self.dt = dt
        vmat_x = ham.vmat.transpose(2, 0, 1)  # (n, ch, ch)
        evals, evecs = np.linalg.eigh(vmat_x)
        phase = np.exp(-0.5j * dt * evals)
        self._exp_v_half = np.einsum("xab,xb,xcb->xac", evecs, phase, evecs.conj())
        self._exp_k = np.exp(-1.0j * dt * ham._kin)

    def step(self, components: np.ndarray) -> np.ndarray:
        psi = np.einsum("xab,bx->ax", self._exp_v_half, components)
        psi = sfft.ifft(self._exp_k * sfft.fft(psi, axis=-1), axis=-1)
        return np.einsum("xab,bx->ax", self._exp_v_half, psi)
