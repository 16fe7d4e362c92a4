"""Lowest eigenstates of the 2D double-dot and the computational qubit basis.

The solver runs block imaginary-time Chebyshev filtering with Gram-Schmidt
orthonormalization of the block each step and periodic Rayleigh-Ritz
rotations, optionally warm-started on a half-resolution grid.  States are
kept real throughout; the filter only ever damps excited components, so
the block converges to the lowest subspace at a rate set by the gap to the
first state outside the block.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.fft as sfft

from .errors import (BasisConstructionError, ConvergenceError,
                     InvalidParameterError)
from .model import DeviceGeometry, PhysicalModel, dot_potential
from .spectral import (Grid2D, GridHamiltonian2D, chebyshev_apply_filter,
                       make_grid2d)


@dataclass(frozen=True)
class ChannelSet:
    """Dot eigenpairs plus the qubit-basis transform.

    states[i] is the real, unit-norm eigenfunction phi_i on grid (ny, nx).
    qubit_transform B maps the qubit basis into the energy basis:
    |a> = sum_i B[i, a] phi_i for a in {0, 1}; None until
    :func:`build_qubit_basis` has run.
    """

    grid: Grid2D
    energies: np.ndarray
    states: np.ndarray
    qubit_transform: np.ndarray | None = None
    tunnel_splitting: float | None = None
    rabi_period: float | None = None

    @property
    def n_states(self) -> int:
        return self.states.shape[0]

    def overlap_matrix(self) -> np.ndarray:
        flat = self.states.reshape(self.n_states, -1)
        return flat @ flat.T * self.grid.cell_area


def default_dot_grid(n: int = 256, half_extent: float = 384.0) -> Grid2D:
    """Square grid centred on the dot pair; 256 x 3 nm cells by default."""
    return make_grid2d(-half_extent, half_extent, n, -half_extent, half_extent, n)


def _initial_block(grid: Grid2D, geom: DeviceGeometry, model: PhysicalModel,
                   m: int) -> np.ndarray:
    """Harmonic-oscillator guesses at the two wells, symmetrized."""
    x, y = grid.mesh()
    l2 = 2.0 * model.kinetic_coeff / geom.hbar_omega  # oscillator length^2
    g_up = np.exp(-(x ** 2 + (y - geom.y_c) ** 2) / (2.0 * l2))
    g_dn = np.exp(-(x ** 2 + (y + geom.y_c) ** 2) / (2.0 * l2))
    l = np.sqrt(l2)
    cands = [
        g_up + g_dn,
        g_up - g_dn,
        (y - geom.y_c) * g_up + (y + geom.y_c) * g_dn,
        (y - geom.y_c) * g_up - (y + geom.y_c) * g_dn,
        x * (g_up + g_dn),
        x * (g_up - g_dn),
        ((y - geom.y_c) ** 2 - 0.5 * l2) * g_up + ((y + geom.y_c) ** 2 - 0.5 * l2) * g_dn,
        (x ** 2 - 0.5 * l2) * (g_up + g_dn),
        x * ((y - geom.y_c) * g_up + (y + geom.y_c) * g_dn),
        ((y - geom.y_c) ** 2 - 0.5 * l2) * g_up - ((y + geom.y_c) ** 2 - 0.5 * l2) * g_dn,
    ]
    del l
    block = np.stack(cands[:m])
    return block


def _orthonormalize(block: np.ndarray, cell_area: float) -> np.ndarray:
    m = block.shape[0]
    flat = block.reshape(m, -1).T * np.sqrt(cell_area)
    q, r = np.linalg.qr(flat)
    # fix QR sign ambiguity for determinism
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    q = q * signs
    return (q.T / np.sqrt(cell_area)).reshape(block.shape)


def _rayleigh_ritz(block: np.ndarray, ham: GridHamiltonian2D):
    m = block.shape[0]
    area = ham.grid.cell_area
    hblock = ham.apply(block)
    flat = block.reshape(m, -1)
    hflat = hblock.reshape(m, -1)
    hmat = flat @ hflat.T * area
    hmat = 0.5 * (hmat + hmat.T)
    evals, evecs = np.linalg.eigh(hmat)
    rotated = np.tensordot(evecs.T, block, axes=1)
    h_rot = np.tensordot(evecs.T, hblock, axes=1)
    resid = h_rot - evals[:, None, None] * rotated
    resid_norms = np.sqrt(np.sum(resid.reshape(m, -1) ** 2, axis=1) * area)
    return evals, rotated, resid_norms


def _fourier_upsample(block: np.ndarray, shape_to: tuple[int, int]) -> np.ndarray:
    """Zero-padded spectral interpolation onto a finer grid (same extents)."""
    m, ny, nx = block.shape
    ny2, nx2 = shape_to
    spec = sfft.fft2(block, axes=(-2, -1))
    out = np.zeros((m, ny2, nx2), dtype=complex)
    hy, hx = ny // 2, nx // 2
    out[:, :hy, :hx] = spec[:, :hy, :hx]
    out[:, :hy, -hx:] = spec[:, :hy, -hx:]
    out[:, -hy:, :hx] = spec[:, -hy:, :hx]
    out[:, -hy:, -hx:] = spec[:, -hy:, -hx:]
    return np.real(sfft.ifft2(out, axes=(-2, -1))) * (ny2 * nx2) / (ny * nx)


def solve_dot_eigenstates(geom: DeviceGeometry, model: PhysicalModel,
                          grid2d: Grid2D, n_states: int = 4, *,
                          block_extra: int = 4,
                          residual_rtol: float = 1e-6,
                          max_steps: int = 6000,
                          alpha: float = 14.0,
                          rr_interval: int = 10,
                          warmup: bool = True) -> ChannelSet:
    """Lowest ``n_states`` eigenpairs of -K*lap + V_dot on ``grid2d``.

    Raises ConvergenceError with a residual report if the iteration cap is
    reached before every requested state satisfies
    ||H phi - E phi|| < residual_rtol * |E|.
    """
    if not (1 <= n_states <= 8):
        raise InvalidParameterError("n_states must be in 1..8")
    l_osc = np.sqrt(2.0 * model.kinetic_coeff / geom.hbar_omega)
    y_needed = geom.y_c + 5.0 * l_osc
    if grid2d.gy.x_max < y_needed or -grid2d.gy.x_min < y_needed:
        raise InvalidParameterError(
            f"dot grid must span at least +-{y_needed:.0f} nm in y")

    m = n_states + block_extra

    def run_stage(grid: Grid2D, block: np.ndarray, steps: int, rtol: float):
        x, y = grid.mesh()
        ham = GridHamiltonian2D(grid, dot_potential(x, y, geom, model),
                                model.kinetic_coeff)
        bounds = ham.spectral_bounds()
        tau = 2.0 * alpha / bounds.span
        block = _orthonormalize(block, grid.cell_area)
        evals = resid = None
        for step in range(1, steps + 1):
            block = chebyshev_apply_filter(block, ham.apply, bounds, tau,
                                           tol=1e-14)
            block = _orthonormalize(block, grid.cell_area)
            if step % rr_interval == 0 or step == steps:
                evals, block, resid = _rayleigh_ritz(block, ham)
                target = resid[:n_states] / np.abs(evals[:n_states])
                if np.all(target < rtol):
                    return block, evals, resid, True
        return block, evals, resid, False

    if warmup and grid2d.gx.n >= 64 and grid2d.gy.n >= 64:
        coarse = make_grid2d(grid2d.gx.x_min, grid2d.gx.x_max, grid2d.gx.n // 2,
                             grid2d.gy.x_min, grid2d.gy.x_max, grid2d.gy.n // 2)
        block = _initial_block(coarse, geom, model, m)
        block, _, _, _ = run_stage(coarse, block, max_steps,
                                   max(residual_rtol, 1e-5))
        block = _fourier_upsample(block, grid2d.shape)
    else:
        block = _initial_block(grid2d, geom, model, m)

    block, evals, resid, ok = run_stage(grid2d, block, max_steps, residual_rtol)
    if not ok:
        report = ", ".join(
            f"E{i}={evals[i]:.6f} res={resid[i]:.2e}" for i in range(n_states))
        raise ConvergenceError(
            f"dot eigensolve did not reach rtol={residual_rtol} "
            f"within {max_steps} steps: {report}")

    states = block[:n_states]
    energies = evals[:n_states]

    # deterministic sign convention: phi_i positive at (0, -y_c), falling
    # back to the max-|phi| point for states that vanish there
    ix = int(np.argmin(np.abs(grid2d.gx.x)))
    iy = int(np.argmin(np.abs(grid2d.gy.x + geom.y_c)))
    for i in range(n_states):
        ref = states[i, iy, ix]
        if abs(ref) < 1e-8 * np.abs(states[i]).max():
            flatidx = np.argmax(np.abs(states[i]))
            ref = states[i].reshape(-1)[flatidx]
        if ref < 0:
            states[i] = -states[i]

    return ChannelSet(grid=grid2d, energies=np.array(energies),
                      states=np.ascontiguousarray(states))


def _parity_y(channel_set: ChannelSet, i: int) -> float:
    """<phi_i | P_y phi_i>; +1 even, -1 odd under y -> -y."""
    st = channel_set.states[i]
    flipped = st[::-1, :]
    # periodic grid: x_0 = x_min has no mirror partner; roll restores alignment
    flipped = np.roll(flipped, 1, axis=0)
    return float(np.sum(st * flipped) * channel_set.grid.cell_area)


def build_qubit_basis(channel_set: ChannelSet) -> ChannelSet:
    """Fix |0>,|1> as the (anti)symmetric combinations of the lowest pair.

    |1> is the combination localized on the dot nearer the wire (y < 0);
    requires > 95% localization, records the tunnel splitting and the
    Rabi period 2*pi/(E1 - E0).
    """
    if channel_set.n_states < 2:
        raise BasisConstructionError("need at least two converged states")
    for i in (0, 1):
        if abs(abs(_parity_y(channel_set, i)) - 1.0) > 0.05:
            raise BasisConstructionError(
                f"state {i} lacks definite y-parity; grid or solve unsuitable")

    grid = channel_set.grid
    y_neg = grid.gy.x < 0.0
    phi0, phi1 = channel_set.states[0], channel_set.states[1]
    best = None
    for sign in (+1.0, -1.0):
        cand1 = (phi0 + sign * phi1) / np.sqrt(2.0)
        loc = float(np.sum(cand1[y_neg, :] ** 2) * grid.cell_area)
        if best is None or loc > best[1]:
            best = (sign, loc)
    sign, loc = best
    if loc < 0.95:
        raise BasisConstructionError(
            f"|1> localization {loc:.4f} below 0.95; geometry unsuitable")

    # |0> = (phi0 - s*phi1)/sqrt2, |1> = (phi0 + s*phi1)/sqrt2
    b = np.array([[1.0, 1.0], [-sign, sign]]) / np.sqrt(2.0)
    splitting = float(channel_set.energies[1] - channel_set.energies[0])
    rabi = 2.0 * np.pi / splitting if splitting > 0 else np.inf
    return replace(channel_set, qubit_transform=b,
                   tunnel_splitting=splitting, rabi_period=rabi)


def measurement_window_ratio(channel_set: ChannelSet, n_cycles: int,
                             per_cycle_time: float) -> float:
    """(protocol duration) / (T_Rabi / 20); values < 1 satisfy the window."""
    if channel_set.rabi_period is None:
        raise InvalidParameterError("qubit basis not built yet")
    return (n_cycles * per_cycle_time) / (channel_set.rabi_period / 20.0)
