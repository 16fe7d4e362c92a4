"""Reduce the two-electron Coulomb term to channel-coupling potentials.

The wire electron lives on the line y = -d; the dot electron occupies the
solved eigenstates.  Integrating the Coulomb kernel against the pair
densities phi_i*phi_j gives a real symmetric matrix potential V_ij(x2)
that, together with the bare wire barriers and the channel energies E_i,
defines the coupled-channel Hamiltonian for the wire coordinate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dotsolver import ChannelSet
from .errors import AccuracyError, RepresentationError, ShapeError
from .model import DeviceGeometry, PhysicalModel, wire_potential
from .spectral import Grid1D

BASIS_ENERGY = "dot-energy"
BASIS_QUBIT = "qubit"

# pair densities below this fraction of the global max carry no weight
SUPPORT_CUT = 1e-15


def _pair_list(n_ch: int) -> list[tuple[int, int]]:
    return [(i, j) for i in range(n_ch) for j in range(i + 1, n_ch)]


@dataclass(frozen=True)
class ChannelPotential:
    """Matrix potential for the wire electron over a 1D grid.

    diag[i] = V_ii(x2) + V_wire(x2) + E_i; offdiag rows follow the
    (i, j) pairs of :func:`_pair_list` order.  Asymptotically diag[i]
    approaches E_i + C/|x2| (monopole) while offdiag entries vanish
    faster than 1/|x2|.
    """

    grid: Grid1D
    diag: np.ndarray
    offdiag: np.ndarray
    channel_energies: np.ndarray
    basis_tag: str = BASIS_ENERGY
    pairs: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        n_ch = self.diag.shape[0]
        if self.diag.shape != (n_ch, self.grid.n):
            raise ShapeError("diag must be (n_ch, grid.n)")
        expected = _pair_list(n_ch)
        if self.offdiag.shape != (len(expected), self.grid.n):
            raise ShapeError("offdiag must be (n_ch*(n_ch-1)/2, grid.n)")
        if not self.pairs:
            object.__setattr__(self, "pairs", expected)

    @property
    def n_channels(self) -> int:
        return self.diag.shape[0]

    def matrix(self) -> np.ndarray:
        """Full (n_ch, n_ch, n) symmetric array for the Hamiltonian."""
        n_ch = self.n_channels
        vmat = np.zeros((n_ch, n_ch, self.grid.n))
        for i in range(n_ch):
            vmat[i, i] = self.diag[i]
        for row, (i, j) in enumerate(self.pairs):
            vmat[i, j] = self.offdiag[row]
            vmat[j, i] = self.offdiag[row]
        return vmat

    def to_csv(self, path) -> None:
        cols = [f"V_{i}{i}" for i in range(self.n_channels)]
        cols += [f"V_{i}{j}" for i, j in self.pairs]
        data = np.vstack([self.grid.x, self.diag, self.offdiag]).T
        header = "x_nm," + ",".join(cols)
        np.savetxt(path, data, delimiter=",", header=header, comments="",
                   fmt="%.17g", newline="\n")


def coulomb_channel_matrix(channels: ChannelSet, grid1d: Grid1D,
                           geom: DeviceGeometry, model: PhysicalModel, *,
                           chunk: int = 512) -> np.ndarray:
    """Raw Coulomb part: W[i, j, m] = <phi_i| C/dist(., x2_m) |phi_j>.

    Direct quadrature on the dot grid against the softened kernel
    1/sqrt((x1-x2)^2 + (y1+d)^2 + dy^2); the dot density never reaches
    the wire line, so the softening only guards grid coincidences.
    """
    n_ch = channels.n_states
    gd = channels.grid
    x1, y1 = gd.mesh()
    area = gd.cell_area

    flat_states = channels.states.reshape(n_ch, -1)
    dens = np.einsum("ip,jp->ijp", flat_states, flat_states) * area
    iu, ju = np.triu_indices(n_ch)
    dens_rows = dens[iu, ju]  # (n_pairs_incl_diag, npts)

    support = np.abs(dens_rows).max(axis=0)
    mask = support > SUPPORT_CUT * support.max()
    dens_rows = np.ascontiguousarray(dens_rows[:, mask])
    xs = x1.ravel()[mask]
    y_off2 = (y1.ravel()[mask] + geom.d) ** 2 + geom.wire_half_width ** 2

    out_rows = np.empty((dens_rows.shape[0], grid1d.n))
    for start in range(0, grid1d.n, chunk):
        x2 = grid1d.x[start:start + chunk]
        kern = 1.0 / np.sqrt((xs[:, None] - x2[None, :]) ** 2
                             + y_off2[:, None])
        out_rows[:, start:start + chunk] = dens_rows @ kern

    wmat = np.zeros((n_ch, n_ch, grid1d.n))
    wmat[iu, ju] = out_rows
    wmat[ju, iu] = out_rows
    return model.coulomb_coeff * wmat


def channel_coupling(channels: ChannelSet, grid1d: Grid1D,
                     geom: DeviceGeometry, model: PhysicalModel, *,
                     check_convergence: bool = False) -> ChannelPotential:
    """Assemble diag/offdiag channel potentials on ``grid1d``.

    With check_convergence=True the quadrature is repeated on the dot
    grid downsampled by 2 per axis; a relative change above 1% raises
    AccuracyError.
    """
    far = model.coulomb_coeff / 0.01
    if grid1d.x_max < 0.6 * far:
        raise ShapeError(
            f"grid1d must extend to ~{far:.0f} nm where the monopole tail "
            "falls below 0.01 meV")
    wmat = coulomb_channel_matrix(channels, grid1d, geom, model)

    if check_convergence:
        coarse = ChannelSet(
            grid=_decimated_grid(channels.grid),
            energies=channels.energies,
            states=np.ascontiguousarray(channels.states[:, ::2, ::2]),
        )
        wmat_c = coulomb_channel_matrix(coarse, grid1d, geom, model)
        scale = np.abs(wmat).max()
        rel = np.abs(wmat - wmat_c).max() / scale
        if rel > 0.01:
            raise AccuracyError(
                f"Coulomb quadrature changed by {rel:.2%} under dot-grid "
                "decimation")

    n_ch = channels.n_states
    vwire = wire_potential(grid1d.x, geom)
    diag = np.empty((n_ch, grid1d.n))
    for i in range(n_ch):
        diag[i] = wmat[i, i] + vwire + channels.energies[i]
    pairs = _pair_list(n_ch)
    offdiag = np.stack([wmat[i, j] for i, j in pairs])
    return ChannelPotential(grid=grid1d, diag=diag, offdiag=offdiag,
                            channel_energies=np.asarray(channels.energies),
                            basis_tag=BASIS_ENERGY, pairs=pairs)


def _decimated_grid(grid2d):
    from .spectral import make_grid2d
    return make_grid2d(grid2d.gx.x_min, grid2d.gx.x_max, grid2d.gx.n // 2,
                       grid2d.gy.x_min, grid2d.gy.x_max, grid2d.gy.n // 2)


def rotate_basis(potential: ChannelPotential, transform: np.ndarray,
                 *, to_tag: str = BASIS_QUBIT) -> ChannelPotential:
    """Conjugate the 2x2 qubit block by ``transform`` at every x2.

    transform columns express the target basis in the source basis
    (|a> = sum_i B[i, a] |phi_i>), so the block maps as B^T V B; higher
    channels are untouched.
    """
    if potential.basis_tag == to_tag:
        raise RepresentationError(
            f"potential already tagged {potential.basis_tag}")
    b = np.asarray(transform, dtype=float)
    if b.shape != (2, 2):
        raise ShapeError("transform must be 2x2")
    vmat = potential.matrix()
    block = vmat[:2, :2]  # (2, 2, n)
    rotated = np.einsum("ia,ijx,jb->abx", b, block, b)
    vmat[:2, :2] = rotated

    n_ch = potential.n_channels
    diag = np.stack([vmat[i, i] for i in range(n_ch)])
    offdiag = np.stack([vmat[i, j] for i, j in potential.pairs])
    return ChannelPotential(grid=potential.grid, diag=diag, offdiag=offdiag,
                            channel_energies=potential.channel_energies,
                            basis_tag=to_tag, pairs=list(potential.pairs))
