"""Physical constants, device geometry and analytic potentials.

Unit system: lengths in nm, energies in meV, time in units of hbar/meV
(one time unit is ~0.6582 ps); hbar = 1 internally.  All quantities are
plain floats in these units, so kinetic energy is ``K * k**2`` with k in
1/nm and the Coulomb energy of two point charges is ``C / rho`` with rho
in nm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

# CODATA-2018 derived, expressed in the nm/meV unit system.
HBAR2_OVER_2ME = 38.09982     # hbar^2/(2 m_e), meV nm^2
E2_OVER_4PIEPS0 = 1439.9645   # e^2/(4 pi eps_0), meV nm
HBAR_PS = 0.6582119569        # one internal time unit, in picoseconds


@dataclass(frozen=True)
class PhysicalModel:
    """Effective-mass / permittivity constants and derived coefficients.

    Attributes
    ----------
    m_star_rel : float
        Effective mass in units of the free electron mass.
    epsilon_r : float
        Relative permittivity.
    kinetic_coeff : float
        K = hbar^2/(2 m*), in meV nm^2.
    coulomb_coeff : float
        C = e^2/(4 pi eps), in meV nm.
    """

    m_star_rel: float
    epsilon_r: float
    kinetic_coeff: float
    coulomb_coeff: float


def build_physical_model(m_star_rel: float = 0.0667,
                         epsilon_r: float = 12.9) -> PhysicalModel:
    """Construct a :class:`PhysicalModel` from material parameters.

    Defaults correspond to a GaAs/AlGaAs heterostructure.
    """
    if not (m_star_rel > 0.0) or not (epsilon_r > 0.0):
        raise InvalidParameterError(
            "effective mass and permittivity must be positive, got "
            f"m_star_rel={m_star_rel}, epsilon_r={epsilon_r}")
    return PhysicalModel(
        m_star_rel=m_star_rel,
        epsilon_r=epsilon_r,
        kinetic_coeff=HBAR2_OVER_2ME / m_star_rel,
        coulomb_coeff=E2_OVER_4PIEPS0 / epsilon_r,
    )


@dataclass(frozen=True)
class DeviceGeometry:
    """Double-dot and nano-wire geometry.

    Lengths in nm, energies in meV.  The two dots sit at (0, +y_c) and
    (0, -y_c); the wire runs along y = -d, so the dot at -y_c is the one
    closer to the wire.  ``wire_half_width`` is the transverse softening
    scale of the 1D wire reduction (0 means the strict line limit).
    """

    y_c: float = 143.0
    v0: float = 5.99
    hbar_omega: float = 0.818
    v_x: float = 1.09
    r: float = 143.0
    s: float = 81.9
    d: float = 287.0
    wire_half_width: float = 2.0

    def __post_init__(self):
        for name in ("y_c", "v0", "hbar_omega", "v_x", "r", "s", "d"):
            if not (getattr(self, name) > 0.0):
                raise InvalidParameterError(f"geometry field {name} must be > 0")
        if self.wire_half_width < 0.0:
            raise InvalidParameterError("wire_half_width must be >= 0")
        if not (self.d > self.y_c):
            raise InvalidParameterError("wire must lie outside the dot pair (d > y_c)")


def paper_geometry() -> DeviceGeometry:
    """The shipped default device: the parameter set used throughout."""
    return DeviceGeometry()


def _sech2(u):
    # overflow-safe sech^2; cosh(u) overflows for |u| > ~710
    a = np.abs(u)
    e = np.exp(-a)
    sech = 2.0 * e / (1.0 + e * e)
    return sech * sech


def dot_potential(x1, y1, geom: DeviceGeometry, model: PhysicalModel):
    """Double-dot confinement potential at (x1, y1), in meV.

    Two Gaussian wells of depth v0 centred at (0, +-y_c).  The
    mass-frequency prefactor is evaluated as (hbar*omega)^2/(4*K*v0) so
    only stored fields enter.
    """
    a = geom.hbar_omega ** 2 / (4.0 * model.kinetic_coeff * geom.v0)
    x1 = np.asarray(x1, dtype=float)
    y1 = np.asarray(y1, dtype=float)
    well_up = np.exp(-a * (x1 ** 2 + (y1 - geom.y_c) ** 2))
    well_dn = np.exp(-a * (x1 ** 2 + (y1 + geom.y_c) ** 2))
    return -geom.v0 * (well_up + well_dn)


def wire_potential(x2, geom: DeviceGeometry):
    """Longitudinal resonant-tunneling barrier potential at x2, in meV.

    Two sech^2 bumps of height v_x at +-r with width scale s.  The
    transverse wire confinement is handled analytically by the 1D
    reduction and does not appear here.
    """
    x2 = np.asarray(x2, dtype=float)
    return geom.v_x * (_sech2((x2 - geom.r) / geom.s)
                       + _sech2((x2 + geom.r) / geom.s))
