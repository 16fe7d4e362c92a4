"""Wavepacket runs, momentum decomposition, Kraus extraction.

Oracle: packet-averaged analytic Eckart transmission for sech^2 barriers;
the two-channel diagonal potential makes each prepared state an
independent single-barrier problem with a known answer.
"""

from dataclasses import replace

import numpy as np
import pytest

from oracles import eckart_transmission, packet_average
from pumpreadout.coupling import BASIS_ENERGY, BASIS_QUBIT, ChannelPotential
from pumpreadout.errors import (EdgeDensityError, ExtractionError,
                                GeometryError, InvalidParameterError,
                                PropagationTimeoutError)
from pumpreadout.model import (build_physical_model, paper_geometry,
                               wire_potential)
from pumpreadout.scattering import (FWHM_FACTOR, StepperConfig,
                                    WavepacketSpec, extract_kraus, grid_for,
                                    interaction_window, make_wavepacket,
                                    momentum_amplitudes, paired_runs,
                                    run_pair, run_scattering,
                                    transmission_coefficient)
from pumpreadout.spectral import ChannelField, make_grid

GEOM = paper_geometry()
MODEL = build_physical_model()
K = MODEL.kinetic_coeff


def sech2_channels(grid, scales=(1.0, 1.3), energies=(0.0, 0.0),
                   basis_tag=BASIS_QUBIT):
    """Diagonal two-channel potential: independent sech^2 barriers."""
    bump = (1.0 / np.cosh(grid.x / GEOM.s)) ** 2
    diag = np.stack([s * GEOM.v_x * bump for s in scales])
    return ChannelPotential(grid=grid, diag=diag,
                            offdiag=np.zeros((1, grid.n)),
                            channel_energies=np.asarray(energies, dtype=float),
                            basis_tag=basis_tag)


@pytest.fixture(scope="module")
def eckart_pair():
    """Both preparations through the diagonal two-barrier potential."""
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    pot = sech2_channels(grid)
    lo, _ = interaction_window(pot, GEOM, StepperConfig().coupling_floor)
    packet = make_wavepacket(spec, grid, MODEL, window_left=lo)
    r0, r1 = run_pair(packet, pot, GEOM, MODEL)
    ks = extract_kraus(r0, r1, packet, spec, pot, MODEL)
    return spec, grid, pot, packet, r0, r1, ks


def test_spec_validation_and_sigmas():
    with pytest.raises(InvalidParameterError):
        WavepacketSpec(mean_energy=0.0, energy_spread=0.02)
    with pytest.raises(InvalidParameterError):
        WavepacketSpec(mean_energy=1.0, energy_spread=0.0)
    with pytest.raises(InvalidParameterError):
        WavepacketSpec(mean_energy=1.0, energy_spread=0.2)
    spec = WavepacketSpec(mean_energy=16.4, energy_spread=0.02)
    k0 = spec.wavenumber(K)
    assert K * k0 ** 2 == pytest.approx(16.4, rel=1e-14)
    # energy_spread is the FWHM of the kinetic-energy distribution
    sigma_e = 0.02 * 16.4 / FWHM_FACTOR
    assert spec.sigma_k(K) * (2.0 * K * k0) == pytest.approx(sigma_e, rel=1e-14)
    # minimum-uncertainty packet
    assert spec.sigma_x(K) * spec.sigma_k(K) == pytest.approx(0.5)


def test_make_wavepacket_norm_mean_and_placement():
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    psi = make_wavepacket(spec, grid, MODEL, window_left=-552.5)
    assert np.sum(np.abs(psi) ** 2) * grid.dx == pytest.approx(1.0, abs=1e-13)
    x_mean = float(np.sum(grid.x * np.abs(psi) ** 2) * grid.dx)
    x0 = -552.5 - 7.0 * spec.sigma_x(K) - grid.dx
    assert x_mean == pytest.approx(x0, abs=0.5 * grid.dx)
    field = ChannelField(grid=grid, components=psi[None, :])
    p, amps = momentum_amplitudes(field)
    k_mean = float(np.sum(p * np.abs(amps[0]) ** 2) * grid.dk)
    assert k_mean == pytest.approx(spec.wavenumber(K), rel=1e-9)


def test_make_wavepacket_rejects_bad_launches():
    fast = WavepacketSpec(mean_energy=30.0, energy_spread=0.02)
    grid = make_grid(-81920.0, 81920.0, 8192)  # dx = 20: k0 > k_max/2
    with pytest.raises(InvalidParameterError):
        make_wavepacket(fast, grid, MODEL)
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02,
                          launch_center=-100.0)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    with pytest.raises(GeometryError):
        make_wavepacket(spec, grid, MODEL, window_left=0.0)  # hangs over window


def test_interaction_window_widening():
    grid = make_grid(-8192.0, 8192.0, 1024)
    core = GEOM.r + 5.0 * GEOM.s
    pot = sech2_channels(grid)
    lo, hi = interaction_window(pot, GEOM, 0.05)
    assert (lo, hi) == (-core, core)  # sech^2 dies inside the core
    # a diagonal feature beyond the core widens the right edge
    diag = pot.diag.copy()
    far = (grid.x > 3000.0) & (grid.x < 3100.0)
    diag[0, far] += 0.2
    pot2 = replace(pot, diag=diag)
    lo2, hi2 = interaction_window(pot2, GEOM, 0.05)
    assert lo2 == -core and 3000.0 <= hi2 <= 3100.0
    # an off-diagonal feature widens the left edge
    off = np.zeros((1, grid.n))
    off[0, (grid.x > -4100.0) & (grid.x < -4000.0)] = 0.2
    pot3 = replace(pot, offdiag=off)
    lo3, hi3 = interaction_window(pot3, GEOM, 0.05)
    assert -4100.0 <= lo3 <= -4000.0 and hi3 == core


def test_grid_for_fits_packet_and_window():
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    assert grid.n & (grid.n - 1) == 0
    assert grid.x_min == -grid.x_max
    clearance = 7.0 * spec.sigma_x(K)
    x0 = -552.5 - clearance - 20.0
    assert grid.x_min <= x0 - clearance
    assert grid.x_max >= 552.5 + clearance
    # halving dx doubles n at fixed extent or shrinks extent, never clips
    g10 = grid_for(spec, -552.5, 552.5, MODEL, 10.0)
    assert g10.x_min <= x0 - clearance


def test_eckart_transmission_matches_oracle(eckart_pair):
    spec, grid, pot, packet, r0, r1, ks = eckart_pair
    t0 = transmission_coefficient(0, ks)
    t1 = transmission_coefficient(1, ks)
    oracle0 = packet_average(
        lambda e: eckart_transmission(e, GEOM.v_x, GEOM.s, K),
        spec.mean_energy, spec.energy_spread, K)
    oracle1 = packet_average(
        lambda e: eckart_transmission(e, 1.3 * GEOM.v_x, GEOM.s, K),
        spec.mean_energy, spec.energy_spread, K)
    assert t0 == pytest.approx(oracle0, rel=2e-3)
    assert t1 == pytest.approx(oracle1, rel=2e-3)
    assert t0 > t1  # taller barrier transmits less


def test_lockstep_pair_schedule(eckart_pair):
    _, _, _, _, r0, r1, _ = eckart_pair
    assert (r0.n_steps, r0.dt) == (r1.n_steps, r1.dt)
    assert r0.window == r1.window
    assert r0.prepared == 0 and r1.prepared == 1
    assert max(r0.norm_defect, r1.norm_defect) < 1e-12
    assert r0.interaction_time > 0.0
    assert r0.residual_window < StepperConfig().window_threshold


def test_kraus_set_structure(eckart_pair):
    spec, grid, pot, packet, r0, r1, ks = eckart_pair
    assert ks.a.shape == (ks.p.size, 2, 2)
    assert ks.defect < 1e-10
    assert ks.leakage == 0.0
    # decoupled channels: preparation j never reaches the other channel
    assert np.abs(ks.a[:, 0, 1]).max() == 0.0
    assert np.abs(ks.a[:, 1, 0]).max() == 0.0
    # elastic scattering: only the 3-sigma band tails count as outside
    assert 0.0 < ks.inelastic_fraction < 0.01
    comp = ks.completeness()
    assert np.linalg.norm(comp - np.eye(2), ord=2) <= ks.defect + 1e-12
    assert abs(ks.p0 - spec.wavenumber(K)) <= 0.5 * grid.dk
    assert ks.p[ks.p0_index] == ks.p0
    assert np.array_equal(ks.qubit_block(3), ks.a[3, :2, :])
    with pytest.raises(InvalidParameterError):
        transmission_coefficient(2, ks)


def test_extract_kraus_rejects_mismatched_runs(eckart_pair):
    spec, grid, pot, packet, r0, r1, _ = eckart_pair
    with pytest.raises(ExtractionError):
        extract_kraus(r0, replace(r1, n_steps=r1.n_steps + 1), packet, spec,
                      pot, MODEL)
    with pytest.raises(ExtractionError):
        extract_kraus(r0, replace(r1, dt=r1.dt * 0.5), packet, spec, pot,
                      MODEL)
    with pytest.raises(ExtractionError):
        extract_kraus(r1, r0, packet, spec, pot, MODEL)  # order swapped
    other = make_grid(-2048.0, 2048.0, 256)
    field = ChannelField(grid=other,
                         components=np.zeros((2, other.n), dtype=complex))
    with pytest.raises(ExtractionError):
        extract_kraus(replace(r0, field=field), r1, packet, spec, pot, MODEL)
    pot_e = replace(pot, basis_tag=BASIS_ENERGY)
    with pytest.raises(ExtractionError):
        extract_kraus(r0, r1, packet, spec, pot_e, MODEL, transform=None)


def test_momentum_amplitudes_parseval_and_plane_wave(eckart_pair):
    _, _, _, _, r0, _, _ = eckart_pair
    p, amps = momentum_amplitudes(r0.field)
    total = float(np.sum(np.abs(amps) ** 2) * r0.field.grid.dk)
    assert total == pytest.approx(r0.field.norm_sq(), rel=1e-13)
    assert np.all(np.diff(p) > 0)
    # lattice plane wave lands on a single momentum cell
    grid = make_grid(-640.0, 640.0, 128)
    m = 5
    km = m * grid.dk
    psi = np.exp(1j * km * grid.x) / np.sqrt(grid.n * grid.dx)
    pw = ChannelField(grid=grid, components=psi[None, :])
    p2, amps2 = momentum_amplitudes(pw)
    dens = np.abs(amps2[0]) ** 2 * grid.dk
    idx = int(np.argmax(dens))
    assert p2[idx] == pytest.approx(km)
    assert dens[idx] == pytest.approx(1.0, abs=1e-12)
    assert dens.sum() - dens[idx] < 1e-12


def test_stalled_drain_exit_reports_trapped_weight():
    """A packet on an ultra-narrow quasibound level must not hang the run.

    The bare double barrier holds a long-lived level near 0.44 meV; a
    packet there parks ~1e-2 of its norm in the wells.  The stalled-drain
    exit fires once the window norm flattens, reporting the remainder.
    """
    spec = WavepacketSpec(mean_energy=0.44, energy_spread=0.03)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    barrier = wire_potential(grid.x, GEOM)
    pot = ChannelPotential(grid=grid, diag=np.stack([barrier, barrier]),
                           offdiag=np.zeros((1, grid.n)),
                           channel_energies=np.array([0.0, 0.0]),
                           basis_tag=BASIS_QUBIT)
    lo, _ = interaction_window(pot, GEOM, StepperConfig().coupling_floor)
    packet = make_wavepacket(spec, grid, MODEL, window_left=lo)
    res = run_scattering(0, packet, pot, GEOM, MODEL)
    assert res.residual_window > 1e-3  # trapped, far above window_threshold
    assert res.n_steps < 1000  # stall exit, not a timeout
    assert res.norm_defect < 1e-11
    p, amps = momentum_amplitudes(res.field)
    t = float(np.sum(np.abs(amps[:, p > 0.0]) ** 2) * grid.dk)
    r = float(np.sum(np.abs(amps[:, p < 0.0]) ** 2) * grid.dk)
    zero = float(np.sum(np.abs(amps[:, p == 0.0]) ** 2) * grid.dk)
    assert t + r + zero == pytest.approx(1.0, abs=1e-10)


def test_propagation_timeout():
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    pot = sech2_channels(grid)
    lo, _ = interaction_window(pot, GEOM, 0.05)
    packet = make_wavepacket(spec, grid, MODEL, window_left=lo)
    with pytest.raises(PropagationTimeoutError):
        run_scattering(0, packet, pot, GEOM, MODEL,
                       stepper=StepperConfig(max_steps=2))


def test_edge_density_guard():
    # an unreachable entry norm keeps the run in the pre-entry phase, so
    # the transmitted packet reaching the far edge must abort the run
    spec = WavepacketSpec(mean_energy=8.0, energy_spread=0.04)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 10.0)
    pot = sech2_channels(grid, scales=(0.2, 0.2))
    lo, _ = interaction_window(pot, GEOM, 0.05)
    packet = make_wavepacket(spec, grid, MODEL, window_left=lo)
    with pytest.raises(EdgeDensityError):
        run_scattering(0, packet, pot, GEOM, MODEL,
                       stepper=StepperConfig(interaction_norm=1.5))


def test_stepper_and_input_validation():
    spec = WavepacketSpec(mean_energy=2.4, energy_spread=0.02)
    grid = grid_for(spec, -552.5, 552.5, MODEL, 20.0)
    pot = sech2_channels(grid)
    packet = make_wavepacket(spec, grid, MODEL, window_left=-552.5)
    with pytest.raises(InvalidParameterError):
        run_scattering(0, packet, pot, GEOM, MODEL,
                       stepper=StepperConfig(stall_ceiling=0.02))
    with pytest.raises(InvalidParameterError):
        run_scattering(2, packet, pot, GEOM, MODEL)
    with pytest.raises(InvalidParameterError):
        run_scattering(0, packet[:100], pot, GEOM, MODEL)
    pot_e = sech2_channels(grid, basis_tag=BASIS_ENERGY)
    with pytest.raises(InvalidParameterError):
        run_scattering(0, packet, pot_e, GEOM, MODEL, transform=None)


def test_paired_runs_matches_manual_pipeline(eckart_pair):
    spec, grid, pot, packet, r0, r1, ks = eckart_pair
    ks2 = paired_runs(spec, pot, GEOM, MODEL)
    assert np.array_equal(ks2.p, ks.p)
    assert np.array_equal(ks2.a, ks.a)
    assert ks2.defect == ks.defect
