"""Command line pipeline: dot spectrum, couplings, scattering, protocol.

Each stage caches its result as a checksummed snapshot under
``<out>/cache`` keyed by a digest of the configuration fields it depends
on, so reruns skip finished work and a config change invalidates exactly
the stages it touches.  Every command finishes by writing
``manifest.json``: a deterministic inventory of the output directory
(sha256 per file), the canonical config echo, per-stage convergence
figures, and any warnings raised.  Wall-clock timings go to the
``timings.json`` sidecar, the one inventory entry without a digest.

Exit codes: 0 success, 2 configuration errors, 3 convergence failures,
4 I/O and snapshot errors.
"""

from __future__ import annotations

import argparse
import hashlib
import importlib.metadata
import json
import platform
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, report
from .config import RunConfig, config_text, load_config, validate_config
from .coupling import (BASIS_ENERGY, BASIS_QUBIT, ChannelPotential,
                       channel_coupling)
from .dotsolver import (ChannelSet, build_qubit_basis, default_dot_grid,
                        measurement_window_ratio, solve_dot_eigenstates)
from .errors import (ConfigError, ConvergenceError, InvalidParameterError,
                     SnapshotError)
from .protocol import build_feedback_policy, build_povm, protocol_series
from .scattering import KrausSet, grid_for, paired_runs, transmission_scan
from .snapshot import load_snapshot, save_snapshot
from .spectral import make_grid, make_grid2d

SCAN_HEADER = "energy_meV,T0,T1,defect,leakage"
PROTOCOL_HEADER = "n,F_feedback,F_nofeedback,defect_accumulated"

# inventory entries listed without a digest, and why
_UNDIGESTED = {
    "manifest.json": "cannot contain its own digest",
    "timings.json": "wall-clock timings vary between runs",
}

_MODEL_FIELDS = ("m_star_rel", "epsilon_r")
_GEOM_FIELDS = ("y_c", "v0", "hbar_omega", "v_x", "r", "s", "d",
                "wire_half_width")
_DOT_FIELDS = _MODEL_FIELDS + _GEOM_FIELDS + ("dot_points",
                                              "dot_half_extent", "n_channels")
_STEP_FIELDS = ("alpha_target", "dt_max", "cheb_tol", "window_threshold",
                "coupling_floor", "edge_threshold", "edge_cells", "max_steps",
                "interaction_norm", "stall_lookback", "stall_rate",
                "stall_ceiling", "stall_fraction")


@dataclass
class RunContext:
    """Shared state of one command invocation."""

    cfg: RunConfig
    out: Path
    threads: int
    force: bool
    notes: dict = field(default_factory=dict)
    warnings_seen: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    @property
    def cache(self) -> Path:
        return self.out / "cache"


# ---------------------------------------------------------------- digests

def _blob(cfg: RunConfig, names) -> str:
    return "\n".join(f"{k}={getattr(cfg, k)!r}" for k in names)


def _digest16(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _tag(quoted: float, spread: float) -> str:
    return f"e{quoted:g}_de{spread:g}"


# ------------------------------------------------------- snapshot mapping

def _channelset_sections(cs: ChannelSet) -> dict:
    gx, gy = cs.grid.gx, cs.grid.gy
    return {
        "grid": {"x_min": gx.x_min, "x_max": gx.x_max, "nx": gx.n,
                 "y_min": gy.x_min, "y_max": gy.x_max, "ny": gy.n},
        "spectrum": {"energies": cs.energies, "states": cs.states},
        "qubit": {"transform": cs.qubit_transform,
                  "tunnel_splitting": cs.tunnel_splitting,
                  "rabi_period": cs.rabi_period},
    }


def _channelset_from(sections: dict) -> ChannelSet:
    g = sections["grid"]
    grid = make_grid2d(float(g["x_min"]), float(g["x_max"]), int(g["nx"]),
                       float(g["y_min"]), float(g["y_max"]), int(g["ny"]))
    q = sections["qubit"]
    return ChannelSet(grid=grid, energies=sections["spectrum"]["energies"],
                      states=sections["spectrum"]["states"],
                      qubit_transform=q["transform"],
                      tunnel_splitting=float(q["tunnel_splitting"]),
                      rabi_period=float(q["rabi_period"]))


def _potential_sections(pot: ChannelPotential) -> dict:
    g = pot.grid
    return {
        "grid": {"x_min": g.x_min, "x_max": g.x_max, "n": g.n},
        "pot": {"diag": pot.diag, "offdiag": pot.offdiag,
                "channel_energies": pot.channel_energies,
                "pairs": np.asarray(pot.pairs, dtype=np.int64),
                "qubit_basis": int(pot.basis_tag == BASIS_QUBIT)},
    }


def _potential_from(sections: dict) -> ChannelPotential:
    g = sections["grid"]
    grid = make_grid(float(g["x_min"]), float(g["x_max"]), int(g["n"]))
    p = sections["pot"]
    tag = BASIS_QUBIT if int(p["qubit_basis"]) else BASIS_ENERGY
    pairs = [(int(i), int(j)) for i, j in np.atleast_2d(p["pairs"])]
    return ChannelPotential(grid=grid, diag=p["diag"], offdiag=p["offdiag"],
                            channel_energies=p["channel_energies"],
                            basis_tag=tag, pairs=pairs)


def _kraus_sections(kr: KrausSet) -> dict:
    return {
        "lattice": {"p": kr.p, "dp": kr.dp, "p0": kr.p0,
                    "p0_index": kr.p0_index},
        "operators": {"a": kr.a, "spectrum": kr.spectrum},
        "scalars": {"defect": kr.defect, "leakage": kr.leakage,
                    "inelastic_fraction": kr.inelastic_fraction,
                    "residual_window": kr.residual_window,
                    "e_ref": kr.e_ref, "mean_energy": kr.mean_energy,
                    "sigma_k": kr.sigma_k,
                    "interaction_time": kr.interaction_time},
    }


def _kraus_from(sections: dict) -> KrausSet:
    lat = sections["lattice"]
    ops = sections["operators"]
    sc = sections["scalars"]
    return KrausSet(p=lat["p"], dp=float(lat["dp"]), a=ops["a"],
                    spectrum=ops["spectrum"], p0=float(lat["p0"]),
                    p0_index=int(lat["p0_index"]),
                    defect=float(sc["defect"]), leakage=float(sc["leakage"]),
                    inelastic_fraction=float(sc["inelastic_fraction"]),
                    residual_window=float(sc["residual_window"]),
                    e_ref=float(sc["e_ref"]),
                    mean_energy=float(sc["mean_energy"]),
                    sigma_k=float(sc["sigma_k"]),
                    interaction_time=float(sc["interaction_time"]))


def _load_or_build(ctx: RunContext, path: Path, loader, builder,
                   sections_of):
    """Return the cached object at ``path`` or build and cache it.

    A snapshot that fails its checksum is reported and recomputed rather
    than trusted.
    """
    if path.exists() and not ctx.force:
        try:
            return loader(load_snapshot(path))
        except SnapshotError as exc:
            warnings.warn(f"cache rejected, recomputing: {exc}")
    obj = builder()
    ctx.cache.mkdir(parents=True, exist_ok=True)
    save_snapshot(path, sections_of(obj))
    return obj


# -------------------------------------------------------- text artifacts

def _fmt(value: float) -> str:
    """Fixed scientific notation, 17 significant digits."""
    return format(value, ".16e")


def write_kraus_text(path, kraus: KrausSet, energy_mev: float,
                     energy_spread: float) -> None:
    """Plain-text measurement-operator artifact, one momentum per row."""
    n_pts, n_ch, _ = kraus.a.shape
    lines = [
        "# momentum-resolved measurement operators for one pump cycle",
        "# data rows: p weight Re(A[0,0]) Im(A[0,0]) Re(A[0,1]) ... "
        "row-major over (channel, prepared state)",
        f"energy_meV {_fmt(energy_mev)}",
        f"energy_spread {_fmt(energy_spread)}",
        f"n_momenta {n_pts}",
        f"n_channels {n_ch}",
        f"dp {_fmt(kraus.dp)}",
        f"p0 {_fmt(kraus.p0)}",
        f"defect {_fmt(kraus.defect)}",
        f"leakage {_fmt(kraus.leakage)}",
        f"mean_energy {_fmt(kraus.mean_energy)}",
        f"interaction_time {_fmt(kraus.interaction_time)}",
    ]
    for k in range(n_pts):
        vals = [_fmt(kraus.p[k]), _fmt(kraus.spectrum[k])]
        for row in kraus.a[k]:
            for entry in row:
                vals.append(_fmt(entry.real))
                vals.append(_fmt(entry.imag))
        lines.append(" ".join(vals))
    Path(path).write_text("\n".join(lines) + "\n")


def read_kraus_text(path) -> dict:
    """Parse a kraus text artifact back into arrays."""
    header = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0][0].isalpha():
            header[parts[0]] = parts[1]
        else:
            rows.append([float(v) for v in parts])
    n_ch = int(header["n_channels"])
    arr = np.asarray(rows, dtype=float)
    a = (arr[:, 2::2] + 1j * arr[:, 3::2]).reshape(len(rows), n_ch, 2)
    return {"header": header, "p": arr[:, 0], "weight": arr[:, 1], "a": a}


def _write_csv(path, header: str, rows) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(format(float(v), ".17g") for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def _read_csv(path) -> tuple[list, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    data = np.asarray([[float(v) for v in line.split(",")]
                       for line in lines[1:]], dtype=float)
    return lines[0].split(","), data


# ----------------------------------------------------------------- stages

@contextmanager
def _timed(ctx: RunContext, name: str):
    t0 = time.perf_counter()
    yield
    ctx.timings[name] = round(time.perf_counter() - t0, 3)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _spec_grid(cfg: RunConfig, model, quoted: float, spread: float):
    """Wavepacket spec and the grid size its run needs.

    The interaction window is not known before the potential exists, so
    it is bounded by the barrier span and the monopole tail crossing of
    the coupling floor; the grid must also resolve that tail down to the
    0.01 meV level the coupling assembly checks for.
    """
    spec = cfg.wavepacket(quoted, spread)
    half_win = max(cfg.r + 5.0 * cfg.s,
                   model.coulomb_coeff / cfg.coupling_floor) + 2.0 * cfg.dx
    n = grid_for(spec, -half_win, half_win, model, dx=cfg.dx).n
    far = 0.6 * model.coulomb_coeff / 0.01
    while 0.5 * n * cfg.dx < far:
        n *= 2
    return spec, n


def _scan_grid_ns(cfg: RunConfig, model) -> set:
    return {_spec_grid(cfg, model, float(q), cfg.scan_delta_e)[1]
            for q in cfg.scan_energies()}


def _protocol_grid_ns(cfg: RunConfig, model) -> set:
    return {_spec_grid(cfg, model, q, s)[1] for q, s in cfg.protocol_blocks()}


def stage_dot(ctx: RunContext) -> ChannelSet:
    cfg = ctx.cfg
    model, geom = cfg.physical_model(), cfg.geometry()
    path = ctx.cache / f"dot_{_digest16(_blob(cfg, _DOT_FIELDS))}.qprs"

    def build():
        _log(f"[dot] solving {cfg.n_channels} states on "
             f"{cfg.dot_points}^2 points")
        grid = default_dot_grid(cfg.dot_points, cfg.dot_half_extent)
        cs = solve_dot_eigenstates(geom, model, grid,
                                   n_states=cfg.n_channels)
        return build_qubit_basis(cs)

    with _timed(ctx, "dot"):
        cs = _load_or_build(ctx, path, _channelset_from, build,
                            _channelset_sections)
    ortho = float(np.abs(cs.overlap_matrix()
                         - np.eye(cs.n_states)).max())
    ctx.notes["dot"] = {
        "channel_energies_meV": [float(e) for e in cs.energies],
        "tunnel_splitting_meV": float(cs.tunnel_splitting),
        "rabi_period": float(cs.rabi_period),
        "orthonormality_defect": ortho,
        "cache": path.name,
    }
    return cs


def stage_couplings(ctx: RunContext, cs: ChannelSet, grid_ns) -> dict:
    cfg = ctx.cfg
    model, geom = cfg.physical_model(), cfg.geometry()
    pots = {}
    notes = ctx.notes.setdefault("couplings", {})
    with _timed(ctx, "couplings"):
        for n in sorted(grid_ns):
            blob = _blob(cfg, _DOT_FIELDS) + f"\ngrid n={n} dx={cfg.dx!r}"
            path = ctx.cache / f"pot_n{n}_{_digest16(blob)}.qprs"

            def build(n=n):
                _log(f"[couplings] assembling channel potential on "
                     f"n={n} points")
                half = 0.5 * n * cfg.dx
                return channel_coupling(cs, make_grid(-half, half, n),
                                        geom, model)

            pots[n] = _load_or_build(ctx, path, _potential_from, build,
                                     _potential_sections)
            notes[str(n)] = {"cache": path.name}
    return pots


def stage_scan(ctx: RunContext, cs: ChannelSet, pots: dict) -> list:
    cfg = ctx.cfg
    model, geom = cfg.physical_model(), cfg.geometry()
    stepper = cfg.stepper()
    quoted = [float(q) for q in cfg.scan_energies()]
    blob = (_blob(cfg, _DOT_FIELDS + ("energy_offset", "dx"))
            + "\n" + _blob(cfg, _STEP_FIELDS)
            + "\n" + _blob(cfg, ("scan_start", "scan_stop", "scan_step",
                                 "scan_delta_e")))
    path = ctx.cache / f"scan_{_digest16(blob)}.qprs"

    def build():
        groups: dict = {}
        for q in quoted:
            groups.setdefault(_spec_grid(cfg, model, q, cfg.scan_delta_e)[1],
                              []).append(q)
        results = {}
        for n in sorted(groups):
            qs = groups[n]
            _log(f"[scan] {len(qs)} energies on n={n} points, "
                 f"threads={ctx.threads}")
            rows = transmission_scan([cfg.longitudinal(q) for q in qs],
                                     cfg.scan_delta_e, pots[n], geom, model,
                                     transform=cs.qubit_transform,
                                     stepper=stepper, threads=ctx.threads)
            for q, row in zip(qs, rows):
                results[q] = (q, float(row[1]), float(row[2]),
                              float(row[3]), float(row[4]))
        return np.asarray([results[q] for q in quoted])

    with _timed(ctx, "scan"):
        table = _load_or_build(ctx, path, lambda s: s["scan"]["rows"], build,
                               lambda arr: {"scan": {"rows": arr}})
    out_rows = [tuple(float(v) for v in row) for row in table]
    _write_csv(ctx.out / "scan.csv", SCAN_HEADER, out_rows)
    ctx.notes["scan"] = {
        "rows": len(out_rows),
        "max_defect": max(r[3] for r in out_rows),
        "max_leakage": max(r[4] for r in out_rows),
    }
    return out_rows


def stage_kraus(ctx: RunContext, cs: ChannelSet, pots: dict) -> list:
    cfg = ctx.cfg
    model, geom = cfg.physical_model(), cfg.geometry()
    stepper = cfg.stepper()
    blocks = cfg.protocol_blocks()
    jobs: dict = {}
    for quoted, spread in blocks:
        if (quoted, spread) in jobs:
            continue
        spec, n = _spec_grid(cfg, model, quoted, spread)
        blob = (_blob(cfg, _DOT_FIELDS + ("energy_offset", "dx"))
                + "\n" + _blob(cfg, _STEP_FIELDS)
                + f"\nkraus E={quoted!r} dE={spread!r} n={n}")
        path = ctx.cache / f"kraus_{_tag(quoted, spread)}_{_digest16(blob)}.qprs"
        jobs[(quoted, spread)] = (spec, n, path)

    def run_job(item):
        (quoted, spread), (spec, n, path) = item

        def build():
            _log(f"[kraus] E={quoted:g} meV, dE/E={spread:g}, n={n}")
            return paired_runs(spec, pots[n], geom, model,
                               transform=cs.qubit_transform,
                               stepper=stepper)

        return _load_or_build(ctx, path, _kraus_from, build,
                              _kraus_sections)

    with _timed(ctx, "kraus"):
        items = list(jobs.items())
        if ctx.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(
                    max_workers=min(ctx.threads, len(items))) as pool:
                done = list(pool.map(run_job, items))
        else:
            done = [run_job(it) for it in items]
    by_block = {key: kr for (key, _job), kr in zip(items, done)}

    notes = ctx.notes.setdefault("kraus", {})
    for (quoted, spread), (_spec, n, path) in jobs.items():
        kr = by_block[(quoted, spread)]
        tag = _tag(quoted, spread)
        write_kraus_text(ctx.out / f"kraus_{tag}.txt", kr, quoted, spread)
        notes[tag] = {
            "defect": float(kr.defect),
            "leakage": float(kr.leakage),
            "inelastic_fraction": float(kr.inelastic_fraction),
            "residual_window": float(kr.residual_window),
            "interaction_time": float(kr.interaction_time),
            "n_momenta": int(kr.p.size),
            "grid_points": n,
            "cache": path.name,
        }
    return [((q, s), by_block[(q, s)]) for q, s in blocks]


def stage_protocol(ctx: RunContext, cs: ChannelSet, kraus_blocks) -> None:
    cfg = ctx.cfg
    notes = ctx.notes.setdefault("protocol", {})
    with _timed(ctx, "protocol"):
        per_cycle = max(kr.interaction_time for _, kr in kraus_blocks)
        ratio = measurement_window_ratio(cs, cfg.n_cycles, per_cycle)
        notes["measurement_window_ratio"] = float(ratio)
        if ratio >= 1.0:
            msg = (f"protocol duration breaches the measurement window: "
                   f"{cfg.n_cycles} cycles of {per_cycle:.6g} time units "
                   f"against T_Rabi/20 = {cs.rabi_period / 20.0:.6g}")
            if cfg.strict_window:
                raise ConfigError(msg)
            warnings.warn(msg)
        for (quoted, spread), kr in kraus_blocks:
            mmap = build_povm(kr)
            policy = build_feedback_policy(kr)
            rows = protocol_series(mmap, policy, cfg.n_cycles,
                                   rederive_each_cycle=cfg.rederive_each_cycle)
            tag = _tag(quoted, spread)
            _log(f"[protocol] {tag}: F_fb({cfg.n_cycles}) = {rows[-1][1]:.3e}")
            _write_csv(ctx.out / f"protocol_{tag}.csv", PROTOCOL_HEADER, rows)
            notes[tag] = {
                "povm_defect": float(mmap.defect),
                "F_feedback_final": float(rows[-1][1]),
                "F_nofeedback_final": float(rows[-1][2]),
                "max_ledger_drift": float(max(r[3] for r in rows)),
            }


def stage_report(ctx: RunContext) -> None:
    rendered = []
    with _timed(ctx, "report"):
        scan_path = ctx.out / "scan.csv"
        if scan_path.exists():
            _, data = _read_csv(scan_path)
            report.render_transmission(data, ctx.out / "transmission.png")
            rendered.append("transmission.png")
        blocks = []
        for quoted, spread in ctx.cfg.protocol_blocks():
            path = ctx.out / f"protocol_{_tag(quoted, spread)}.csv"
            if path.exists():
                _, data = _read_csv(path)
                label = f"{quoted:g} meV, $\\Delta E/E$ {100 * spread:g}%"
                blocks.append((label, data))
        if blocks:
            report.render_protocol(blocks, ctx.out / "protocol.png")
            rendered.append("protocol.png")
    if not rendered:
        raise FileNotFoundError(
            "no scan.csv or protocol_*.csv under the output directory; "
            "run the scan or protocol command first")
    ctx.notes["report"] = {"figures": rendered}


# --------------------------------------------------------------- commands

def _cmd_dot_solve(ctx: RunContext) -> None:
    stage_dot(ctx)


def _cmd_couplings(ctx: RunContext) -> None:
    model = ctx.cfg.physical_model()
    cs = stage_dot(ctx)
    ns = _scan_grid_ns(ctx.cfg, model) | _protocol_grid_ns(ctx.cfg, model)
    stage_couplings(ctx, cs, ns)


def _cmd_scan(ctx: RunContext) -> None:
    cs = stage_dot(ctx)
    pots = stage_couplings(ctx, cs,
                           _scan_grid_ns(ctx.cfg, ctx.cfg.physical_model()))
    stage_scan(ctx, cs, pots)


def _cmd_kraus(ctx: RunContext) -> None:
    cs = stage_dot(ctx)
    pots = stage_couplings(
        ctx, cs, _protocol_grid_ns(ctx.cfg, ctx.cfg.physical_model()))
    stage_kraus(ctx, cs, pots)


def _cmd_protocol(ctx: RunContext) -> None:
    cs = stage_dot(ctx)
    pots = stage_couplings(
        ctx, cs, _protocol_grid_ns(ctx.cfg, ctx.cfg.physical_model()))
    kraus_blocks = stage_kraus(ctx, cs, pots)
    stage_protocol(ctx, cs, kraus_blocks)


def _cmd_all(ctx: RunContext) -> None:
    model = ctx.cfg.physical_model()
    cs = stage_dot(ctx)
    ns = _scan_grid_ns(ctx.cfg, model) | _protocol_grid_ns(ctx.cfg, model)
    pots = stage_couplings(ctx, cs, ns)
    stage_scan(ctx, cs, pots)
    kraus_blocks = stage_kraus(ctx, cs, pots)
    stage_protocol(ctx, cs, kraus_blocks)
    stage_report(ctx)


def _cmd_report(ctx: RunContext) -> None:
    stage_report(ctx)


_COMMANDS = {
    "dot-solve": (_cmd_dot_solve, "solve the double-dot eigenproblem"),
    "couplings": (_cmd_couplings, "assemble channel potentials"),
    "scan": (_cmd_scan, "transmission vs pump energy to scan.csv"),
    "kraus": (_cmd_kraus, "extract measurement operators per block"),
    "protocol": (_cmd_protocol, "run the measure/feedback cycle series"),
    "all": (_cmd_all, "full pipeline plus figures"),
    "report": (_cmd_report, "render figures from existing CSV output"),
}


# --------------------------------------------------------------- manifest

def _versions() -> dict:
    out = {"pumpreadout": __version__,
           "python": platform.python_version()}
    for dist in ("numpy", "scipy", "matplotlib"):
        try:
            out[dist] = importlib.metadata.version(dist)
        except importlib.metadata.PackageNotFoundError:
            out[dist] = "absent"
    return out


def _write_outputs(ctx: RunContext) -> None:
    # timings go first so the manifest inventory can list the sidecar
    (ctx.out / "timings.json").write_text(
        json.dumps(ctx.timings, indent=2, sort_keys=True) + "\n")
    inventory = {}
    for item in sorted(ctx.out.rglob("*")):
        if not item.is_file():
            continue
        rel = item.relative_to(ctx.out).as_posix()
        if rel in _UNDIGESTED:
            inventory[rel] = None
        else:
            inventory[rel] = hashlib.sha256(item.read_bytes()).hexdigest()
    inventory["manifest.json"] = None
    manifest = {
        "config": config_text(ctx.cfg),
        "notes": ctx.notes,
        "outputs": inventory,
        "undigested": dict(_UNDIGESTED),
        "versions": _versions(),
        "warnings": sorted(set(ctx.warnings_seen)),
    }
    (ctx.out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n")


@contextmanager
def _collect_warnings(ctx: RunContext):
    with warnings.catch_warnings(record=True) as record:
        warnings.simplefilter("always")
        yield
    for item in record:
        msg = f"{item.category.__name__}: {item.message}"
        ctx.warnings_seen.append(msg)
        _log(f"warning: {msg}")


# ------------------------------------------------------------ entry point

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pumpreadout",
        description="single-electron-pump readout pipeline for a "
                    "double-dot charge qubit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, default=None,
                       help="configuration file (defaults are built in)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory (default: ./out)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for independent runs")
        p.add_argument("--force", action="store_true",
                       help="recompute even when cached snapshots exist")
    return parser


def _run_command(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    validate_config(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ctx = RunContext(cfg, out, max(1, args.threads), args.force)
    (out / "config.txt").write_text(config_text(cfg))
    with _collect_warnings(ctx):
        _COMMANDS[args.command][0](ctx)
    _write_outputs(ctx)
    _log(f"[done] outputs under {out}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _run_command(args)
    except (ConfigError, InvalidParameterError) as exc:
        _log(f"configuration error: {exc}")
        return 2
    except ConvergenceError as exc:
        _log(f"convergence failure: {exc}")
        return 3
    except (SnapshotError, OSError) as exc:
        _log(f"i/o error: {exc}")
        return 4


if __name__ == "__main__":
    sys.exit(main())
