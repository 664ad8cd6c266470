"""Command-line pipeline: build, evolve, waveops, smatrix, dyson, converge.

Every run is driven by one TOML configuration file and writes plain-text
reports plus comma-separated tables into the output directory, together
with ``manifest.json`` recording the resolved configuration, library
versions, per-stage wall-clock, and a SHA-256 digest of every emitted
file.  Reports and tables are bit-reproducible for a fixed configuration;
only the manifest carries timing data.

Exit status is nonzero when any certification flag failed (wave-operator
non-convergence, a non-certified double-limit study, or a horizon study
without a horizon).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy

from . import __version__
from .config import ConfigError, ObservableConfig, RunConfig, load_config
from .convergence import (
    ObservableFamily,
    Refinement,
    double_limit_study,
    horizon_study,
)
from .dyson import (
    InteractionPictureGenerator,
    default_damping,
    propagator_interaction_picture,
    scattering_matrix_damped,
    smatrix_first_order,
    time_ordered_exponential,
)
from .evolution import Propagator
from .hamiltonian import RegularizedHamiltonian, ground_state_check
from .linalg import max_abs
from .scattering import (
    compute_wave_operators,
    intertwining_defect,
    scattering_operator,
)

STAGES = ("build", "evolve", "waveops", "smatrix", "dyson", "converge")

_STAGE_DEPS = {
    "build": ("build",),
    "evolve": ("build", "evolve"),
    "waveops": ("build", "waveops"),
    "smatrix": ("build", "waveops", "smatrix"),
    "dyson": ("build", "dyson"),
    "converge": ("build", "converge"),
}


def _fmt(x) -> str:
    """Deterministic scalar formatting (shortest round-trip repr)."""
    if isinstance(x, (np.floating, float)):
        return repr(float(x))
    if isinstance(x, (np.complexfloating, complex)):
        return repr(complex(x))
    if isinstance(x, (np.integer, int)):
        return str(int(x))
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(x) for x in row))
    path.write_text("\n".join(lines) + "\n")


def _write_report(path: Path, lines: list[str]) -> None:
    path.write_text("\n".join(lines) + "\n")


@dataclass
class RunManifest:
    command: str
    config: dict
    versions: dict
    stage_seconds: dict
    outputs: dict
    certified: bool

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)


class _PipelineContext:
    """Objects shared between the stages of one run."""

    def __init__(self, cfg: RunConfig, out_dir: Path, workers: int):
        self.cfg = cfg
        self.out = out_dir
        self.workers = max(1, workers)
        self.h: Optional[RegularizedHamiltonian] = None
        self.prop: Optional[Propagator] = None
        self.wave = None
        self.failures: list[str] = []
        self.outputs: list[Path] = []

    def emit_csv(self, name: str, header, rows):
        path = self.out / name
        _write_csv(path, header, rows)
        self.outputs.append(path)

    def emit_report(self, name: str, lines):
        path = self.out / name
        _write_report(path, lines)
        self.outputs.append(path)

    def propagator(self) -> Propagator:
        if self.prop is None:
            cfg = self.cfg
            method = cfg.evolution_method
            if method == "auto":
                method = "dense-exponential" if self.h.dim <= 400 else "krylov-step"
            self.prop = Propagator(
                self.h.full, method=method, tolerance=cfg.evolution_tolerance
            )
        return self.prop


def _stage_build(ctx: _PipelineContext) -> None:
    cfg = ctx.cfg
    ctx.h = cfg.build_hamiltonian()
    h = ctx.h
    basis = h.basis
    lines = [
        "stage: build",
        f"particles: {', '.join(basis.system.particles)}",
        f"grid: dimension={cfg.grid_dimension} cutoff={_fmt(cfg.grid_cutoff)} "
        f"spacing={_fmt(cfg.grid_spacing)} points={len(basis.grid.points)}",
        f"basis: dim={basis.dim} max_quanta={basis.n_max_quanta} "
        f"energy_cap={_fmt(basis.energy_cap) if basis.energy_cap is not None else 'none'}",
        f"interaction: rank={h.interaction_rank} vertices={len(h.spec.all_vertices())}",
        f"interaction_max_entry: {_fmt(max_abs(h.v_block))}",
        f"max_free_energy: {_fmt(float(basis.energies.max()))}",
    ]
    if h.dim <= 400:
        gs = ground_state_check(h)
        lines += [
            f"vacuum_energy: {_fmt(gs.vacuum_energy)}",
            f"vacuum_defect: {_fmt(gs.vacuum_defect)}",
            f"lowest_eigenvalue: {_fmt(gs.lowest_eigenvalue)}",
            f"vacuum_is_eigenvector: {gs.vacuum_is_eigenvector}",
        ]
    ctx.emit_report("build_report.txt", lines)
    rows = [
        [i, basis.energies[i], " ".join(str(n) for n in state)]
        for i, state in enumerate(basis.states)
    ]
    ctx.emit_csv("basis_states.csv", ["index", "energy", "occupations"], rows)


def _stage_evolve(ctx: _PipelineContext) -> None:
    cfg = ctx.cfg
    h = ctx.h
    prop = ctx.propagator()
    basis = h.basis
    probes = {}
    if h.dim > 1:
        probes["first_excited"] = np.eye(h.dim, dtype=complex)[:, 1]
    uniform = np.ones(h.dim, dtype=complex)
    uniform[0] = 0.0
    uniform /= np.linalg.norm(uniform)
    probes["uniform_ac"] = uniform
    times = cfg.study_time_grid()[:: max(1, int(len(cfg.study_time_grid()) / 200))]
    rows = []
    worst_norm = 0.0
    worst_energy = 0.0
    dense_h = h.full
    for t in times:
        row = [t]
        for name, v in probes.items():
            vt = prop.apply(v, float(t))
            norm_err = abs(np.linalg.norm(vt) - 1.0)
            e0 = float(np.real(np.vdot(v, dense_h @ v)))
            et = float(np.real(np.vdot(vt, dense_h @ vt)))
            energy_err = abs(et - e0)
            worst_norm = max(worst_norm, norm_err)
            worst_energy = max(worst_energy, energy_err)
            row += [norm_err, energy_err]
        rows.append(row)
    header = ["t"]
    for name in probes:
        header += [f"norm_defect_{name}", f"energy_drift_{name}"]
    ctx.emit_csv("evolution.csv", header, rows)
    ctx.emit_report(
        "evolve_report.txt",
        [
            "stage: evolve",
            f"method: {prop.method}",
            f"tolerance: {_fmt(cfg.evolution_tolerance)}",
            f"times: {len(times)} up to {_fmt(float(times[-1]))}",
            f"worst_norm_defect: {_fmt(worst_norm)}",
            f"worst_energy_drift: {_fmt(worst_energy)}",
        ],
    )
    if worst_norm > 1e-9:
        ctx.failures.append(f"evolution norm defect {worst_norm:.3e} > 1e-9")


def _stage_waveops(ctx: _PipelineContext) -> None:
    cfg = ctx.cfg
    h = ctx.h
    if cfg.waveop_method == "time-plateau":
        wave = compute_wave_operators(
            h,
            method="time-plateau",
            time_grid=cfg.waveop_time_grid(),
            window=cfg.waveop_window,
            tol=cfg.waveop_tolerance,
        )
    else:
        wave = compute_wave_operators(
            h,
            method="adiabatic",
            eps_sequence=cfg.waveop_eps_sequence,
            s_max_factor=cfg.waveop_s_max_factor,
            prop=ctx.propagator(),
        )
    ctx.wave = wave
    inter = intertwining_defect(h, wave)
    lines = [
        "stage: waveops",
        f"method: {wave.method}",
        f"converged: {wave.converged}",
        f"plateau_time: {_fmt(wave.plateau_time) if wave.plateau_time is not None else 'n/a'}",
        f"isometry_defect: {_fmt(wave.isometry_defect)}",
        f"intertwining_defect: {_fmt(inter)}",
        f"damping_sequence: {list(wave.damping_sequence) if wave.damping_sequence else 'n/a'}",
        f"recurrence_time: {_fmt(wave.recurrence_time) if wave.recurrence_time is not None else 'none'}",
    ]
    ctx.emit_report("waveops_report.txt", lines)
    if wave.times is not None:
        rows = [[t, d] for t, d in zip(wave.times, wave.drifts)]
        ctx.emit_csv("plateau_drift.csv", ["t", "max_column_drift"], rows)
    if not wave.converged:
        ctx.failures.append("wave operators did not converge")


def _stage_smatrix(ctx: _PipelineContext) -> None:
    h = ctx.h
    rep = scattering_operator(ctx.wave, ctx.wave)
    angles = rep.range_principal_angles
    lines = [
        "stage: smatrix",
        f"unitarity_defect: {_fmt(rep.unitarity_defect)}",
        f"vacuum_persistence: {_fmt(rep.vacuum_persistence)}",
        f"max_channel_probability: {_fmt(rep.max_channel_probability)}",
        f"max_range_principal_angle: {_fmt(float(angles.max()) if angles.size else 0.0)}",
    ]
    ctx.emit_report("smatrix_report.txt", lines)
    e = h.energies
    s = rep.s_matrix
    rows = []
    for j in range(h.dim):
        for i in range(h.dim):
            amp = s[i, j]
            prob = abs(amp) ** 2
            if prob > 1e-14:
                rows.append([j, i, e[j], e[i], prob, amp.real, amp.imag])
    ctx.emit_csv(
        "channels.csv",
        ["in_index", "out_index", "in_energy", "out_energy", "probability",
         "amplitude_re", "amplitude_im"],
        rows,
    )


def _stage_dyson(ctx: _PipelineContext) -> None:
    cfg = ctx.cfg
    h = ctx.h
    gen = InteractionPictureGenerator(h)
    t, tp = cfg.dyson_time, cfg.dyson_time_prime
    exact = propagator_interaction_picture(h, t, tp, prop=ctx.propagator())
    expansion = time_ordered_exponential(
        gen, t, tp, order=cfg.dyson_order, nodes=cfg.dyson_nodes,
        cube_spot_order=2 if cfg.dyson_order >= 2 else None,
    )
    rows = [
        [k, max_abs(exact - expansion.partial_sums[k])]
        for k in range(cfg.dyson_order + 1)
    ]
    ctx.emit_csv("dyson_orders.csv", ["order", "error_vs_exact"], rows)
    eps = cfg.dyson_damping if cfg.dyson_damping is not None else default_damping(h)
    s_damped = scattering_matrix_damped(h, eps, prop=ctx.propagator(),
                                        s_max_factor=cfg.waveop_s_max_factor)
    born = smatrix_first_order(h, eps)
    off = ~np.eye(h.dim, dtype=bool)
    lines = [
        "stage: dyson",
        f"interval: t={_fmt(t)} t_prime={_fmt(tp)}",
        f"orders: {cfg.dyson_order} nodes_per_level: {cfg.dyson_nodes}",
        f"final_error: {_fmt(rows[-1][1])}",
        f"damping: {_fmt(eps)}",
        f"damped_vs_born_offdiag: {_fmt(max_abs((s_damped - np.eye(h.dim) - born)[off]))}",
    ]
    if expansion.cube_spot_value is not None:
        lines.append(
            "cube_spot_defect: "
            f"{_fmt(max_abs(expansion.cube_spot_value - expansion.terms[2]))}"
        )
    ctx.emit_report("dyson_report.txt", lines)


def _observable_families(
    cfg: RunConfig, pipeline: Callable
) -> list[ObservableFamily]:
    fams = []
    for obs in cfg.study_observables:
        fams.append(_make_family(obs, pipeline))
    if not fams:
        fams.append(
            ObservableFamily(
                "ground_energy",
                lambda n, r: complex(
                    np.linalg.eigvalsh(pipeline(n, r)[0].dense())[0]
                ),
            )
        )
    return fams


def _occupation_index(basis, occupation) -> int:
    occ = [0] * len(basis.slots)
    for particle, ivec, count in occupation:
        occ[basis.slot_position(particle, ivec)] = count
    return basis.index(tuple(occ))


def _make_family(obs: ObservableConfig, pipeline: Callable) -> ObservableFamily:
    if obs.kind == "smatrix_element":

        def evaluate(n, r):
            h, wres, rep = pipeline(n, r)
            i_out = _occupation_index(h.basis, obs.bra)
            i_in = _occupation_index(h.basis, obs.ket)
            return complex(rep.s_matrix[i_out, i_in])

    elif obs.kind == "level":

        def evaluate(n, r):
            h, _wres, _rep = pipeline(n, r)
            lam = np.linalg.eigvalsh(h.dense())
            return complex(lam[np.argmin(np.abs(lam - obs.energy))])

    else:  # intertwining_defect

        def evaluate(n, r):
            h, wres, _rep = pipeline(n, r)
            return complex(intertwining_defect(h, wres))

    return ObservableFamily(obs.name, evaluate)


def _stage_converge(ctx: _PipelineContext) -> None:
    cfg = ctx.cfg
    refinements = [
        Refinement(key=f"cutoff={_fmt(c)}", h=1.0 / c, payload=c)
        for c in cfg.study_cutoffs
    ]
    time_grid = cfg.study_time_grid()
    cache: dict = {}

    def evaluate_point(n, cutoff):
        h = cfg.build_hamiltonian(cutoff=cutoff, rank=n)
        wres = compute_wave_operators(
            h, method="time-plateau", time_grid=time_grid,
            window=cfg.waveop_window, tol=cfg.study_tolerance,
        )
        rep = scattering_operator(wres, wres)
        return h, wres, rep

    points = [(n, r.payload) for r in refinements for n in cfg.study_ranks]
    if ctx.workers > 1:
        with ThreadPoolExecutor(max_workers=ctx.workers) as pool:
            for point, value in zip(points, pool.map(lambda p: evaluate_point(*p), points)):
                cache[point] = value
    else:
        for point in points:
            cache[point] = evaluate_point(*point)

    def pipeline(n, r):
        key = (n, r.payload)
        if key not in cache:
            cache[key] = evaluate_point(*key)
        return cache[key]

    fams = _observable_families(cfg, pipeline)
    report = double_limit_study(
        fams, refinements, cfg.study_ranks, cfg.study_eps, swapped_order=True
    )

    rows = [
        [family, rkey, n, v.real, v.imag]
        for family, rkey, n, v in report.value_table()
    ]
    ctx.emit_csv(
        "study_table.csv",
        ["family", "refinement", "rank", "value_re", "value_im"],
        rows,
    )
    summary_rows = []
    for name in sorted(report.families):
        fam = report.families[name]
        for rkey in report.refinement_keys:
            plateau = fam.inner_plateaus[rkey]
            summary_rows.append(
                [
                    name,
                    rkey,
                    plateau if plateau is not None else "none",
                    report.h_star if report.h_star is not None else "none",
                    fam.outer_estimate.real if fam.outer_estimate is not None else "nan",
                    fam.outer_estimate.imag if fam.outer_estimate is not None else "nan",
                    fam.uncertainty if fam.uncertainty is not None else "nan",
                    fam.quarantined,
                ]
            )
    ctx.emit_csv(
        "plateau_summary.csv",
        ["family", "refinement", "plateau_rank", "h_star",
         "outer_estimate_re", "outer_estimate_im", "uncertainty", "quarantined"],
        summary_rows,
    )
    lines = [
        "stage: converge",
        f"eps: {_fmt(cfg.study_eps)}",
        f"certified: {report.certified}",
        f"h_star: {report.h_star}",
    ]
    for name in sorted(report.families):
        fam = report.families[name]
        plateaus = ", ".join(
            f"{k}:{v if v is not None else 'none'}" for k, v in fam.inner_plateaus.items()
        )
        lines.append(f"family {name}: plateaus [{plateaus}] quarantined={fam.quarantined}")
        if fam.outer_estimate is not None:
            lines.append(
                f"  outer_estimate: {_fmt(fam.outer_estimate)} "
                f"uncertainty: {_fmt(fam.uncertainty)}"
            )
        if fam.swapped_estimate is not None:
            lines.append(
                f"  swapped_order_estimate: {_fmt(fam.swapped_estimate)} "
                f"discrepancy: {_fmt(fam.order_discrepancy)}"
            )

    # horizon study on the configured probe states at the finest refinement
    h_full = cache[(cfg.study_ranks[-1], refinements[-1].payload)][0]
    eye = np.eye(h_full.dim, dtype=complex)
    states = [eye[:, j] for j in cfg.horizon_states if j < h_full.dim]
    horizon = horizon_study(
        h_full, states, time_grid, tol=cfg.horizon_tolerance,
        window=cfg.waveop_window,
    )
    lines += [
        f"horizon_tolerance: {_fmt(cfg.horizon_tolerance)}",
        f"horizon_converged: {horizon.converged}",
        f"global_horizon: {_fmt(horizon.global_horizon) if horizon.global_horizon is not None else 'none'}",
        f"recurrence_onset: {_fmt(horizon.recurrence_onset) if horizon.recurrence_onset is not None else 'none'}",
    ]
    ctx.emit_report("converge_report.txt", lines)
    hrows = [
        [j, _fmt(t) if t is not None else "none"]
        for j, t in zip(cfg.horizon_states, horizon.per_state_horizon)
    ]
    ctx.emit_csv("horizon.csv", ["state_index", "horizon_time"], hrows)

    if not report.certified:
        ctx.failures.append("double-limit study not certified")
    if not horizon.converged:
        ctx.failures.append("horizon study did not converge")


_STAGE_FUNCS = {
    "build": _stage_build,
    "evolve": _stage_evolve,
    "waveops": _stage_waveops,
    "smatrix": _stage_smatrix,
    "dyson": _stage_dyson,
    "converge": _stage_converge,
}


def run_pipeline(
    cfg: RunConfig,
    command: str,
    out_dir=None,
    workers: int = 1,
) -> RunManifest:
    """Execute the named stage and its dependencies; write the manifest."""
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}; expected one of {STAGES}")
    out = Path(out_dir) if out_dir is not None else Path(cfg.output_directory)
    out.mkdir(parents=True, exist_ok=True)
    ctx = _PipelineContext(cfg, out, workers)
    timings = {}
    for stage in _STAGE_DEPS[command]:
        start = time.perf_counter()
        try:
            _STAGE_FUNCS[stage](ctx)
        except Exception as exc:
            raise RuntimeError(f"stage {stage!r} failed: {exc}") from exc
        timings[stage] = time.perf_counter() - start
    digests = {
        p.name: hashlib.sha256(p.read_bytes()).hexdigest() for p in ctx.outputs
    }
    manifest = RunManifest(
        command=command,
        config=dataclasses.asdict(cfg),
        versions={
            "fockscatter": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
        stage_seconds=timings,
        outputs=digests,
        certified=not ctx.failures,
    )
    if ctx.failures:
        manifest.config["_certification_failures"] = list(ctx.failures)
    (out / "manifest.json").write_text(manifest.to_json() + "\n")
    return manifest


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fockscatter",
        description="Scattering studies on truncated Fock spaces",
    )
    parser.add_argument("command", choices=STAGES, help="pipeline stage to run")
    parser.add_argument("--config", required=True, help="TOML configuration file")
    parser.add_argument("--out", default=None, help="output directory override")
    parser.add_argument("--workers", type=int, default=1, help="parallel worker cap")
    parser.add_argument(
        "--tol-evolution", type=float, default=None, help="override evolution.tolerance"
    )
    parser.add_argument(
        "--tol-waveops", type=float, default=None,
        help="override wave_operators.tolerance",
    )
    parser.add_argument(
        "--tol-study", type=float, default=None, help="override study.tolerance"
    )
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.tol_evolution is not None:
            overrides["evolution_tolerance"] = args.tol_evolution
        if args.tol_waveops is not None:
            overrides["waveop_tolerance"] = args.tol_waveops
        if args.tol_study is not None:
            overrides["study_tolerance"] = args.tol_study
        if overrides:
            for key, value in overrides.items():
                if value <= 0.0:
                    raise ConfigError(f"--{key.replace('_', '-')} must be positive")
            cfg = dataclasses.replace(cfg, **overrides)
        manifest = run_pipeline(cfg, args.command, out_dir=args.out, workers=args.workers)
    except (ConfigError, RuntimeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"{args.command}: wrote {len(manifest.outputs)} files; certified={manifest.certified}")
    return 0 if manifest.certified else 1


if __name__ == "__main__":
    sys.exit(main())
