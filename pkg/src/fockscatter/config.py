"""Run configuration: strict TOML parsing and validated builders.

One flat configuration file drives every pipeline stage.  Parsing is
strict: any unknown key anywhere in the file is a hard error naming the
full key path, and every tolerance/grid is validated up front.  The parsed
configuration echoes all applied defaults so a run can be reproduced from
its manifest alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

try:
    import tomllib  # Python >= 3.11
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

from .fock import (
    DEFAULT_BASIS_HARD_LIMIT,
    FockBasis,
    ModeGrid,
    ParticleSystem,
    build_mode_grid,
    build_particle_system,
    enumerate_basis,
)
from .hamiltonian import (
    InteractionSpec,
    RegularizedHamiltonian,
    Vertex,
    assemble_regularized,
    mass_counterterm_vertices,
    phi_power_vertices,
    yukawa_vertices,
)

__all__ = ["ConfigError", "RunConfig", "parse_config", "load_config"]


class ConfigError(ValueError):
    """Configuration parse or validation failure, naming the offending key."""


def _check_keys(section: Mapping, allowed: Sequence[str], path: str):
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown configuration key {path}.{key!r}")


def _positive(value, path: str) -> float:
    value = float(value)
    if not (value > 0.0) or not math.isfinite(value):
        raise ConfigError(f"{path} must be strictly positive, got {value}")
    return value


@dataclass(frozen=True)
class VertexConfig:
    family: str
    params: dict


@dataclass(frozen=True)
class ObservableConfig:
    kind: str
    name: str
    bra: tuple = ()
    ket: tuple = ()
    energy: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    """Validated, defaults-filled configuration for one run."""

    particles: dict
    grid_dimension: int
    grid_cutoff: float
    grid_spacing: float
    internal_labels: dict
    max_quanta: int
    energy_cap: Optional[float]
    hard_limit: int
    vertices: tuple[VertexConfig, ...]
    interaction_rank: Optional[int]
    evolution_method: str
    evolution_tolerance: float
    waveop_method: str
    waveop_time_max: float
    waveop_time_step: float
    waveop_window: int
    waveop_tolerance: float
    waveop_eps_sequence: tuple[float, ...]
    waveop_s_max_factor: float
    dyson_order: int
    dyson_nodes: int
    dyson_damping: Optional[float]
    dyson_time: float
    dyson_time_prime: float
    study_ranks: tuple[int, ...]
    study_cutoffs: tuple[float, ...]
    study_eps: float
    study_time_max: float
    study_time_step: float
    study_tolerance: float
    study_observables: tuple[ObservableConfig, ...]
    horizon_states: tuple[int, ...]
    horizon_tolerance: float
    output_directory: str

    # -- builders -------------------------------------------------------

    def build_system(self) -> ParticleSystem:
        return build_particle_system(self.particles)

    def build_grid(self, cutoff: Optional[float] = None) -> ModeGrid:
        return build_mode_grid(
            cutoff if cutoff is not None else self.grid_cutoff,
            self.grid_spacing,
            dimension=self.grid_dimension,
            internal_labels=self.internal_labels or None,
        )

    def build_basis(self, grid: Optional[ModeGrid] = None) -> FockBasis:
        system = self.build_system()
        if grid is None:
            grid = self.build_grid()
        return enumerate_basis(
            system,
            grid,
            self.max_quanta,
            energy_cap=self.energy_cap,
            hard_limit=self.hard_limit,
        )

    def build_interaction(self, system: ParticleSystem, grid: ModeGrid) -> InteractionSpec:
        vertices: list[Vertex] = []
        counterterms: list[Vertex] = []
        couplings: dict[str, float] = {}
        for i, vc in enumerate(self.vertices):
            p = vc.params
            if vc.family == "phi_power":
                made = phi_power_vertices(
                    system, grid, p["particle"], int(p["power"]), float(p["coupling"]),
                    channels=p.get("channels"),
                )
                vertices.extend(made)
                couplings[f"phi_power[{i}].coupling"] = float(p["coupling"])
            elif vc.family == "yukawa":
                made = yukawa_vertices(
                    system, grid, p["boson"], p["fermion"], float(p["coupling"])
                )
                vertices.extend(made)
                couplings[f"yukawa[{i}].coupling"] = float(p["coupling"])
            elif vc.family == "mass_counterterm":
                made = mass_counterterm_vertices(
                    system, grid, p["particle"], float(p["delta"])
                )
                counterterms.extend(made)
                couplings[f"mass_counterterm[{i}].delta"] = float(p["delta"])
            elif vc.family == "custom":
                vertices.append(_custom_vertex(vc, i, self.grid_spacing))
            else:  # pragma: no cover - rejected at parse time
                raise ConfigError(f"unknown vertex family {vc.family!r}")
        return InteractionSpec(
            vertices=tuple(vertices),
            couplings=couplings,
            counterterms=tuple(counterterms),
        )

    def build_hamiltonian(
        self, cutoff: Optional[float] = None, rank: Optional[int] = None
    ) -> RegularizedHamiltonian:
        system = self.build_system()
        grid = self.build_grid(cutoff)
        basis = enumerate_basis(
            system, grid, self.max_quanta,
            energy_cap=self.energy_cap, hard_limit=self.hard_limit,
        )
        spec = self.build_interaction(system, grid)
        if rank is None:
            rank = self.interaction_rank
        if rank is None:
            rank = basis.dim
        rank = min(rank, basis.dim)
        return assemble_regularized(spec, basis, rank)

    def waveop_time_grid(self):
        import numpy as np

        return np.arange(
            self.waveop_time_step, self.waveop_time_max + 0.5 * self.waveop_time_step,
            self.waveop_time_step,
        )

    def study_time_grid(self):
        import numpy as np

        return np.arange(
            self.study_time_step, self.study_time_max + 0.5 * self.study_time_step,
            self.study_time_step,
        )


_VERTEX_KEYS = {
    "phi_power": ("family", "particle", "power", "coupling", "channels"),
    "yukawa": ("family", "boson", "fermion", "coupling"),
    "mass_counterterm": ("family", "particle", "delta"),
    "custom": ("family", "name", "legs", "momentum_conserving", "kernel"),
}

_OBSERVABLE_KEYS = {
    "smatrix_element": ("kind", "name", "bra", "ket"),
    "level": ("kind", "name", "energy"),
    "intertwining_defect": ("kind", "name"),
}


def _custom_vertex(vc: VertexConfig, index: int, spacing: float) -> Vertex:
    """Vertex from symbolic legs and an inline kernel table over momenta.

    Table entries are keyed by per-leg momentum index vectors (grid units)
    and optional labels; assignments absent from the table are zero.
    """
    p = vc.params
    name = str(p.get("name", f"custom[{index}]"))
    legs_raw = p.get("legs")
    if not legs_raw:
        raise ConfigError(f"interaction.vertices[{index}].legs is required")
    legs = tuple((str(particle), str(kind)) for particle, kind in legs_raw)
    conserving = bool(p.get("momentum_conserving", False))
    table: dict[tuple, complex] = {}
    for j, entry in enumerate(p.get("kernel", [])):
        where = f"interaction.vertices[{index}].kernel[{j}]"
        _check_keys(entry, ("momenta", "labels", "value"), where)
        momenta = entry.get("momenta")
        if momenta is None or len(momenta) != len(legs):
            raise ConfigError(f"{where}.momenta must list one entry per leg")
        key_m = tuple(
            tuple(int(c) for c in ([m] if isinstance(m, int) else m)) for m in momenta
        )
        labels = entry.get("labels")
        key_l = tuple(str(l) for l in labels) if labels is not None else ("",) * len(legs)
        value = entry.get("value")
        if isinstance(value, (list, tuple)):
            if len(value) != 2:
                raise ConfigError(f"{where}.value must be a number or [re, im]")
            value = complex(float(value[0]), float(value[1]))
        else:
            value = complex(float(value))
        table[(key_m, key_l)] = value
    if not table:
        raise ConfigError(f"interaction.vertices[{index}].kernel table is empty")

    def kernel(leg_modes):
        key_m = tuple(
            tuple(int(round(c / spacing)) for c in momentum)
            for momentum, _label in leg_modes
        )
        key_l = tuple(label for _momentum, label in leg_modes)
        return table.get((key_m, key_l), 0.0)

    return Vertex(legs=legs, kernel=kernel, momentum_conserving=conserving, name=name)


def _parse_occupation(entries, path: str) -> tuple:
    out = []
    for j, entry in enumerate(entries):
        if not isinstance(entry, (list, tuple)) or len(entry) != 3:
            raise ConfigError(
                f"{path}[{j}] must be [particle, momentum_index_vector, count]"
            )
        particle, ivec, count = entry
        if isinstance(ivec, int):
            ivec = [ivec]
        out.append((str(particle), tuple(int(c) for c in ivec), int(count)))
    return tuple(out)


def parse_config(data: Mapping[str, Any]) -> RunConfig:
    """Validate a parsed TOML mapping into a RunConfig."""
    _check_keys(
        data,
        (
            "particles", "grid", "basis", "interaction", "evolution",
            "wave_operators", "dyson", "study", "output",
        ),
        "config",
    )
    particles = data.get("particles")
    if not particles or not isinstance(particles, Mapping):
        raise ConfigError("config.particles must declare at least one particle")
    for name, entry in particles.items():
        _check_keys(entry, ("statistics", "mass", "conjugate"), f"particles.{name}")

    grid = data.get("grid", {})
    _check_keys(grid, ("dimension", "cutoff", "spacing", "internal_labels"), "grid")
    dimension = int(grid.get("dimension", 1))
    cutoff = _positive(grid.get("cutoff", 1.0), "grid.cutoff")
    spacing = _positive(grid.get("spacing", 1.0), "grid.spacing")
    labels = {k: list(v) for k, v in grid.get("internal_labels", {}).items()}

    basis = data.get("basis", {})
    _check_keys(basis, ("max_quanta", "energy_cap", "hard_limit"), "basis")
    max_quanta = int(basis.get("max_quanta", 2))
    if max_quanta < 0:
        raise ConfigError("basis.max_quanta must be >= 0")
    energy_cap = basis.get("energy_cap")
    if energy_cap is not None:
        energy_cap = _positive(energy_cap, "basis.energy_cap")
    hard_limit = int(basis.get("hard_limit", DEFAULT_BASIS_HARD_LIMIT))
    if hard_limit < 1:
        raise ConfigError("basis.hard_limit must be >= 1")

    interaction = data.get("interaction", {})
    _check_keys(interaction, ("rank", "vertices"), "interaction")
    rank = interaction.get("rank")
    if rank is not None:
        rank = int(rank)
        if rank < 0:
            raise ConfigError("interaction.rank must be >= 0")
    vertex_cfgs = []
    for i, ventry in enumerate(interaction.get("vertices", [])):
        family = ventry.get("family")
        if family not in _VERTEX_KEYS:
            raise ConfigError(
                f"interaction.vertices[{i}].family must be one of "
                f"{sorted(_VERTEX_KEYS)}, got {family!r}"
            )
        _check_keys(ventry, _VERTEX_KEYS[family], f"interaction.vertices[{i}]")
        params = {k: v for k, v in ventry.items() if k != "family"}
        if "coupling" in _VERTEX_KEYS[family] and "coupling" not in params:
            raise ConfigError(f"interaction.vertices[{i}].coupling is required")
        vertex_cfgs.append(VertexConfig(family=family, params=params))

    evolution = data.get("evolution", {})
    _check_keys(evolution, ("method", "tolerance"), "evolution")
    evo_method = str(evolution.get("method", "auto"))
    if evo_method not in ("auto", "krylov-step", "chebyshev", "dense-exponential"):
        raise ConfigError(f"evolution.method: unknown method {evo_method!r}")
    evo_tol = _positive(evolution.get("tolerance", 1e-10), "evolution.tolerance")

    waveops = data.get("wave_operators", {})
    _check_keys(
        waveops,
        ("method", "time_max", "time_step", "window", "tolerance",
         "eps_sequence", "s_max_factor"),
        "wave_operators",
    )
    waveop_method = str(waveops.get("method", "time-plateau"))
    if waveop_method not in ("time-plateau", "adiabatic"):
        raise ConfigError(f"wave_operators.method: unknown method {waveop_method!r}")
    waveop_time_max = _positive(waveops.get("time_max", 400.0), "wave_operators.time_max")
    waveop_time_step = _positive(waveops.get("time_step", 0.5), "wave_operators.time_step")
    waveop_window = int(waveops.get("window", 5))
    if waveop_window < 2:
        raise ConfigError("wave_operators.window must be >= 2")
    waveop_tol = _positive(waveops.get("tolerance", 1e-5), "wave_operators.tolerance")
    eps_sequence = tuple(
        _positive(e, "wave_operators.eps_sequence")
        for e in waveops.get("eps_sequence", (0.2, 0.1, 0.05))
    )
    if any(b >= a for a, b in zip(eps_sequence, eps_sequence[1:])):
        raise ConfigError("wave_operators.eps_sequence must be strictly decreasing")
    s_max_factor = _positive(waveops.get("s_max_factor", 30.0), "wave_operators.s_max_factor")

    dyson = data.get("dyson", {})
    _check_keys(
        dyson,
        ("order", "quadrature_nodes", "damping", "time", "time_prime"),
        "dyson",
    )
    dyson_order = int(dyson.get("order", 3))
    if dyson_order < 0:
        raise ConfigError("dyson.order must be >= 0")
    dyson_nodes = int(dyson.get("quadrature_nodes", 12))
    if dyson_nodes < 2:
        raise ConfigError("dyson.quadrature_nodes must be >= 2")
    damping = dyson.get("damping")
    if damping is not None:
        damping = _positive(damping, "dyson.damping")
    dyson_time = float(dyson.get("time", 0.8))
    dyson_time_prime = float(dyson.get("time_prime", -0.6))
    if dyson_time < dyson_time_prime:
        raise ConfigError("dyson.time must be >= dyson.time_prime")

    study = data.get("study", {})
    _check_keys(
        study,
        ("ranks", "cutoffs", "eps", "time_max", "time_step", "tolerance",
         "observables", "horizon_states", "horizon_tolerance"),
        "study",
    )
    ranks = tuple(int(n) for n in study.get("ranks", (2, 4, 6)))
    if len(ranks) < 3:
        raise ConfigError("study.ranks needs at least 3 entries")
    if any(b <= a for a, b in zip(ranks, ranks[1:])):
        raise ConfigError("study.ranks must be strictly increasing")
    cutoffs = tuple(float(c) for c in study.get("cutoffs", (cutoff,)))
    if not cutoffs:
        raise ConfigError("study.cutoffs must be nonempty")
    if any(b <= a for a, b in zip(cutoffs, cutoffs[1:])):
        raise ConfigError("study.cutoffs must be strictly increasing")
    study_eps = _positive(study.get("eps", 1e-3), "study.eps")
    study_time_max = _positive(study.get("time_max", 150.0), "study.time_max")
    study_time_step = _positive(study.get("time_step", 0.5), "study.time_step")
    study_tol = _positive(study.get("tolerance", 1e-4), "study.tolerance")
    observables = []
    for i, oentry in enumerate(study.get("observables", [])):
        kind = oentry.get("kind")
        if kind not in _OBSERVABLE_KEYS:
            raise ConfigError(
                f"study.observables[{i}].kind must be one of "
                f"{sorted(_OBSERVABLE_KEYS)}, got {kind!r}"
            )
        _check_keys(oentry, _OBSERVABLE_KEYS[kind], f"study.observables[{i}]")
        name = str(oentry.get("name", f"{kind}_{i}"))
        if kind == "smatrix_element":
            observables.append(
                ObservableConfig(
                    kind=kind,
                    name=name,
                    bra=_parse_occupation(oentry.get("bra", []), f"study.observables[{i}].bra"),
                    ket=_parse_occupation(oentry.get("ket", []), f"study.observables[{i}].ket"),
                )
            )
        elif kind == "level":
            observables.append(
                ObservableConfig(kind=kind, name=name, energy=float(oentry.get("energy", 0.0)))
            )
        else:
            observables.append(ObservableConfig(kind=kind, name=name))
    horizon_states = tuple(int(j) for j in study.get("horizon_states", (1,)))
    if any(j < 0 for j in horizon_states):
        raise ConfigError("study.horizon_states must be nonnegative basis indices")
    horizon_tol = _positive(study.get("horizon_tolerance", 1e-4), "study.horizon_tolerance")

    output = data.get("output", {})
    _check_keys(output, ("directory",), "output")
    out_dir = str(output.get("directory", "out"))

    return RunConfig(
        particles={k: dict(v) for k, v in particles.items()},
        grid_dimension=dimension,
        grid_cutoff=cutoff,
        grid_spacing=spacing,
        internal_labels=labels,
        max_quanta=max_quanta,
        energy_cap=energy_cap,
        hard_limit=hard_limit,
        vertices=tuple(vertex_cfgs),
        interaction_rank=rank,
        evolution_method=evo_method,
        evolution_tolerance=evo_tol,
        waveop_method=waveop_method,
        waveop_time_max=waveop_time_max,
        waveop_time_step=waveop_time_step,
        waveop_window=waveop_window,
        waveop_tolerance=waveop_tol,
        waveop_eps_sequence=eps_sequence,
        waveop_s_max_factor=s_max_factor,
        dyson_order=dyson_order,
        dyson_nodes=dyson_nodes,
        dyson_damping=damping,
        dyson_time=dyson_time,
        dyson_time_prime=dyson_time_prime,
        study_ranks=ranks,
        study_cutoffs=cutoffs,
        study_eps=study_eps,
        study_time_max=study_time_max,
        study_time_step=study_time_step,
        study_tolerance=study_tol,
        study_observables=tuple(observables),
        horizon_states=horizon_states,
        horizon_tolerance=horizon_tol,
        output_directory=out_dir,
    )


def load_config(path) -> RunConfig:
    """Parse and validate a TOML configuration file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"configuration file {path} does not exist")
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(data)
