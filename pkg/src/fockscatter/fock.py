"""Particle systems, discretized momentum modes, truncated occupation bases,
and ladder operators with exact bosonic/fermionic statistics.

The single-particle space is discretized on a symmetric momentum grid
(box quantization): points k = m * spacing with every component of m an
integer and |k_i| <= cutoff.  A "slot" is one (particle, momentum point,
internal label) triple; occupation-number states are tuples indexed by the
global slot order.  That order is fixed once per basis:

    particles in declaration order, then grid points sorted by
    (|k|^2, components), then internal labels sorted lexicographically.

Fermionic signs use the Jordan-Wigner convention on this slot order: the
amplitude of a raising/lowering operator on slot s carries
(-1)**(number of occupied fermionic slots strictly before s).  All
fermionic slots share a single sign string, so distinct fermion species
anticommute.

Raising out of the truncated basis (total quanta above the cap, or energy
above the optional energy cap) maps to the zero vector: every operator is
the compression of its untruncated counterpart to the retained basis.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence, Union

import numpy as np
from scipy import sparse

__all__ = [
    "ParticleSystem",
    "GridPoint",
    "ModeGrid",
    "Slot",
    "FockBasis",
    "build_particle_system",
    "build_mode_grid",
    "dispersion",
    "enumerate_basis",
    "ladder_matrix",
    "vacuum_vector",
]

RAISE = "raise"
LOWER = "lower"

DEFAULT_BASIS_HARD_LIMIT = 200_000


@dataclass(frozen=True)
class ParticleSystem:
    """Finite particle set with an involutive conjugation pairing p <-> pbar.

    Conjugate particles must agree in mass and statistics; self-conjugate
    particles (p == pbar) are allowed.
    """

    particles: tuple[str, ...]
    conjugate: Mapping[str, str]
    is_fermion: Mapping[str, bool]
    mass: Mapping[str, float]

    def __contains__(self, name: str) -> bool:
        return name in self.particles


def build_particle_system(table: Mapping[str, Mapping]) -> ParticleSystem:
    """Validate a declarative particle table and return a ParticleSystem.

    ``table`` maps particle name -> {"statistics": "boson"|"fermion",
    "mass": float, "conjugate": name (optional, defaults to self)}.
    """
    if not table:
        raise ValueError("particle table is empty")
    names = tuple(table.keys())
    conjugate: dict[str, str] = {}
    is_fermion: dict[str, bool] = {}
    mass: dict[str, float] = {}
    for name, entry in table.items():
        stats = entry.get("statistics")
        if stats not in ("boson", "fermion"):
            raise ValueError(
                f"particle {name!r}: statistics must be 'boson' or 'fermion', got {stats!r}"
            )
        m = float(entry.get("mass", 0.0))
        if m < 0.0:
            raise ValueError(f"particle {name!r}: negative mass {m}")
        conj = entry.get("conjugate", name)
        if conj not in table:
            raise ValueError(f"particle {name!r}: conjugate {conj!r} is not in the table")
        conjugate[name] = conj
        is_fermion[name] = stats == "fermion"
        mass[name] = m
    for name in names:
        partner = conjugate[name]
        if conjugate[partner] != name:
            raise ValueError(
                f"conjugation is not involutive: {name} -> {partner} -> {conjugate[partner]}"
            )
        if mass[partner] != mass[name]:
            raise ValueError(
                f"mass mismatch between conjugate particles {name!r} ({mass[name]}) "
                f"and {partner!r} ({mass[partner]})"
            )
        if is_fermion[partner] != is_fermion[name]:
            raise ValueError(
                f"statistics mismatch between conjugate particles {name!r} and {partner!r}"
            )
    return ParticleSystem(particles=names, conjugate=conjugate, is_fermion=is_fermion, mass=mass)


class GridPoint(NamedTuple):
    """One momentum point: integer grid coordinates and physical momentum."""

    ivec: tuple[int, ...]
    momentum: tuple[float, ...]

    @property
    def norm_sq_int(self) -> int:
        return sum(m * m for m in self.ivec)


@dataclass(frozen=True)
class ModeGrid:
    """Symmetric momentum grid |k_i| <= cutoff with spacing ``spacing``.

    The point list is closed under k -> -k and ordered by (|k|^2, components).
    ``internal_labels`` maps particle name -> tuple of opaque labels
    (spin/color/flavor); particles without an entry get the singleton ("",).
    """

    dimension: int
    cutoff: float
    spacing: float
    points: tuple[GridPoint, ...]
    internal_labels: Mapping[str, tuple[str, ...]] = field(default_factory=dict)

    def labels_for(self, particle: str) -> tuple[str, ...]:
        return tuple(self.internal_labels.get(particle, ("",)))

    def point_from_ivec(self, ivec: Sequence[int]) -> GridPoint:
        key = tuple(int(m) for m in ivec)
        try:
            return self._ivec_index[key]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"momentum index {key} is not on the grid") from None

    def __post_init__(self):
        object.__setattr__(self, "_ivec_index", {p.ivec: p for p in self.points})


def build_mode_grid(
    cutoff: float,
    spacing: float,
    dimension: int = 1,
    internal_labels: Optional[Mapping[str, Sequence[str]]] = None,
) -> ModeGrid:
    """Build the symmetric momentum grid for the given cutoff and spacing."""
    if cutoff <= 0.0:
        raise ValueError(f"cutoff must be positive, got {cutoff}")
    if spacing <= 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    if dimension < 1:
        raise ValueError(f"dimension must be >= 1, got {dimension}")
    # small epsilon so cutoff = n*spacing keeps the boundary modes
    m_max = int(math.floor(cutoff / spacing + 1e-9))
    ivecs = sorted(
        itertools.product(range(-m_max, m_max + 1), repeat=dimension),
        key=lambda iv: (sum(m * m for m in iv), iv),
    )
    points = tuple(
        GridPoint(ivec=iv, momentum=tuple(m * spacing for m in iv)) for iv in ivecs
    )
    labels = {}
    if internal_labels:
        for particle, labs in internal_labels.items():
            labs = tuple(str(l) for l in labs)
            if not labs:
                raise ValueError(f"internal label set for {particle!r} is empty")
            if len(set(labs)) != len(labs):
                raise ValueError(f"duplicate internal labels for {particle!r}")
            labels[particle] = tuple(sorted(labs))
    return ModeGrid(
        dimension=dimension,
        cutoff=float(cutoff),
        spacing=float(spacing),
        points=points,
        internal_labels=labels,
    )


def dispersion(system: ParticleSystem, particle: str, momentum: Sequence[float]) -> float:
    """Single-particle energy sqrt(m^2 + |k|^2)."""
    if particle not in system:
        raise ValueError(f"unknown particle {particle!r}")
    m = system.mass[particle]
    return math.sqrt(m * m + sum(float(c) ** 2 for c in momentum))


class Slot(NamedTuple):
    """One (particle, momentum point, internal label) degree of freedom."""

    particle: str
    point: GridPoint
    label: str
    energy: float
    fermionic: bool


def _build_slots(system: ParticleSystem, grid: ModeGrid) -> tuple[Slot, ...]:
    slots = []
    for particle in system.particles:
        fermionic = system.is_fermion[particle]
        for point in grid.points:
            energy = dispersion(system, particle, point.momentum)
            for label in grid.labels_for(particle):
                slots.append(Slot(particle, point, label, energy, fermionic))
    return tuple(slots)


@dataclass(frozen=True)
class FockBasis:
    """Enumerated occupation basis under quanta/energy cutoffs.

    States are ordered by (free energy ascending, occupation tuple
    lexicographic); the vacuum is always index 0.  ``energies[i]`` is the
    free energy of state i, i.e. the diagonal of the free Hamiltonian.
    """

    system: ParticleSystem
    grid: ModeGrid
    slots: tuple[Slot, ...]
    states: tuple[tuple[int, ...], ...]
    energies: np.ndarray
    n_max_quanta: int
    energy_cap: Optional[float]

    @property
    def dim(self) -> int:
        return len(self.states)

    def __post_init__(self):
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(self.states)})
        object.__setattr__(
            self,
            "_slot_pos",
            {(s.particle, s.point.ivec, s.label): i for i, s in enumerate(self.slots)},
        )

    def index(self, occupations: Sequence[int]) -> int:
        """Ordinal of an occupation tuple (ValueError if outside the basis)."""
        key = tuple(int(n) for n in occupations)
        try:
            return self._index[key]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"occupation state {key} is not in the basis") from None

    def contains(self, occupations: Sequence[int]) -> bool:
        return tuple(int(n) for n in occupations) in self._index  # type: ignore[attr-defined]

    def slot_position(
        self, particle: str, ivec: Union[int, Sequence[int]], label: str = ""
    ) -> int:
        """Global slot position of (particle, momentum index vector, label)."""
        if isinstance(ivec, int):
            ivec = (ivec,)
        key = (particle, tuple(int(m) for m in ivec), label)
        try:
            return self._slot_pos[key]  # type: ignore[attr-defined]
        except KeyError:
            raise ValueError(f"unknown mode {key} for this basis") from None

    def occupation_of(self, state_index: int, particle: str, ivec, label: str = "") -> int:
        return self.states[state_index][self.slot_position(particle, ivec, label)]

    def state_vector(self, occupations: Sequence[int]) -> np.ndarray:
        v = np.zeros(self.dim, dtype=complex)
        v[self.index(occupations)] = 1.0
        return v


def enumerate_basis(
    system: ParticleSystem,
    grid: ModeGrid,
    n_max_quanta: int,
    energy_cap: Optional[float] = None,
    hard_limit: int = DEFAULT_BASIS_HARD_LIMIT,
) -> FockBasis:
    """Enumerate all occupation states with total quanta <= n_max_quanta
    (and free energy <= energy_cap when given).

    Raises ValueError when the basis would exceed ``hard_limit``, reporting
    the required size.
    """
    if n_max_quanta < 0:
        raise ValueError(f"n_max_quanta must be >= 0, got {n_max_quanta}")
    slots = _build_slots(system, grid)
    slot_energies = np.array([s.energy for s in slots])
    caps = [1 if s.fermionic else n_max_quanta for s in slots]

    states: list[tuple[int, ...]] = []
    overflow = 0

    def extend(prefix: list[int], pos: int, quanta_left: int, energy_left: float):
        nonlocal overflow
        if pos == len(slots):
            if overflow or len(states) >= hard_limit:
                overflow += 1
            else:
                states.append(tuple(prefix))
            return
        e = slot_energies[pos]
        max_n = min(caps[pos], quanta_left)
        if e > 0.0 and energy_left < math.inf:
            max_n = min(max_n, int(math.floor(energy_left / e + 1e-12)))
        for n in range(max_n + 1):
            prefix.append(n)
            extend(prefix, pos + 1, quanta_left - n, energy_left - n * e)
            prefix.pop()

    cap = math.inf if energy_cap is None else float(energy_cap)
    extend([], 0, n_max_quanta, cap)
    if overflow:
        raise ValueError(
            f"basis size {len(states) + overflow} exceeds hard limit {hard_limit}; "
            "raise the limit or tighten the cutoffs"
        )

    energies = np.array([float(np.dot(s, slot_energies)) for s in states])
    order = sorted(range(len(states)), key=lambda i: (energies[i], states[i]))
    states_sorted = tuple(states[i] for i in order)
    energies_sorted = energies[np.array(order, dtype=int)]
    return FockBasis(
        system=system,
        grid=grid,
        slots=slots,
        states=states_sorted,
        energies=energies_sorted,
        n_max_quanta=n_max_quanta,
        energy_cap=energy_cap,
    )


def _fermion_parity(state: tuple[int, ...], slots: tuple[Slot, ...], pos: int) -> int:
    """(-1)**(occupied fermionic slots strictly before pos)."""
    count = 0
    for s in range(pos):
        if slots[s].fermionic:
            count += state[s]
    return -1 if count % 2 else 1


def apply_ladder(
    basis: FockBasis, state_index: int, slot_pos: int, kind: str
) -> tuple[Optional[int], float]:
    """Act with one raising/lowering operator on a basis state.

    Returns (target index, amplitude); (None, 0.0) when the image leaves the
    truncated basis or vanishes.
    """
    state = basis.states[state_index]
    slot = basis.slots[slot_pos]
    n = state[slot_pos]
    if kind == LOWER:
        if n == 0:
            return None, 0.0
        amp = 1.0 if slot.fermionic else math.sqrt(n)
        new_n = n - 1
    elif kind == RAISE:
        if slot.fermionic and n == 1:
            return None, 0.0
        amp = 1.0 if slot.fermionic else math.sqrt(n + 1)
        new_n = n + 1
    else:
        raise ValueError(f"kind must be 'raise' or 'lower', got {kind!r}")
    if slot.fermionic:
        amp *= _fermion_parity(state, basis.slots, slot_pos)
    target = state[:slot_pos] + (new_n,) + state[slot_pos + 1 :]
    if not basis.contains(target):
        return None, 0.0  # projection truncation
    return basis.index(target), amp


def ladder_matrix(
    basis: FockBasis,
    particle: str,
    ivec: Union[int, Sequence[int]],
    kind: str,
    label: str = "",
) -> sparse.csr_matrix:
    """Sparse matrix of a^dagger (kind='raise') or a (kind='lower') for one mode.

    Bosonic elements carry sqrt(n+1)/sqrt(n); fermionic ones carry the
    Jordan-Wigner sign on the global slot order.  Raising out of the basis
    maps to zero.
    """
    pos = basis.slot_position(particle, ivec, label)
    rows, cols, data = [], [], []
    for i in range(basis.dim):
        j, amp = apply_ladder(basis, i, pos, kind)
        if j is not None and amp != 0.0:
            rows.append(j)
            cols.append(i)
            data.append(amp)
    return sparse.csr_matrix(
        (np.array(data), (np.array(rows, dtype=int), np.array(cols, dtype=int))),
        shape=(basis.dim, basis.dim),
    )


def vacuum_vector(basis: FockBasis) -> np.ndarray:
    v = np.zeros(basis.dim, dtype=complex)
    v[0] = 1.0
    return v
