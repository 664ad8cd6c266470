"""Free and finite-rank regularized interacting Hamiltonians.

The free Hamiltonian is diagonal in the occupation basis with entries
sum_(p,k) n_(p,k) * sqrt(m_p^2 + k^2).  Interactions are finite sums of
normal-ordered ladder monomials ("vertices"): every raising leg precedes
every lowering leg, and each vertex carries a momentum-space kernel that
absorbs coupling constants and normalization factors.  The regularized
operator at interaction rank n compresses the interaction to the first n
basis vectors,

    H(n) = H_free + P_n V P_n,

where P_n projects onto basis states 0..n-1 in the fixed energy-sorted
order.  Assembly checks hermiticity of the compressed block and fails hard
when the vertex set is not self-adjoint.

Built-in vertex families: scalar field powers (phi^3, phi^4, ... with the
1/sqrt(2*mu) mode normalization and grid momentum conservation), a
Yukawa-type boson decay vertex b'd'a + h.c., and a quadratic mass
counterterm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import sparse

from .fock import (
    LOWER,
    RAISE,
    FockBasis,
    ModeGrid,
    ParticleSystem,
    dispersion,
)
from .linalg import max_abs

__all__ = [
    "Vertex",
    "InteractionSpec",
    "RegularizedHamiltonian",
    "GroundStateReport",
    "free_hamiltonian",
    "interaction_matrix_element",
    "interaction_block",
    "assemble_regularized",
    "ground_state_check",
    "phi_power_vertices",
    "yukawa_vertices",
    "mass_counterterm_vertices",
]

HERMITICITY_RTOL = 1e-12

# kernel(legs) -> complex, legs = tuple of (momentum tuple, label) per leg
Kernel = Callable[[tuple[tuple[tuple[float, ...], str], ...]], complex]


@dataclass(frozen=True)
class Vertex:
    """One normal-ordered ladder monomial with a momentum-space kernel.

    ``legs`` is the operator product read left to right, so the last leg
    acts first on a ket.  All raising legs must precede all lowering legs.
    When ``momentum_conserving`` is set, only mode assignments with
    sum(raising momenta) == sum(lowering momenta) contribute (exact integer
    arithmetic on grid coordinates).
    """

    legs: tuple[tuple[str, str], ...]
    kernel: Kernel
    momentum_conserving: bool = True
    name: str = "vertex"

    def __post_init__(self):
        seen_lower = False
        for particle, kind in self.legs:
            if kind not in (RAISE, LOWER):
                raise ValueError(f"vertex {self.name!r}: bad leg kind {kind!r}")
            if kind == LOWER:
                seen_lower = True
            elif seen_lower:
                raise ValueError(
                    f"vertex {self.name!r} is not normal-ordered: raising leg after lowering leg"
                )
        if not self.legs:
            raise ValueError(f"vertex {self.name!r} has no legs")


@dataclass(frozen=True)
class InteractionSpec:
    """A set of vertices plus optional counterterm vertices.

    ``couplings`` records the named coupling values for reports; an empty
    vertex list is the free theory.
    """

    vertices: tuple[Vertex, ...] = ()
    couplings: Mapping[str, float] = field(default_factory=dict)
    counterterms: tuple[Vertex, ...] = ()

    def all_vertices(self) -> tuple[Vertex, ...]:
        return self.vertices + self.counterterms


def free_hamiltonian(basis: FockBasis) -> sparse.csr_matrix:
    """Diagonal free Hamiltonian; entry i is the free energy of state i."""
    return sparse.diags(basis.energies.astype(float), format="csr")


def _slot_positions_by_particle(basis: FockBasis) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {}
    for pos, slot in enumerate(basis.slots):
        out.setdefault(slot.particle, []).append(pos)
    return out


class _VertexApplier:
    """Applies one vertex to basis states, caching kernel evaluations."""

    def __init__(self, vertex: Vertex, basis: FockBasis):
        self.vertex = vertex
        self.basis = basis
        by_particle = _slot_positions_by_particle(basis)
        self.leg_slots: list[list[int]] = []
        for particle, _kind in vertex.legs:
            positions = by_particle.get(particle)
            if not positions:
                raise ValueError(
                    f"vertex {vertex.name!r} references particle {particle!r} "
                    "with no modes in this basis"
                )
            self.leg_slots.append(positions)
        self._kernel_cache: dict[tuple[int, ...], complex] = {}

    def _kernel_value(self, assignment: tuple[int, ...]) -> complex:
        cached = self._kernel_cache.get(assignment)
        if cached is not None:
            return cached
        slots = self.basis.slots
        legs = tuple(
            (slots[pos].point.momentum, slots[pos].label) for pos in assignment
        )
        try:
            value = complex(self.vertex.kernel(legs))
        except Exception as exc:
            raise RuntimeError(
                f"kernel evaluation failed for vertex {self.vertex.name!r} "
                f"at assignment {legs}"
            ) from exc
        self._kernel_cache[assignment] = value
        return value

    def _conserves(self, assignment: tuple[int, ...]) -> bool:
        if not self.vertex.momentum_conserving:
            return True
        dim = self.basis.grid.dimension
        net = [0] * dim
        slots = self.basis.slots
        for (particle, kind), pos in zip(self.vertex.legs, assignment):
            sign = 1 if kind == RAISE else -1
            ivec = slots[pos].point.ivec
            for d in range(dim):
                net[d] += sign * ivec[d]
        return all(c == 0 for c in net)

    def column(self, state_index: int) -> dict[int, complex]:
        """Amplitudes of V|state> on the truncated basis, keyed by row."""
        basis = self.basis
        legs = self.vertex.legs
        n_legs = len(legs)
        out: dict[int, complex] = {}

        # walk legs right to left (the rightmost leg acts first on the ket)
        def walk(leg: int, state: tuple[int, ...], amp: float, assignment: tuple[int, ...]):
            if leg < 0:
                if not self._conserves(assignment):
                    return
                kern = self._kernel_value(assignment)
                if kern == 0.0:
                    return
                row = basis.index(state)
                out[row] = out.get(row, 0.0) + amp * kern
                return
            _particle, kind = legs[leg]
            for pos in self.leg_slots[leg]:
                new_state, step = _ladder_step(basis, state, pos, kind)
                if new_state is None:
                    continue
                walk(leg - 1, new_state, amp * step, (pos,) + assignment)

        walk(n_legs - 1, basis.states[state_index], 1.0, ())
        return out


def _ladder_step(
    basis: FockBasis, state: tuple[int, ...], pos: int, kind: str
) -> tuple[Optional[tuple[int, ...]], float]:
    """One ladder application on an occupation tuple (None when it vanishes).

    Intermediate states along a normal-ordered monomial are dominated by the
    initial (lowering phase) or final (raising phase) state, so membership
    in the truncated basis only needs to be checked at the end.
    """
    slot = basis.slots[pos]
    n = state[pos]
    if kind == LOWER:
        if n == 0:
            return None, 0.0
        amp = 1.0 if slot.fermionic else math.sqrt(n)
        new_n = n - 1
    else:
        if slot.fermionic and n == 1:
            return None, 0.0
        amp = 1.0 if slot.fermionic else math.sqrt(n + 1)
        new_n = n + 1
    if slot.fermionic:
        parity = 0
        for s in range(pos):
            if basis.slots[s].fermionic:
                parity += state[s]
        if parity % 2:
            amp = -amp
    new_state = state[:pos] + (new_n,) + state[pos + 1 :]
    if kind == RAISE and not basis.contains(new_state):
        return None, 0.0
    return new_state, amp


def interaction_block(
    spec: InteractionSpec, basis: FockBasis, n: Optional[int] = None
) -> np.ndarray:
    """Dense matrix of the interaction compressed to the first n basis states."""
    if n is None:
        n = basis.dim
    if not 0 <= n <= basis.dim:
        raise ValueError(f"interaction rank {n} outside [0, {basis.dim}]")
    block = np.zeros((n, n), dtype=complex)
    for vertex in spec.all_vertices():
        applier = _VertexApplier(vertex, basis)
        for j in range(n):
            for row, amp in applier.column(j).items():
                if row < n:
                    block[row, j] += amp
    return block


def interaction_matrix_element(spec: InteractionSpec, basis: FockBasis, u, v) -> complex:
    """<u|V|v> for basis states given as indices or occupation tuples."""
    iu = u if isinstance(u, (int, np.integer)) else basis.index(u)
    iv = v if isinstance(v, (int, np.integer)) else basis.index(v)
    total = 0.0 + 0.0j
    for vertex in spec.all_vertices():
        applier = _VertexApplier(vertex, basis)
        total += applier.column(iv).get(iu, 0.0)
    return total


@dataclass(frozen=True)
class RegularizedHamiltonian:
    """H(n) = H_free + P_n V P_n on a truncated basis.

    ``v_block`` is the dense n x n compressed interaction; ``full`` embeds it
    into the sparse full-dimension operator.  ``full - a0`` is exactly zero
    outside the leading n x n block.
    """

    a0: sparse.csr_matrix
    interaction_rank: int
    full: sparse.csr_matrix
    v_block: np.ndarray
    basis: FockBasis
    spec: InteractionSpec

    @property
    def dim(self) -> int:
        return self.basis.dim

    @property
    def energies(self) -> np.ndarray:
        return self.basis.energies

    def dense(self) -> np.ndarray:
        return self.full.toarray()

    def interaction_dense(self) -> np.ndarray:
        """Dense full-dimension interaction part (zero outside the block)."""
        n = self.interaction_rank
        out = np.zeros((self.dim, self.dim), dtype=complex)
        out[:n, :n] = self.v_block
        return out


def assemble_regularized(
    spec: InteractionSpec, basis: FockBasis, n: int
) -> RegularizedHamiltonian:
    """Assemble H(n) = H_free + P_n V P_n and verify hermiticity."""
    if not 0 <= n <= basis.dim:
        raise ValueError(f"interaction rank {n} exceeds basis size {basis.dim}")
    a0 = free_hamiltonian(basis)
    block = interaction_block(spec, basis, n)
    scale = max(1.0, max_abs(block) if block.size else 0.0)
    defect = max_abs(block - block.conj().T) if block.size else 0.0
    if defect > HERMITICITY_RTOL * scale:
        raise ValueError(
            f"interaction block is not hermitian (defect {defect:.3e}, scale {scale:.3e}); "
            "vertex set must be self-adjoint"
        )
    block = 0.5 * (block + block.conj().T)
    rows, cols = np.nonzero(block)
    v_sparse = sparse.csr_matrix(
        (block[rows, cols], (rows, cols)), shape=(basis.dim, basis.dim)
    )
    full = (a0 + v_sparse).tocsr()
    return RegularizedHamiltonian(
        a0=a0, interaction_rank=n, full=full, v_block=block, basis=basis, spec=spec
    )


@dataclass(frozen=True)
class GroundStateReport:
    vacuum_energy: float
    vacuum_defect: float
    lowest_eigenvalue: float
    vacuum_is_eigenvector: bool


def ground_state_check(
    h: RegularizedHamiltonian, dense_limit: int = 400, tol: float = 1e-10
) -> GroundStateReport:
    """Diagnose whether the free vacuum is an (approximate) eigenvector of H(n)."""
    if h.dim > dense_limit:
        raise ValueError(f"dimension {h.dim} exceeds dense eigensolve limit {dense_limit}")
    dense = h.dense()
    w0 = np.zeros(h.dim, dtype=complex)
    w0[0] = 1.0
    hw0 = dense @ w0
    e0 = float(np.real(np.vdot(w0, hw0)))
    defect = float(np.linalg.norm(hw0 - e0 * w0))
    lowest = float(np.linalg.eigvalsh(dense)[0])
    scale = max(1.0, max_abs(dense))
    return GroundStateReport(
        vacuum_energy=e0,
        vacuum_defect=defect,
        lowest_eigenvalue=lowest,
        vacuum_is_eigenvector=defect <= tol * scale,
    )


# ---------------------------------------------------------------------------
# built-in vertex families


def _check_massive_modes(system: ParticleSystem, grid: ModeGrid, particle: str):
    for point in grid.points:
        if dispersion(system, particle, point.momentum) == 0.0:
            raise ValueError(
                f"particle {particle!r} has a zero-energy mode at k={point.momentum}; "
                "the 1/sqrt(2*mu) vertex normalization is undefined"
            )


def phi_power_vertices(
    system: ParticleSystem,
    grid: ModeGrid,
    particle: str,
    power: int,
    coupling: float,
    channels: Optional[Sequence[int]] = None,
    name: Optional[str] = None,
) -> tuple[Vertex, ...]:
    """Normal-ordered power of a self-conjugate scalar field.

    The field power expands into monomials with j raising and (power - j)
    lowering legs, combinatorial weight C(power, j), overall normalization
    coupling/power!, and kernel product of 1/sqrt(2*mu(k)) over the legs.
    ``channels`` restricts the raising-leg counts j (default: all).  The
    number-conserving channel j = power/2 carries the first-order
    self-energy; studies that compare against free-basis asymptotics
    typically exclude it unless a counterterm is supplied.
    """
    if particle not in system:
        raise ValueError(f"unknown particle {particle!r}")
    if system.conjugate[particle] != particle:
        raise ValueError(f"phi_power_vertices requires a self-conjugate particle, got {particle!r}")
    if system.is_fermion[particle]:
        raise ValueError("phi_power_vertices requires a boson")
    if power < 1:
        raise ValueError(f"power must be >= 1, got {power}")
    _check_massive_modes(system, grid, particle)
    if channels is None:
        channels = range(power + 1)
    channels = sorted(set(int(j) for j in channels))
    if any(j < 0 or j > power for j in channels):
        raise ValueError(f"channels must lie in [0, {power}], got {channels}")
    base = name or f"phi{power}[{particle}]"
    mass = system.mass[particle]

    def make_kernel(weight: float) -> Kernel:
        def kernel(legs):
            value = weight
            for momentum, _label in legs:
                mu = math.sqrt(mass * mass + sum(c * c for c in momentum))
                value /= math.sqrt(2.0 * mu)
            return value

        return kernel

    vertices = []
    for j in channels:
        weight = coupling * math.comb(power, j) / math.factorial(power)
        legs = tuple([(particle, RAISE)] * j + [(particle, LOWER)] * (power - j))
        vertices.append(
            Vertex(
                legs=legs,
                kernel=make_kernel(weight),
                momentum_conserving=True,
                name=f"{base}:j={j}",
            )
        )
    return tuple(vertices)


def yukawa_vertices(
    system: ParticleSystem,
    grid: ModeGrid,
    boson: str,
    fermion: str,
    coupling: float,
    name: Optional[str] = None,
) -> tuple[Vertex, ...]:
    """Boson decay into a fermion/antifermion pair, b'd'a + h.c.

    Legs: create fermion, create its conjugate, destroy the boson; the
    hermitian conjugate (create boson, destroy conjugate, destroy fermion)
    is added automatically.  Kernel: coupling times 1/sqrt(2*mu) per leg.
    """
    if boson not in system or fermion not in system:
        raise ValueError("unknown particle in Yukawa vertex")
    if system.is_fermion[boson] or not system.is_fermion[fermion]:
        raise ValueError("yukawa_vertices needs a boson and a fermion")
    anti = system.conjugate[fermion]
    _check_massive_modes(system, grid, boson)
    _check_massive_modes(system, grid, fermion)
    base = name or f"yukawa[{boson}->{fermion}{anti}]"
    masses = dict(system.mass)
    particles_fwd = (fermion, anti, boson)
    particles_bwd = (boson, anti, fermion)

    def make_kernel(order: tuple[str, ...]) -> Kernel:
        def kernel(legs):
            value = coupling
            for (momentum, _label), p in zip(legs, order):
                m = masses[p]
                mu = math.sqrt(m * m + sum(c * c for c in momentum))
                value /= math.sqrt(2.0 * mu)
            return value

        return kernel

    forward = Vertex(
        legs=((fermion, RAISE), (anti, RAISE), (boson, LOWER)),
        kernel=make_kernel(particles_fwd),
        momentum_conserving=True,
        name=f"{base}:decay",
    )
    backward = Vertex(
        legs=((boson, RAISE), (anti, LOWER), (fermion, LOWER)),
        kernel=make_kernel(particles_bwd),
        momentum_conserving=True,
        name=f"{base}:fusion",
    )
    return (forward, backward)


def mass_counterterm_vertices(
    system: ParticleSystem,
    grid: ModeGrid,
    particle: str,
    delta: float,
    name: Optional[str] = None,
) -> tuple[Vertex, ...]:
    """Quadratic counterterm delta/(2*mu(k)) a'(k) a(k), diagonal in mode.

    A first-order shift of the squared mass m^2 -> m^2 + delta.
    """
    if particle not in system:
        raise ValueError(f"unknown particle {particle!r}")
    _check_massive_modes(system, grid, particle)
    mass = system.mass[particle]
    base = name or f"mass_ct[{particle}]"

    def kernel(legs):
        (k1, l1), (k2, l2) = legs
        if l1 != l2 or k1 != k2:
            return 0.0
        mu = math.sqrt(mass * mass + sum(c * c for c in k1))
        return delta / (2.0 * mu)

    return (
        Vertex(
            legs=((particle, RAISE), (particle, LOWER)),
            kernel=kernel,
            momentum_conserving=True,
            name=base,
        ),
    )
