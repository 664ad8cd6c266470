"""Particle systems, grids, basis enumeration, and ladder statistics."""

import math

import numpy as np
import pytest

from fockscatter.fock import (
    LOWER,
    RAISE,
    build_mode_grid,
    build_particle_system,
    dispersion,
    enumerate_basis,
    ladder_matrix,
    vacuum_vector,
)

import oracles


def scalar_system(mass=1.0):
    return build_particle_system({"phi": {"statistics": "boson", "mass": mass}})


def fermion_pair_system(mass=0.5):
    return build_particle_system(
        {
            "e": {"statistics": "fermion", "mass": mass, "conjugate": "ebar"},
            "ebar": {"statistics": "fermion", "mass": mass, "conjugate": "e"},
        }
    )


class TestParticleSystem:
    def test_self_conjugate_scalar(self):
        sys = scalar_system()
        assert sys.particles == ("phi",)
        assert sys.conjugate["phi"] == "phi"
        assert not sys.is_fermion["phi"]

    def test_particle_antiparticle_pair(self):
        sys = fermion_pair_system()
        assert sys.conjugate["e"] == "ebar"
        assert sys.conjugate["ebar"] == "e"
        assert sys.mass["e"] == sys.mass["ebar"] == 0.5

    def test_mass_mismatch_rejected(self):
        with pytest.raises(ValueError, match="mass mismatch"):
            build_particle_system(
                {
                    "e": {"statistics": "fermion", "mass": 0.5, "conjugate": "ebar"},
                    "ebar": {"statistics": "fermion", "mass": 0.6, "conjugate": "e"},
                }
            )

    def test_non_involutive_conjugation_rejected(self):
        with pytest.raises(ValueError, match="involutive"):
            build_particle_system(
                {
                    "a": {"statistics": "boson", "mass": 1.0, "conjugate": "b"},
                    "b": {"statistics": "boson", "mass": 1.0, "conjugate": "c"},
                    "c": {"statistics": "boson", "mass": 1.0, "conjugate": "a"},
                }
            )

    def test_statistics_mismatch_rejected(self):
        with pytest.raises(ValueError, match="statistics mismatch"):
            build_particle_system(
                {
                    "a": {"statistics": "boson", "mass": 1.0, "conjugate": "b"},
                    "b": {"statistics": "fermion", "mass": 1.0, "conjugate": "a"},
                }
            )

    def test_negative_mass_rejected(self):
        with pytest.raises(ValueError, match="negative mass"):
            build_particle_system({"phi": {"statistics": "boson", "mass": -1.0}})

    def test_empty_table_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            build_particle_system({})

    def test_unknown_conjugate_rejected(self):
        with pytest.raises(ValueError, match="not in the table"):
            build_particle_system(
                {"a": {"statistics": "boson", "mass": 1.0, "conjugate": "ghost"}}
            )


class TestDispersion:
    def test_three_four_five(self):
        sys = scalar_system(mass=3.0)
        assert dispersion(sys, "phi", (4.0,)) == pytest.approx(5.0, abs=1e-15)

    def test_massless_zero_mode(self):
        sys = scalar_system(mass=0.0)
        assert dispersion(sys, "phi", (0.0,)) == 0.0

    def test_relativistic_formula(self):
        sys = scalar_system(mass=1.0)
        assert dispersion(sys, "phi", (1.0,)) == pytest.approx(math.sqrt(2.0), abs=1e-12)

    def test_unknown_particle(self):
        with pytest.raises(ValueError, match="unknown particle"):
            dispersion(scalar_system(), "psi", (0.0,))


class TestModeGrid:
    def test_symmetric_closure(self):
        grid = build_mode_grid(cutoff=2.0, spacing=1.0, dimension=1)
        ivecs = {p.ivec for p in grid.points}
        assert ivecs == {(-2,), (-1,), (0,), (1,), (2,)}
        for iv in ivecs:
            assert tuple(-c for c in iv) in ivecs

    def test_deterministic_ordering(self):
        grid = build_mode_grid(cutoff=1.0, spacing=1.0, dimension=2)
        ivecs = [p.ivec for p in grid.points]
        # sorted by |k|^2 then components
        assert ivecs[0] == (0, 0)
        assert ivecs[1:5] == [(-1, 0), (0, -1), (0, 1), (1, 0)]
        assert ivecs[5:] == [(-1, -1), (-1, 1), (1, -1), (1, 1)]

    def test_boundary_mode_kept(self):
        grid = build_mode_grid(cutoff=3.0, spacing=1.5)
        assert {p.ivec for p in grid.points} == {(-2,), (-1,), (0,), (1,), (2,)}

    def test_invalid_parameters(self):
        with pytest.raises(ValueError):
            build_mode_grid(cutoff=0.0, spacing=1.0)
        with pytest.raises(ValueError):
            build_mode_grid(cutoff=1.0, spacing=-0.5)

    def test_internal_labels_sorted(self):
        grid = build_mode_grid(1.0, 1.0, internal_labels={"e": ["up", "down"]})
        assert grid.labels_for("e") == ("down", "up")
        assert grid.labels_for("phi") == ("",)

    def test_unknown_ivec_rejected(self):
        grid = build_mode_grid(1.0, 1.0)
        with pytest.raises(ValueError, match="not on the grid"):
            grid.point_from_ivec((5,))


class TestEnumerateBasis:
    def test_single_boson_single_mode(self):
        sys = scalar_system()
        grid = build_mode_grid(cutoff=0.5, spacing=1.0)  # only k = 0
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        assert basis.dim == 3
        assert basis.states[0] == (0,)
        assert [s[0] for s in basis.states] == [0, 1, 2]

    def test_fermion_two_modes(self):
        sys = build_particle_system({"e": {"statistics": "fermion", "mass": 0.5}})
        # two slots: one momentum point, two internal labels
        grid = build_mode_grid(0.4, 1.0, internal_labels={"e": ["a", "b"]})
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        assert basis.dim == 4  # 2^2 fermionic states
        assert all(max(s, default=0) <= 1 for s in basis.states)

    def test_boson_three_modes_counts(self):
        sys = scalar_system()
        grid = build_mode_grid(cutoff=1.0, spacing=1.0)
        assert len(grid.points) == 3
        basis = enumerate_basis(sys, grid, n_max_quanta=3)
        assert basis.dim == 20  # C(3+3, 3)
        brute = oracles.brute_force_states(sys, grid, 3)
        assert set(basis.states) == set(brute)

    def test_vacuum_first_and_energy_sorted(self):
        sys = scalar_system()
        grid = build_mode_grid(cutoff=2.0, spacing=1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=3)
        assert basis.states[0] == (0,) * len(basis.slots)
        assert basis.energies[0] == 0.0
        assert np.all(np.diff(basis.energies) >= -1e-12)

    def test_index_bijection(self):
        sys = fermion_pair_system()
        grid = build_mode_grid(cutoff=1.0, spacing=1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        for i, state in enumerate(basis.states):
            assert basis.index(state) == i

    def test_energy_cap(self):
        sys = scalar_system()
        grid = build_mode_grid(cutoff=1.0, spacing=1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=4, energy_cap=2.5)
        assert all(e <= 2.5 + 1e-9 for e in basis.energies)
        brute = oracles.brute_force_states(sys, grid, 4, energy_cap=2.5)
        assert set(basis.states) == set(brute)

    def test_hard_limit_reports_required_size(self):
        sys = scalar_system()
        grid = build_mode_grid(cutoff=1.0, spacing=1.0)
        with pytest.raises(ValueError, match="basis size 20 exceeds hard limit 10"):
            enumerate_basis(sys, grid, n_max_quanta=3, hard_limit=10)

    def test_negative_quanta_rejected(self):
        sys = scalar_system()
        grid = build_mode_grid(1.0, 1.0)
        with pytest.raises(ValueError):
            enumerate_basis(sys, grid, n_max_quanta=-1)


class TestLadderMatrix:
    def test_bosonic_raise_amplitude(self):
        sys = scalar_system()
        grid = build_mode_grid(0.5, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        a_dag = ladder_matrix(basis, "phi", (0,), RAISE).toarray()
        one = basis.index((1,))
        two = basis.index((2,))
        assert a_dag[two, one] == pytest.approx(math.sqrt(2.0), abs=1e-15)

    def test_pauli_exclusion(self):
        sys = build_particle_system({"e": {"statistics": "fermion", "mass": 0.5}})
        grid = build_mode_grid(0.5, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=1)
        a_dag = ladder_matrix(basis, "e", (0,), RAISE).toarray()
        occupied = basis.index((1,))
        assert np.all(a_dag[:, occupied] == 0.0)

    def test_fermion_sign_convention(self):
        sys = build_particle_system({"e": {"statistics": "fermion", "mass": 0.5}})
        grid = build_mode_grid(0.4, 1.0, internal_labels={"e": ["a", "b"]})
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        adag_1 = ladder_matrix(basis, "e", (0,), RAISE, label="a").toarray()
        adag_2 = ladder_matrix(basis, "e", (0,), RAISE, label="b").toarray()
        vac = vacuum_vector(basis)
        both_first = adag_1 @ (adag_2 @ vac)
        both_second = adag_2 @ (adag_1 @ vac)
        # anticommutation on the full 4-dim space
        assert np.allclose(both_first, -both_second)
        assert np.linalg.norm(both_first) == pytest.approx(1.0)
        # explicit sign: raising the later slot past an occupied earlier slot
        state_10 = basis.index((1, 0))
        target_11 = basis.index((1, 1))
        assert adag_2[target_11, state_10] == -1.0

    def test_lower_annihilates_vacuum(self):
        sys = fermion_pair_system()
        grid = build_mode_grid(1.0, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        vac = vacuum_vector(basis)
        for slot in basis.slots:
            a = ladder_matrix(basis, slot.particle, slot.point.ivec, LOWER, slot.label)
            assert np.all((a @ vac) == 0.0)

    def test_raise_is_adjoint_of_lower(self):
        # compressions of mutually adjoint operators stay mutually adjoint
        sys = scalar_system()
        grid = build_mode_grid(1.0, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=3)
        a_dag = ladder_matrix(basis, "phi", (1,), RAISE).toarray()
        a = ladder_matrix(basis, "phi", (1,), LOWER).toarray()
        assert np.array_equal(a_dag, a.conj().T)

    def test_truncation_boundary_maps_to_zero(self):
        sys = scalar_system()
        grid = build_mode_grid(0.5, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=2)
        a_dag = ladder_matrix(basis, "phi", (0,), RAISE).toarray()
        top = basis.index((2,))
        assert np.all(a_dag[:, top] == 0.0)

    def test_unknown_mode_rejected(self):
        sys = scalar_system()
        grid = build_mode_grid(0.5, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=1)
        with pytest.raises(ValueError, match="unknown mode"):
            ladder_matrix(basis, "phi", (7,), RAISE)
        with pytest.raises(ValueError, match="unknown mode"):
            ladder_matrix(basis, "psi", (0,), RAISE)


def commutator(a, b):
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


class TestAlgebraProperties:
    """Canonical (anti)commutation relations on interior states."""

    def test_bosonic_commutation_interior(self):
        sys = scalar_system()
        grid = build_mode_grid(1.0, 1.0)
        basis = enumerate_basis(sys, grid, n_max_quanta=4)
        slots = range(len(basis.slots))
        interior = np.array([sum(s) <= basis.n_max_quanta - 2 for s in basis.states])
        ops = {
            (pos, kind): ladder_matrix(
                basis, basis.slots[pos].particle, basis.slots[pos].point.ivec, kind,
                basis.slots[pos].label,
            ).toarray()
            for pos in slots
            for kind in (RAISE, LOWER)
        }
        eye = np.eye(basis.dim)
        for i in slots:
            for j in slots:
                comm = commutator(ops[(i, LOWER)], ops[(j, RAISE)])
                expected = eye if i == j else 0.0 * eye
                assert np.max(np.abs((comm - expected)[:, interior])) < 1e-12
                comm2 = commutator(ops[(i, LOWER)], ops[(j, LOWER)])
                assert np.max(np.abs(comm2[:, interior])) < 1e-12

    def test_fermionic_anticommutation_full(self):
        sys = fermion_pair_system()
        grid = build_mode_grid(1.0, 1.0)
        # fermionic slots saturate at occupation 1, so with n_max >= slot
        # count there is no truncation boundary at all
        basis = enumerate_basis(sys, grid, n_max_quanta=6)
        n_slots = len(basis.slots)
        assert basis.dim == 2**n_slots
        ops = {
            (pos, kind): ladder_matrix(
                basis, basis.slots[pos].particle, basis.slots[pos].point.ivec, kind,
                basis.slots[pos].label,
            ).toarray()
            for pos in range(n_slots)
            for kind in (RAISE, LOWER)
        }
        eye = np.eye(basis.dim)
        for i in range(n_slots):
            for j in range(n_slots):
                anti = anticommutator(ops[(i, LOWER)], ops[(j, RAISE)])
                expected = eye if i == j else 0.0 * eye
                assert np.max(np.abs(anti - expected)) == 0.0
                assert np.max(np.abs(anticommutator(ops[(i, LOWER)], ops[(j, LOWER)]))) == 0.0
                assert np.max(np.abs(anticommutator(ops[(i, RAISE)], ops[(j, RAISE)]))) == 0.0
