"""Interaction picture, Dyson terms, time-ordered exponential, damped S-matrix."""

import math

import numpy as np
import pytest

from fockscatter.evolution import Propagator
from fockscatter.dyson import (
    InteractionPictureGenerator,
    default_damping,
    dyson_term,
    dyson_term_cube,
    generator_at,
    propagator_interaction_picture,
    scattering_matrix_damped,
    smatrix_first_order,
    time_ordered_exponential,
)
from fockscatter.linalg import max_abs
from fockscatter.scattering import compute_wave_operators, scattering_operator

import oracles
from conftest import PLATEAU_TIME_GRID, phi4_instance


class ConstantGenerator:
    """Duck-typed generator with V(t) = G for all t."""

    def __init__(self, g):
        self.g = np.asarray(g, dtype=complex)
        self.dim = self.g.shape[0]

    def __call__(self, t):
        return self.g


class PhaseGenerator:
    """Two-level V(t) = [[0, g e^{i w t}], [g e^{-i w t}, 0]]."""

    def __init__(self, coupling, omega):
        self.coupling = coupling
        self.omega = omega
        self.dim = 2

    def __call__(self, t):
        z = self.coupling * np.exp(1j * self.omega * t)
        return np.array([[0.0, z], [np.conj(z), 0.0]])


class TestGeneratorAt:
    def test_time_zero_is_interaction_block(self, certified):
        gen = InteractionPictureGenerator(certified)
        v = certified.interaction_dense()
        assert max_abs(generator_at(gen, 0.0) - v) == 0.0

    def test_diagonal_block_time_independent(self):
        # a number-conserving diagonal interaction commutes with the phases
        h = phi4_instance(channels=())  # free
        gen = InteractionPictureGenerator(h)
        assert max_abs(generator_at(gen, 2.0)) == 0.0

    def test_phase_formula_spot_check(self, certified):
        gen = InteractionPictureGenerator(certified)
        t = 0.83
        v = certified.interaction_dense()
        e = certified.energies
        out = generator_at(gen, t)
        for u, w in ((2, 9), (0, 17), (5, 5)):
            expected = v[u, w] * np.exp(1j * (e[u] - e[w]) * t)
            assert out[u, w] == pytest.approx(expected, abs=1e-15)

    def test_hermitian_for_all_times(self, certified):
        gen = InteractionPictureGenerator(certified)
        for t in (0.0, 0.4, -2.7, 11.0):
            m = generator_at(gen, t)
            assert max_abs(m - m.conj().T) < 1e-15

    def test_nonfinite_time_rejected(self, certified):
        gen = InteractionPictureGenerator(certified)
        with pytest.raises(ValueError, match="finite"):
            generator_at(gen, math.nan)


class TestDysonTerm:
    def test_first_order_constant(self):
        g = np.array([[0.0, 1.0], [1.0, 0.0]])
        gen = ConstantGenerator(g)
        t, tp = 1.3, 0.1
        term = dyson_term(gen, 1, t, tp, nodes=8)
        assert max_abs(term - (-1j) * (t - tp) * g) < 1e-13

    def test_second_order_constant(self):
        g = np.array([[0.5, 0.25], [0.25, -0.5]])
        gen = ConstantGenerator(g)
        t, tp = 0.9, -0.4
        term = dyson_term(gen, 2, t, tp, nodes=8)
        expected = (-1j) ** 2 * (t - tp) ** 2 / 2.0 * (g @ g)
        assert max_abs(term - expected) < 1e-13

    def test_two_level_phase_kernel_closed_form(self):
        coupling, omega = 0.3, 1.7
        t, tp = 1.2, -0.8
        gen = PhaseGenerator(coupling, omega)
        term = dyson_term(gen, 2, t, tp, nodes=24)
        exact = oracles.dyson_term2_phase_kernel(coupling, omega, t, tp)
        assert max_abs(np.diag(np.diag(term)) - exact) < 1e-8

    def test_order_validation(self, certified):
        gen = InteractionPictureGenerator(certified)
        with pytest.raises(ValueError, match="order"):
            dyson_term(gen, 0, 1.0, 0.0)
        with pytest.raises(ValueError, match="t >= t_prime"):
            dyson_term(gen, 1, 0.0, 1.0)


class TestSimplexCubeEquivalence:
    def test_order_two_agreement(self):
        rng = np.random.RandomState(12)
        a = rng.randn(3, 3) + 1j * rng.randn(3, 3)
        g = 0.5 * (a + a.conj().T)

        class Rotating:
            dim = 3

            def __call__(self, t):
                phases = np.exp(1j * np.array([0.3, -0.9, 1.4]) * t)
                return phases[:, None] * g * np.conj(phases)[None, :]

        gen = Rotating()
        t, tp = 0.7, -0.5
        simplex = dyson_term(gen, 2, t, tp, nodes=20)
        cube = dyson_term_cube(gen, 2, t, tp, nodes=20)
        assert max_abs(simplex - cube) < 1e-9

    def test_order_three_agreement_constant(self):
        g = np.array([[0.0, 0.4], [0.4, 0.1]])
        gen = ConstantGenerator(g)
        simplex = dyson_term(gen, 3, 1.0, 0.0, nodes=10)
        cube = dyson_term_cube(gen, 3, 1.0, 0.0, nodes=10)
        assert max_abs(simplex - cube) < 1e-12


class TestTimeOrderedExponential:
    def test_order_zero_identity(self, certified):
        gen = InteractionPictureGenerator(certified)
        exp = time_ordered_exponential(gen, 1.0, -1.0, order=0)
        assert max_abs(exp.partial_sums[0] - np.eye(certified.dim)) == 0.0

    def test_commuting_generator_matches_scalar_series(self):
        # Taylor remainder after order 6 at max|g|*dt = 0.2 is ~2.5e-9
        g = np.diag([0.8, -0.3, 0.1])
        gen = ConstantGenerator(g)
        t, tp = 0.25, 0.0
        exp = time_ordered_exponential(
            gen, t, tp, order=6, nodes=6, cube_spot_order=None,
            max_materialized_order=6,
        )
        exact = np.diag(np.exp(-1j * np.diag(g) * (t - tp)))
        assert max_abs(exp.partial_sums[-1] - exact) < 1e-8

    def test_cube_spot_check_recorded(self, certified):
        gen = InteractionPictureGenerator(certified)
        exp = time_ordered_exponential(gen, 0.5, -0.5, order=2, nodes=10, cube_spot_order=2)
        assert exp.cube_spot_order == 2
        assert max_abs(exp.cube_spot_value - exp.terms[2]) < 1e-9

    def test_partial_sums_cumulative(self, certified):
        gen = InteractionPictureGenerator(certified)
        exp = time_ordered_exponential(gen, 1.0, 0.0, order=3, nodes=8, cube_spot_order=None)
        acc = np.eye(certified.dim, dtype=complex)
        for m in range(1, 4):
            acc = acc + exp.terms[m]
            assert max_abs(exp.partial_sums[m] - acc) == 0.0


class TestInteractionPicturePropagator:
    def test_equal_times_identity(self, certified):
        u = propagator_interaction_picture(certified, 1.4, 1.4)
        assert max_abs(u - np.eye(certified.dim)) < 1e-12

    def test_zero_interaction_identity(self):
        h = phi4_instance(coupling=0.0)
        u = propagator_interaction_picture(h, 2.0, -3.0)
        assert max_abs(u - np.eye(h.dim)) < 1e-10

    def test_unitary(self, certified):
        u = propagator_interaction_picture(certified, 1.7, -0.9)
        assert max_abs(u.conj().T @ u - np.eye(certified.dim)) < 1e-9

    def test_composition(self, certified):
        t2, t1, t0 = 1.2, 0.3, -0.8
        u_full = propagator_interaction_picture(certified, t2, t0)
        u_a = propagator_interaction_picture(certified, t2, t1)
        u_b = propagator_interaction_picture(certified, t1, t0)
        assert max_abs(u_full - u_a @ u_b) < 1e-9

    def test_derivative_matches_generator(self):
        # d/dt U(t,t') = -i V(t) U(t,t'), checked by central differences
        h = phi4_instance(coupling=0.2)
        gen = InteractionPictureGenerator(h)
        t, tp = 0.6, -0.2
        errs = []
        for step in (1e-2, 5e-3):
            plus = propagator_interaction_picture(h, t + step, tp)
            minus = propagator_interaction_picture(h, t - step, tp)
            fd = (plus - minus) / (2.0 * step)
            rhs = -1j * gen(t) @ propagator_interaction_picture(h, t, tp)
            errs.append(max_abs(fd - rhs))
        assert errs[0] < 1e-4
        # O(step^2) convergence: halving the step shrinks the error ~4x
        assert errs[1] < errs[0] / 3.0

    def test_matches_dyson_partial_sum_at_small_coupling(self):
        # with partial sum through order 4 the residual scales as g^5
        t, tp = 0.8, -0.6
        errs = {}
        for g in (0.4, 0.2):
            h = phi4_instance(coupling=g)
            gen = InteractionPictureGenerator(h)
            u = propagator_interaction_picture(
                h, t, tp, prop=Propagator(h.full, method="dense-exponential")
            )
            exp = time_ordered_exponential(gen, t, tp, order=4, nodes=12, cube_spot_order=None)
            errs[g] = max_abs(u - exp.partial_sums[-1])
        ratio = errs[0.4] / errs[0.2]
        assert 2**5 * 0.6 <= ratio <= 2**5 * 1.4


class TestDysonOrderScaling:
    def test_error_ratio_tracks_order(self):
        t, tp = 0.8, -0.6
        for k in (1, 2, 3):
            errs = {}
            for g in (0.4, 0.2):
                h = phi4_instance(coupling=g)
                gen = InteractionPictureGenerator(h)
                u = propagator_interaction_picture(
                    h, t, tp, prop=Propagator(h.full, method="dense-exponential")
                )
                exp = time_ordered_exponential(
                    gen, t, tp, order=k, nodes=12, cube_spot_order=None
                )
                errs[g] = max_abs(u - exp.partial_sums[-1])
            ratio = errs[0.4] / errs[0.2]
            target = 2.0 ** (k + 1)
            assert 0.7 * target <= ratio <= 1.3 * target


class TestFirstOrderSmatrix:
    def test_on_shell_peak(self, certified):
        eps = 0.25
        s1 = smatrix_first_order(certified, eps)
        v = certified.interaction_dense()
        e = certified.energies
        degenerate = np.isclose(e[:, None], e[None, :], atol=1e-12)
        peak = -1j * v * (2.0 / eps)
        assert max_abs((s1 - peak)[degenerate]) < 1e-12

    def test_half_width_halves_peak(self, certified):
        eps = 0.3
        s1 = smatrix_first_order(certified, eps)
        v = certified.interaction_dense()
        e = certified.energies
        de = np.abs(e[:, None] - e[None, :])
        ring = np.isclose(de, eps, atol=1e-12)
        if ring.any():
            expected = np.abs(v[ring]) * (1.0 / eps)
            assert np.allclose(np.abs(s1[ring]), expected, atol=1e-12)
        # generic check: |s1| = |v| * 2 eps / (de^2 + eps^2) everywhere
        lorentz = 2.0 * eps / (de * de + eps * eps)
        assert max_abs(np.abs(s1) - np.abs(v) * lorentz) < 1e-12

    def test_eps_scaling_off_shell(self, certified):
        v = np.abs(certified.interaction_dense()) > 1e-15
        de = np.abs(certified.energies[:, None] - certified.energies[None, :])
        offshell = v & (de > 1.5)
        assert offshell.sum() > 0
        values = {}
        for eps in (0.5, 0.25, 0.125):
            values[eps] = np.abs(smatrix_first_order(certified, eps)[offshell])
        # halving eps halves the off-shell amplitude (up to eps^2 corrections)
        r1 = values[0.5] / values[0.25]
        r2 = values[0.25] / values[0.125]
        assert np.all(np.abs(r1 - 2.0) < 0.1)
        assert np.all(np.abs(r2 - 2.0) < 0.03)

    def test_eps_validation(self, certified):
        with pytest.raises(ValueError, match="eps"):
            smatrix_first_order(certified, 0.0)


class TestDampedSmatrix:
    def test_matches_wave_operator_smatrix(self, certified, certified_exact_prop):
        wres = compute_wave_operators(
            certified, time_grid=PLATEAU_TIME_GRID, window=5, tol=1e-5
        )
        rep = scattering_operator(wres, wres)
        s_damped = scattering_matrix_damped(
            certified, eps=0.05, prop=certified_exact_prop, s_max_factor=30.0
        )
        assert max_abs(s_damped - rep.s_matrix) < 1e-3

    def test_off_shell_matches_born_oracle(self, certified_exact_prop, certified):
        h = phi4_instance(coupling=1e-3)
        prop = Propagator(h.full, method="dense-exponential")
        v = np.abs(h.interaction_dense()) > 1e-15
        de = np.abs(h.energies[:, None] - h.energies[None, :])
        offshell = v & (de > 1.5)
        for eps in (0.5, 0.25, 0.125):
            s = scattering_matrix_damped(h, eps, prop=prop, s_max_factor=30.0)
            born = smatrix_first_order(h, eps)
            ratios = np.abs(s[offshell]) / np.abs(born[offshell])
            assert np.all(ratios > 0.7)
            assert np.all(ratios < 1.3)

    def test_default_damping_positive(self, certified):
        eps = default_damping(certified)
        assert eps > 0.0


class TestVectorContractedTerm:
    def test_matches_materialized_term(self, certified):
        from fockscatter.dyson import dyson_term_element

        gen = InteractionPictureGenerator(certified)
        t, tp = 0.7, -0.4
        term = dyson_term(gen, 3, t, tp, nodes=8)
        eye = np.eye(certified.dim, dtype=complex)
        for (i, j) in ((0, 12), (4, 4), (17, 2)):
            element = dyson_term_element(gen, 3, t, tp, eye[:, i], eye[:, j], nodes=8)
            assert element == pytest.approx(term[i, j], abs=1e-13)

    def test_order_guard_points_to_element_route(self, certified):
        gen = InteractionPictureGenerator(certified)
        with pytest.raises(ValueError, match="dyson_term_element"):
            time_ordered_exponential(gen, 1.0, 0.0, order=5)
        # explicit opt-out raises no guard
        exp = time_ordered_exponential(
            gen, 0.2, 0.0, order=5, nodes=4, cube_spot_order=None,
            max_materialized_order=5,
        )
        assert exp.order == 5


class TestAutoNodes:
    def test_doubling_check_selects_count(self, certified):
        from fockscatter.dyson import choose_quadrature_nodes

        gen = InteractionPictureGenerator(certified)
        nodes = choose_quadrature_nodes(gen, 1.0, -1.0)
        assert 8 <= nodes <= 48
        exp = time_ordered_exponential(gen, 1.0, -1.0, order=1, nodes=None,
                                       cube_spot_order=None)
        assert exp.quadrature_nodes == nodes

    def test_cap_warns_with_estimate(self, certified):
        from fockscatter.dyson import choose_quadrature_nodes

        gen = InteractionPictureGenerator(certified)
        with pytest.warns(UserWarning, match="node cap"):
            choose_quadrature_nodes(gen, 60.0, -60.0, tol=1e-14, start=4, cap=8)
