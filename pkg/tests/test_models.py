import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradflow.errors import BlowupError, DomainError, InvalidInputError, UnsupportedDimensionError
from gradflow.invariants import complex_pair_invariant, relative_drift
from gradflow.models import (
    ModelSpec,
    REPState,
    complex_pair_system,
    damping_blowup_time,
    damping_forcing,
    from_gaps,
    gamma_system,
    power_sums,
    rep2d_gamma_rhs,
    rep_gap_system,
    restricted_euler_gap_system,
    restricted_euler_system,
    rhs_damping_matrix,
    rhs_re3d_complex_pair,
    rhs_rep,
    rhs_restricted_euler,
    rhs_restricted_euler_gaps,
    rhs_trace,
    scalar_damping_closed_form,
    to_gaps,
    trace_system,
)
from gradflow.spectral import IntegrationOptions, integrate, integrate_matrix_riccati

TIGHT = dict(rel_tol=1e-11, abs_tol=1e-13)


class TestRestrictedEuler:
    def test_three_point_example(self):
        assert np.allclose(rhs_restricted_euler([1.0, 0.0, -1.0]), [-1 / 3, 2 / 3, -1 / 3], atol=1e-15)

    def test_origin_is_rest_point(self):
        assert np.all(rhs_restricted_euler(np.zeros(4)) == 0)

    def test_matches_eliminated_form(self):
        l1, l2 = 1.0, 0.0
        first = rhs_restricted_euler([l1, l2, -l1 - l2])[0]
        assert first == pytest.approx((-l1 ** 2 + 2 * l2 ** 2 + 2 * l1 * l2) / 3)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=9), st.floats(0.1, 5))
    def test_trace_derivative_vanishes(self, lam, theta):
        d = rhs_restricted_euler(np.array(lam), theta)
        assert abs(d.sum()) <= 1e-12 * max(1.0, np.sum(np.square(lam)) * theta)

    def test_gap_form_agrees(self, rng):
        lam = rng.normal(size=5)
        y = to_gaps(lam)
        assert np.allclose(from_gaps(y), lam)
        d = rhs_restricted_euler(lam)
        assert np.allclose(rhs_restricted_euler_gaps(y), to_gaps(d))

    def test_theta_scaling(self, rng):
        lam0 = rng.normal(size=3)
        lam0 -= lam0.mean()
        theta = 2.5
        ts = np.linspace(0, 0.2, 11)
        slow = integrate(restricted_euler_system(), lam0, (0, theta * 0.2),
                         IntegrationOptions(t_eval=theta * ts, **TIGHT))
        fast = integrate(restricted_euler_system(theta), lam0, (0, 0.2), IntegrationOptions(t_eval=ts, **TIGHT))
        assert np.allclose(fast.states, slow.states, rtol=1e-6, atol=1e-12)

    def test_divergence_conserved_with_nonzero_trace(self, rng):
        lam0 = rng.normal(size=4) * 0.3 - 0.2
        rec = integrate(restricted_euler_system(), lam0, (0, 10))
        sums = rec.states.sum(axis=1)
        assert np.max(np.abs(sums - lam0.sum())) <= 1e-8


class TestREP:
    def test_stationary_pair(self):
        assert np.allclose(rhs_rep(REPState(2.0, [1.0, -1.0]), 1.0), 0)

    def test_zero_density_decouples(self, rng):
        lam = rng.normal(size=3)
        d = rhs_rep(np.r_[0.0, lam], 5.0)
        assert d[0] == 0 and np.allclose(d[1:], -lam ** 2)

    def test_uniform_forcing(self):
        # k rho / n = 2 * 3 / 3
        assert np.allclose(rhs_rep(REPState(3.0, [0.0, 0.0, 0.0]), 2.0), [0, 2, 2, 2])

    def test_negative_density_rejected(self):
        with pytest.raises(DomainError):
            REPState(-1.0, [0.0, 0.0])

    def test_density_stays_positive(self, rng):
        for _ in range(5):
            lam0 = np.sort(rng.uniform(-1, 1, size=3))
            y0 = np.r_[rng.uniform(0.1, 1), lam0[0], np.diff(lam0)]
            rec = integrate(rep_gap_system(rng.uniform(-1, 1)), y0, (0, 20))
            assert np.all(rec.states[:, 0] > 0)


class TestTrace:
    def test_three_dimensional_example(self):
        assert np.allclose(rhs_trace([2.0, 1.0], 3), [-2, -2])

    def test_four_dimensional_example(self):
        assert np.allclose(rhs_trace([2.0, 3.0, 1.0], 4), [-6, 0, -14])

    def test_origin(self):
        for n in (3, 4, 6):
            assert np.all(rhs_trace([0.0] * (n - 1), n) == 0)

    def test_two_dimensions_unsupported(self):
        with pytest.raises(UnsupportedDimensionError):
            rhs_trace([1.0], 2)

    @pytest.mark.parametrize("n", [3, 4])
    def test_trace_matches_spectral(self, rng, n):
        lam0 = rng.normal(size=n) * 0.5
        lam0 -= lam0.mean()
        lam0 = np.sort(lam0)
        T = 0.5
        ts = np.linspace(0, T, 11)
        opts = IntegrationOptions(t_eval=ts, **TIGHT)
        spec = integrate(restricted_euler_gap_system(), to_gaps(lam0), (0, T), opts)
        tr = integrate(trace_system(n), power_sums(lam0, n)[1:], (0, T), opts)
        expect = np.array([power_sums(from_gaps(y), n)[1:] for y in spec.states])
        assert np.allclose(tr.states, expect, rtol=1e-5, atol=1e-12)


class TestComplexPair:
    def test_examples(self):
        assert rhs_re3d_complex_pair(3.0, 0.0) == (0.0, 3.0)
        assert rhs_re3d_complex_pair(0.0, 2.0) == (0.0, 4.0)
        b, g = rhs_re3d_complex_pair(1.0, 1.0)
        assert b == -2 and g == pytest.approx(4 / 3)

    def test_invariant_conserved(self, rng):
        y0 = np.array([rng.uniform(0.2, 1), rng.uniform(-1, 1)])
        rec = integrate(complex_pair_system(), y0, (0, 20), IntegrationOptions(**TIGHT))
        vals = [complex_pair_invariant(b, g) for b, g in rec.states]
        assert relative_drift(vals) <= 1e-6


class TestDamping:
    def test_blowup_root(self):
        assert damping_blowup_time(-2.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)
        with pytest.raises(BlowupError) as info:
            scalar_damping_closed_form(-2.0, 1.0, 1.0)
        assert info.value.t_blowup == pytest.approx(math.log(2))

    def test_threshold_value_stays_constant(self):
        for t in (0.0, 1.0, 10.0, 50.0):
            assert scalar_damping_closed_form(-1.0, 1.0, t) == pytest.approx(-1.0)

    def test_complex_datum_finite(self):
        vals = [scalar_damping_closed_form(1j, 1.0, t) for t in np.linspace(0, 30, 301)]
        assert np.all(np.isfinite(vals))

    def test_matrix_zero_damping_is_riccati(self):
        M = np.array([[1.0, 2.0], [0.0, -1.0]])
        assert np.allclose(rhs_damping_matrix(M, np.zeros((2, 2))), -M @ M)

    def test_zero_matrix_stays_zero(self):
        rec = integrate_matrix_riccati(damping_forcing(-np.eye(3)), np.zeros((3, 3)), (0, 5))
        assert np.all(rec.matrices() == 0)

    def test_matrix_matches_closed_form(self, rng):
        beta = 0.7
        M0 = rng.normal(size=(3, 3)) * 0.3
        lam0 = np.linalg.eigvals(M0)
        ts = np.linspace(0, 3, 13)
        rec = integrate_matrix_riccati(damping_forcing(-beta * np.eye(3)), M0, (0, 3),
                                       IntegrationOptions(t_eval=ts, **TIGHT))
        got = rec.spectra(track=True)
        order = [int(np.argmin(np.abs(lam0 - g))) for g in got[0]]
        for j, t in enumerate(ts):
            expect = [scalar_damping_closed_form(lam0[i], beta, t) for i in order]
            assert np.allclose(got[j], expect, rtol=1e-6)


class TestGamma:
    def test_no_density_constant_acceleration(self):
        for G in (0.1, 1.0, 7.0):
            assert rep2d_gamma_rhs(G, 0.3, 1.0, 0.0, 1.0) == 2.0

    def test_unit_indicator(self):
        assert rep2d_gamma_rhs(1.0, 0.0, 2.0, 0.5, 0.25) == pytest.approx(0.5 + 1.0)

    def test_log_term(self):
        assert rep2d_gamma_rhs(math.e, 0.0, 1.0, 1.0, 0.0) == pytest.approx(2.0)

    def test_nonpositive_indicator_rejected(self):
        with pytest.raises(DomainError):
            rep2d_gamma_rhs(0.0, 1.0, 1.0, 1.0, 0.0)
        assert math.isnan(gamma_system(1.0, 1.0, 0.0)(0.0, np.array([-1.0, 0.0]))[1])


class TestModelSpec:
    def test_requires_params(self):
        with pytest.raises(InvalidInputError):
            ModelSpec("RestrictedEulerPoisson", 3, {})

    def test_theta_positive(self):
        with pytest.raises(InvalidInputError):
            ModelSpec("RestrictedEuler", 3, {"theta": 0})

    def test_trace_dimension(self):
        with pytest.raises(UnsupportedDimensionError):
            ModelSpec("TraceDynamics", 2)
