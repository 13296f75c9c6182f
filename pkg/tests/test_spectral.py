import math

import numpy as np
import pytest

from gradflow.errors import InvalidInputError, RHSFailureError, StiffnessError
from gradflow.models import restricted_euler_forcing, restricted_euler_system
from gradflow.spectral import (
    BlowupInfo,
    Event,
    GradientTensor,
    IntegrationOptions,
    Spectrum,
    TrajectoryRecord,
    charpoly_coefficients,
    charpoly_residual,
    eigendecompose,
    fit_blowup_time,
    integrate,
    integrate_matrix_riccati,
    sort_eigenvalues,
    track_eigenvalues,
)


class TestEigendecompose:
    def test_shear_layer_spectrum_ignores_shear(self):
        for shear in (0.0, 7.0, -3.5):
            M = [[0, shear, 0], [0, -2.0, 0], [0, 0, 2.0]]
            assert np.allclose(eigendecompose(M).values, [-2, 0, 2], atol=1e-12)

    def test_identity(self):
        assert np.allclose(eigendecompose(np.eye(3)).values, [1, 1, 1])

    def test_symmetric_swap(self):
        assert np.allclose(eigendecompose([[0, 1], [1, 0]]).values, [-1, 1])

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidInputError):
            eigendecompose([[np.nan, 0], [0, 1]])

    def test_sorted_and_conjugate_closed(self, rng):
        for _ in range(20):
            spec = eigendecompose(rng.normal(size=(5, 5)))
            v = spec.values
            assert np.all(np.diff(v.real) >= 0)
            assert spec.is_conjugate_closed()

    def test_charpoly_residual_small(self, rng):
        for _ in range(20):
            M = rng.normal(size=(4, 4)) * 3
            assert charpoly_residual(M, eigendecompose(M)) <= 1e-8


def test_charpoly_coefficients_of_companion():
    # (x - 1)(x - 2)(x - 3) = x^3 - 6x^2 + 11x - 6
    assert np.allclose(charpoly_coefficients(np.diag([1.0, 2.0, 3.0])), [1, -6, 11, -6])


def test_sort_keeps_tie_order_stable():
    v = sort_eigenvalues([1 + 1j, 1 - 1j, -2])
    assert np.allclose(v, [-2, 1 - 1j, 1 + 1j])


class TestTypes:
    def test_incompressible_flag_checks_sum(self):
        Spectrum([1, 0, -1], incompressible=True)
        with pytest.raises(InvalidInputError):
            Spectrum([1, 0, -0.9], incompressible=True)

    def test_gradient_tensor_symmetry(self):
        assert GradientTensor([[1, 2], [2, 3]]).is_symmetric()
        assert not GradientTensor([[1, 2], [2.1, 3]]).is_symmetric()
        assert GradientTensor([[1, 2], [3, 4]]).trace == 5

    def test_trajectory_requires_increasing_times(self):
        with pytest.raises(InvalidInputError):
            TrajectoryRecord([0.0, 0.0], [[1.0], [2.0]])

    def test_trajectory_blowup_metadata_consistency(self):
        with pytest.raises(InvalidInputError):
            TrajectoryRecord([0.0, 1.0], [[1.0], [2.0]], blowup=BlowupInfo(0.5, (1,), 1e9, 1e8))
        with pytest.raises(InvalidInputError):
            TrajectoryRecord([0.0, 1.0], [[1.0], [2.0]], blowup=BlowupInfo(2.0, (1,), 1e7, 1e8))


class TestIntegrate:
    def test_scalar_riccati_blowup_time(self):
        rec = integrate(lambda t, y: y * y, [1.0], (0.0, 10.0))
        assert rec.status == "blowup"
        assert rec.blowup.t_star_estimate == pytest.approx(1.0, rel=1e-2)
        assert rec.blowup.terminal_norm >= 1e8
        assert rec.blowup.orthant == (1,)

    def test_scalar_riccati_decay(self):
        rec = integrate(lambda t, y: y * y, [-1.0], (0.0, 100.0))
        assert rec.blowup is None
        assert rec.times[-1] == 100.0
        assert rec.final_state[0] == pytest.approx(-1 / 101, rel=1e-7)

    def test_zero_rhs_keeps_zero(self):
        rec = integrate(lambda t, y: np.zeros_like(y), np.zeros(3), (0.0, 5.0))
        assert np.all(rec.states == 0)

    def test_sample_count_lands_on_grid(self):
        rec = integrate(lambda t, y: -y, [1.0], (0.0, 2.0), IntegrationOptions(sample_count=21))
        assert np.allclose(rec.times, np.linspace(0, 2, 21), atol=0, rtol=0)
        assert np.allclose(rec.states[:, 0], np.exp(-rec.times), rtol=1e-7)

    def test_complex_state(self):
        rec = integrate(lambda t, y: 1j * y, [1.0 + 0j], (0.0, math.pi))
        assert rec.final_state[0] == pytest.approx(-1.0, abs=1e-7)

    def test_nan_rhs_raises(self):
        with pytest.raises(RHSFailureError):
            integrate(lambda t, y: np.array([np.nan]), [1.0], (0.0, 1.0))

    def test_stiffness_error_carries_partial_record(self):
        # y' = -1/y reaches y = 0 in finite time without crossing the norm threshold
        def rhs(t, y):
            return np.where(y > 0, -1.0 / np.sqrt(np.abs(y)), np.nan)

        with pytest.raises((StiffnessError, RHSFailureError)) as info:
            integrate(rhs, [1.0], (0.0, 5.0))
        partial = info.value.partial
        assert partial.times[-1] < 5.0 and len(partial) >= 2

    def test_invalid_span(self):
        with pytest.raises(InvalidInputError):
            integrate(lambda t, y: y, [1.0], (1.0, 1.0))

    def test_terminal_event_located_on_interpolant(self):
        ev = Event(lambda t, y: y[0] - 0.5, terminal=True, direction=-1, name="half")
        rec = integrate(lambda t, y: -y, [1.0], (0.0, 10.0), events=[ev])
        assert rec.status == "event:half"
        assert rec.times[-1] == pytest.approx(math.log(2), abs=1e-9)

    def test_convergence_order(self):
        errs = []
        for h in (0.2, 0.1, 0.05):
            rec = integrate(lambda t, y: y * y, [-1.0], (0.0, 4.0), IntegrationOptions(fixed_step=h))
            errs.append(abs(rec.final_state[0] + 1 / 5))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 4)


def test_fit_blowup_time_exact_pole():
    t = np.linspace(0.5, 0.9, 10)
    assert fit_blowup_time(t, 3.0 / (1.0 - t)) == pytest.approx(1.0, rel=1e-12)


def test_track_eigenvalues_follows_crossing_branches():
    ts = np.linspace(-1, 1, 9)
    # two real branches that cross at t = 0 with complex partners keeping identity
    samples = [[t + 0.1j, -t - 0.1j] for t in ts]
    tracked = track_eigenvalues(samples)
    assert np.allclose(tracked[:, 0].imag, tracked[0, 0].imag)


class TestMatrixRiccati:
    def test_isospectral_decay(self, rng):
        M0 = rng.normal(size=(3, 3))
        ts = np.linspace(0, 1, 11)
        lam0 = np.linalg.eigvals(M0)
        # keep clear of real negative poles
        M0 = M0 + (0.1 - min(0, lam0.real.min())) * np.eye(3)
        lam0 = np.linalg.eigvals(M0)
        rec = integrate_matrix_riccati(None, M0, (0, 1), IntegrationOptions(rel_tol=1e-10, abs_tol=1e-12, t_eval=ts))
        got = rec.spectra(track=True)
        order = np.argsort(np.abs(got[0][:, None] - lam0[None, :]), axis=1)[:, 0]
        expect = lam0[order][None, :] / (1 + lam0[order][None, :] * ts[:, None])
        assert np.allclose(got, expect, rtol=1e-6)

    def test_nilpotent_is_fixed(self):
        rec = integrate_matrix_riccati(None, [[0, 1], [0, 0]], (0, 3))
        assert np.allclose(rec.matrices()[-1], [[0, 1], [0, 0]])

    def test_restricted_euler_contracting_data_decays(self):
        M0 = -np.diag([1.0, 1.0, -2.0])
        rec = integrate_matrix_riccati(restricted_euler_forcing, M0, (0, 100))
        assert rec.blowup is None
        assert np.max(np.abs(rec.matrices()[-1])) < 0.05

    def test_spectral_matrix_consistency(self, rng):
        # diagonalizable with distinct real eigenvalues, trace free
        lam = np.array([0.3, -0.1, -0.2])
        P = rng.normal(size=(3, 3))
        M0 = P @ np.diag(lam) @ np.linalg.inv(P)
        ts = np.linspace(0, 2, 9)
        opts = IntegrationOptions(rel_tol=1e-11, abs_tol=1e-13, t_eval=ts)
        mat = integrate_matrix_riccati(restricted_euler_forcing, M0, (0, 2), opts).spectra()
        spec = integrate(restricted_euler_system(), np.sort(lam), (0, 2), opts).states
        assert np.allclose(np.sort(mat.real, axis=1), np.sort(spec, axis=1), rtol=1e-5, atol=1e-12)
