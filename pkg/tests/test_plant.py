import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from higsni.errors import (DimensionMismatch, EqualityInfeasible,
                           PreconditionQ0, SearchInconclusive,
                           SingularAtFrequency, SingularMatrix)
from higsni.numerics import is_pos_def
from higsni.plant import (PlantModel, certify, dc_gain, default_grid,
                          find_ni_certificate, freq_response,
                          hamiltonian_matrix, ni_frequency_test,
                          ni_hamiltonian_test, second_order_plant)

from helpers import random_ni_plant, scalar_plant

REFERENCE_KH = np.diag([0.5617, 0.6003])


def certificate_ok(plant, cert):
    A, B, C, Y = plant.A, plant.B, plant.C, cert.Y
    L = A @ Y + Y @ A.T
    eq_bound = 1e-6 * (np.linalg.norm(B) + np.linalg.norm(A, 2)
                       * np.linalg.norm(Y, 2) * np.linalg.norm(C, 2))
    return (np.allclose(Y, Y.T)
            and np.linalg.eigvalsh(Y)[0] > 0
            and np.linalg.norm(B + A @ Y @ C.T) <= eq_bound
            and np.linalg.eigvalsh(L)[-1] <= 1e-8 * np.linalg.norm(L, 2)
            + 1e-10)


class TestModel:
    def test_rejects_singular_A(self):
        with pytest.raises(SingularMatrix):
            PlantModel(np.zeros((1, 1)), np.ones((1, 1)), np.ones((1, 1)))

    def test_rejects_non_square(self):
        with pytest.raises(DimensionMismatch):
            PlantModel(-np.eye(2), np.ones((2, 1)), np.ones((2, 2)))

    def test_round_trip(self, mems_plant):
        again = PlantModel.from_dict(mems_plant.to_dict())
        np.testing.assert_array_equal(again.A, mems_plant.A)
        np.testing.assert_array_equal(again.C, mems_plant.C)


class TestDcGain:
    def test_second_order(self):
        assert dc_gain(second_order_plant(2.0, 0.3))[0, 0] == \
            pytest.approx(0.25, rel=1e-14)

    def test_scalar(self):
        assert dc_gain(scalar_plant(-1.0, 1.0, 1.0))[0, 0] == 1.0

    def test_mems(self, mems_plant):
        A, B, C = mems_plant.A, mems_plant.B, mems_plant.C
        oracle = -C @ np.linalg.solve(A, B)
        G0 = dc_gain(mems_plant)
        np.testing.assert_allclose(G0, oracle, rtol=1e-10)
        assert is_pos_def(np.linalg.inv(REFERENCE_KH) - 0.5 * (G0 + G0.T))


class TestFreqResponse:
    def test_zero_frequency_is_dc(self, mems_plant):
        np.testing.assert_allclose(freq_response(mems_plant, 0.0),
                                   dc_gain(mems_plant), rtol=0, atol=1e-10)

    def test_hand_values(self):
        g = freq_response(scalar_plant(-1.0, 1.0, 1.0), 1.0)[0, 0]
        assert g == pytest.approx(0.5 - 0.5j, abs=1e-15)
        g = freq_response(second_order_plant(1.0, 0.5), 1.0)[0, 0]
        assert g == pytest.approx(-1j, abs=1e-15)

    def test_undamped_pole(self):
        p = PlantModel(np.array([[0.0, 1.0], [-4.0, 0.0]]),
                       np.array([[0.0], [1.0]]), np.array([[1.0, 0.0]]))
        with pytest.raises(SingularAtFrequency):
            freq_response(p, 2.0)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0.1, 10.0), st.floats(0.05, 2.0), st.floats(1e-3, 1e3))
    def test_second_order_closed_form(self, wn, zeta, w):
        g = freq_response(second_order_plant(wn, zeta), w)[0, 0]
        oracle = 1.0 / (wn * wn - w * w + 2j * zeta * wn * w)
        assert abs(g - oracle) <= 1e-10 * abs(oracle)


class TestSweep:
    grid = np.logspace(-2, 3, 200)

    def test_first_order(self):
        v = ni_frequency_test(scalar_plant(-1.0, 1.0, 1.0), self.grid)
        assert v.is_ni
        # j(G - G*) = 2 w / (1 + w^2) at the worst grid point
        w = v.detail['worst_omega']
        assert v.detail['min_eigenvalue'] == pytest.approx(
            2 * w / (1 + w * w), rel=1e-12)

    def test_negated(self):
        p = scalar_plant(-1.0, 1.0, -1.0)
        v = ni_frequency_test(p, self.grid)
        assert v.is_ni is False
        for w in self.grid:
            g = freq_response(p, w)[0, 0]
            assert (1j * (g - g.conjugate())).real < 0

    def test_second_order_lossy(self):
        assert ni_frequency_test(second_order_plant(1.0, 0.5), self.grid).is_ni

    def test_default_grid_span(self, mems_plant):
        g = default_grid(mems_plant)
        lam = np.abs(np.linalg.eigvals(mems_plant.A))
        assert g.size == 400
        assert g[0] == pytest.approx(0.01 * lam.min())
        assert g[-1] == pytest.approx(100 * lam.max())


class TestHamiltonian:
    def test_scalar_hand_computed(self):
        p = scalar_plant(-1.0, 2.0, 1.0)
        N0, Q0 = hamiltonian_matrix(p)
        np.testing.assert_allclose(N0, [[-0.5, -1.0], [0.25, 0.5]])
        assert Q0[0, 0] == -4.0
        v = ni_hamiltonian_test(p)
        assert v.is_ni
        assert np.allclose(v.detail['eigenvalues'], 0.0, atol=1e-7)
        assert [c['multiplicity'] for c in v.detail['axis_clusters']] == [2]

    def test_relative_degree_two(self):
        with pytest.raises(PreconditionQ0):
            ni_hamiltonian_test(second_order_plant(2.0, 0.3))

    def test_mems_precondition_fails(self, mems_plant):
        # the printed realization has an indefinite CB + B^T C^T
        S = mems_plant.C @ mems_plant.B
        lam = np.linalg.eigvalsh(S + S.T)
        assert lam[0] < 0 < lam[1]
        with pytest.raises(PreconditionQ0):
            ni_hamiltonian_test(mems_plant)

    def test_matches_literature_form(self):
        # N0 written with S = CB + B^T C^T as commonly printed
        rng = np.random.default_rng(3)
        p, _ = random_ni_plant(rng, 4, 2)
        A, B, C = p.A, p.B, p.C
        Si = np.linalg.inv(C @ B + B.T @ C.T)
        oracle = np.block([[A - B @ Si @ C @ A, -B @ Si @ B.T],
                           [A.T @ C.T @ Si @ C @ A,
                            -A.T + A.T @ C.T @ Si @ B.T]])
        np.testing.assert_allclose(hamiltonian_matrix(p)[0], oracle,
                                   rtol=1e-12, atol=1e-12)


class TestCertificate:
    def test_unit_second_order(self):
        p = second_order_plant(1.0, 0.5)
        cert = find_ni_certificate(p)
        assert certificate_ok(p, cert)
        np.testing.assert_allclose(cert.Y, np.eye(2), atol=1e-6)

    def test_scalar(self):
        cert = find_ni_certificate(scalar_plant(-1.0, 1.0, 1.0))
        assert cert.Y[0, 0] == pytest.approx(1.0, rel=1e-9)

    def test_negated_fails(self):
        with pytest.raises((EqualityInfeasible, SearchInconclusive)):
            find_ni_certificate(scalar_plant(-1.0, 1.0, -1.0))

    def test_mems_equality_infeasible(self, mems_plant):
        with pytest.raises(EqualityInfeasible):
            find_ni_certificate(mems_plant)

    @pytest.mark.parametrize('seed', range(12))
    def test_random_ni(self, seed):
        rng = np.random.default_rng(seed)
        p, _ = random_ni_plant(rng, int(rng.integers(1, 5)),
                               int(rng.integers(1, 3)))
        if p.C.shape[0] > p.n_states:
            pytest.skip("more outputs than states")
        cert = find_ni_certificate(p)
        assert certificate_ok(p, cert)
        assert ni_frequency_test(p).is_ni
        G0 = dc_gain(p)
        np.testing.assert_allclose(G0, p.C @ cert.Y @ p.C.T, rtol=1e-6,
                                   atol=1e-9 * np.abs(G0).max())


class TestCertify:
    def test_auto_falls_back_to_sweep(self, mems_plant):
        v = certify(mems_plant)
        assert v.method == 'sweep'
        assert 'fallback_reason' in v.detail

    def test_auto_uses_hamiltonian(self):
        v = certify(scalar_plant(-1.0, 2.0, 1.0))
        assert v.method == 'hamiltonian' and v.is_ni

    def test_certificate_method(self):
        v = certify(second_order_plant(1.0, 0.5), method='certificate')
        assert v.is_ni is True
        v = certify(scalar_plant(-1.0, 1.0, -1.0), method='certificate')
        assert v.is_ni in (False, None)

    def test_verdict_is_json_ready(self, mems_plant):
        import json
        json.dumps(certify(mems_plant).to_dict())
