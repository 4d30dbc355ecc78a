import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from augcov.errors import (
    DimensionMismatch,
    EmptyInput,
    NoConvergence,
    NonPositiveEigenvalue,
    NotSPD,
    NotSymmetric,
)
from augcov.spd import (
    SpdMatrix,
    TangentSymm,
    affine_invariant_distance,
    exp_map,
    frechet_mean,
    log_map,
    symm_fn,
)

from conftest import random_spd, random_symmetric


class TestSpdMatrix:
    def test_symmetrizes_on_construction(self):
        m = np.array([[2.0, 1.0 + 1e-12], [1.0, 2.0]])
        spd = SpdMatrix(m)
        assert np.array_equal(spd.values, spd.values.T)

    def test_rejects_asymmetric(self):
        with pytest.raises(NotSymmetric):
            SpdMatrix(np.array([[2.0, 1.0], [0.0, 2.0]]))

    def test_rejects_semidefinite(self):
        with pytest.raises(NotSPD):
            SpdMatrix(np.diag([1.0, 0.0]))

    def test_rejects_negative(self):
        with pytest.raises(NotSPD):
            SpdMatrix(np.diag([1.0, -0.5]))

    def test_values_frozen(self):
        spd = SpdMatrix(np.eye(3))
        with pytest.raises(ValueError):
            spd.values[0, 0] = 5.0


class TestSymmFn:
    def test_log_of_identity_is_zero(self):
        assert np.allclose(symm_fn(np.eye(3), "log"), np.zeros((3, 3)))

    def test_sqrt_diagonal(self):
        out = symm_fn(np.diag([4.0, 9.0]), "sqrt")
        assert np.allclose(out, np.diag([2.0, 3.0]))

    def test_log_exp_round_trip(self, rng):
        m = random_spd(rng, 5).values
        back = symm_fn(symm_fn(m, "log"), "exp")
        assert np.linalg.norm(back - m) < 1e-8

    def test_inv_sqrt(self, rng):
        m = random_spd(rng, 4).values
        isq = symm_fn(m, "inv_sqrt")
        assert np.allclose(isq @ m @ isq, np.eye(4), atol=1e-10)

    def test_nonpositive_eigenvalue_reported(self):
        with pytest.raises(NonPositiveEigenvalue) as err:
            symm_fn(np.diag([1.0, -2.0]), "log")
        assert err.value.eigenvalue == pytest.approx(-2.0)

    def test_exp_accepts_indefinite(self, rng):
        s = random_symmetric(rng, 4)
        out = symm_fn(s, "exp")
        assert np.all(np.linalg.eigvalsh(out) > 0)


class TestDistance:
    def test_identity_to_itself(self):
        eye = SpdMatrix(np.eye(4))
        assert affine_invariant_distance(eye, eye) == 0.0

    def test_log_eigenvalue_case(self):
        # eigenvalues of diag(e, 1/e) against I are e and 1/e: sqrt(1 + 1) = sqrt(2)
        eye = SpdMatrix(np.eye(2))
        other = SpdMatrix(np.diag([np.e, 1.0 / np.e]))
        assert affine_invariant_distance(eye, other) == pytest.approx(np.sqrt(2.0))

    def test_matches_direct_spectrum_oracle(self, rng):
        # eigenvalues of inv(P1) @ P2 (similar to the whitened product)
        for _ in range(20):
            p1 = random_spd(rng, 4)
            p2 = random_spd(rng, 4)
            spectrum = np.linalg.eigvals(np.linalg.inv(p1.values) @ p2.values)
            oracle = np.sqrt(np.sum(np.log(np.real(spectrum)) ** 2))
            assert affine_invariant_distance(p1, p2) == pytest.approx(oracle, abs=1e-10)

    def test_symmetry(self, rng):
        for _ in range(20):
            p1 = random_spd(rng, 5)
            p2 = random_spd(rng, 5)
            d12 = affine_invariant_distance(p1, p2)
            d21 = affine_invariant_distance(p2, p1)
            assert abs(d12 - d21) <= 1e-10

    def test_congruence_invariance(self, rng):
        for _ in range(10):
            p1 = random_spd(rng, 4)
            p2 = random_spd(rng, 4)
            w = rng.standard_normal((4, 4)) + 4.0 * np.eye(4)
            q1 = SpdMatrix(w @ p1.values @ w.T)
            q2 = SpdMatrix(w @ p2.values @ w.T)
            assert affine_invariant_distance(q1, q2) == pytest.approx(
                affine_invariant_distance(p1, p2), abs=1e-8
            )

    def test_inversion_invariance(self, rng):
        for _ in range(10):
            p1 = random_spd(rng, 4)
            p2 = random_spd(rng, 4)
            i1 = SpdMatrix(np.linalg.inv(p1.values))
            i2 = SpdMatrix(np.linalg.inv(p2.values))
            assert affine_invariant_distance(i1, i2) == pytest.approx(
                affine_invariant_distance(p1, p2), abs=1e-8
            )

    def test_triangle_inequality(self, rng):
        for _ in range(50):
            a, b, c = (random_spd(rng, 3) for _ in range(3))
            dab = affine_invariant_distance(a, b)
            dbc = affine_invariant_distance(b, c)
            dac = affine_invariant_distance(a, c)
            assert dac <= dab + dbc + 1e-9

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            affine_invariant_distance(SpdMatrix(np.eye(2)), SpdMatrix(np.eye(3)))

    @given(dim=st.integers(min_value=2, max_value=6), seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_zero_iff_equal(self, dim, seed):
        rng = np.random.default_rng(seed)
        p = random_spd(rng, dim)
        q = random_spd(rng, dim)
        assert affine_invariant_distance(p, p) < 1e-12
        if not np.allclose(p.values, q.values):
            assert affine_invariant_distance(p, q) > 0.0


class TestLogExpMaps:
    def test_log_at_self_is_zero(self, rng):
        p = random_spd(rng, 4)
        assert np.allclose(log_map(p, p).values, 0.0, atol=1e-12)

    def test_log_at_identity_is_matrix_log(self, rng):
        q = random_spd(rng, 4)
        out = log_map(SpdMatrix(np.eye(4)), q)
        assert np.allclose(out.values, symm_fn(q.values, "log"), atol=1e-12)

    def test_exp_of_zero_is_reference(self, rng):
        p = random_spd(rng, 4)
        out = exp_map(p, TangentSymm(np.zeros((4, 4))))
        assert np.allclose(out.values, p.values, atol=1e-12)

    def test_exp_at_identity_is_matrix_exp(self, rng):
        s = random_symmetric(rng, 3)
        out = exp_map(SpdMatrix(np.eye(3)), TangentSymm(s))
        assert np.allclose(out.values, symm_fn(s, "exp"), atol=1e-10)

    def test_round_trip(self, rng):
        for _ in range(10):
            p = random_spd(rng, 5)
            q = random_spd(rng, 5)
            back = exp_map(p, log_map(p, q))
            assert np.linalg.norm(back.values - q.values) < 1e-8

    def test_exp_always_spd(self, rng):
        for _ in range(10):
            p = random_spd(rng, 4)
            s = TangentSymm(random_symmetric(rng, 4, scale=0.5))
            out = exp_map(p, s)
            assert np.all(np.linalg.eigvalsh(out.values) > 0)


def two_matrix_geometric_mean(p1, p2):
    """Closed form P1^{1/2} (P1^{-1/2} P2 P1^{-1/2})^{1/2} P1^{1/2}."""
    sq = symm_fn(p1.values, "sqrt")
    isq = symm_fn(p1.values, "inv_sqrt")
    return sq @ symm_fn(isq @ p2.values @ isq, "sqrt") @ sq


class TestFrechetMean:
    def test_single_element(self, rng):
        p = random_spd(rng, 4)
        assert frechet_mean([p]) is p

    def test_all_identical(self):
        eye = SpdMatrix(np.eye(3))
        out = frechet_mean([eye, eye, eye])
        assert np.allclose(out.values, np.eye(3), atol=1e-12)

    def test_two_matrix_closed_form(self, rng):
        for _ in range(10):
            p1 = random_spd(rng, 4)
            p2 = random_spd(rng, 4)
            mean = frechet_mean([p1, p2])
            oracle = two_matrix_geometric_mean(p1, p2)
            assert np.linalg.norm(mean.values - oracle) < 1e-8

    def test_gradient_condition_at_result(self, rng):
        mats = [random_spd(rng, 4) for _ in range(7)]
        tol = 1e-8
        mean = frechet_mean(mats, tol=tol)
        tangent_sum = np.sum([log_map(mean, m).values for m in mats], axis=0)
        assert np.linalg.norm(tangent_sum) / len(mats) < tol

    def test_congruence_invariance_of_mean(self, rng):
        mats = [random_spd(rng, 3) for _ in range(5)]
        w = rng.standard_normal((3, 3)) + 3.0 * np.eye(3)
        mean = frechet_mean(mats)
        transformed = [SpdMatrix(w @ m.values @ w.T) for m in mats]
        mean_t = frechet_mean(transformed)
        assert np.linalg.norm(mean_t.values - w @ mean.values @ w.T) < 1e-7

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            frechet_mean([])

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            frechet_mean([SpdMatrix(np.eye(2)), SpdMatrix(np.eye(3))])

    def test_no_convergence_carries_state(self, rng):
        mats = [random_spd(rng, 4) for _ in range(5)]
        with pytest.raises(NoConvergence) as err:
            frechet_mean(mats, tol=1e-16, max_iter=1)
        assert isinstance(err.value.last_iterate, SpdMatrix)
        assert err.value.residual > 0.0
