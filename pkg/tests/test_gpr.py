import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brainage import (
    FormatError,
    ValidationError,
    gpr_fit,
    gpr_predict,
    linear_kernel,
    load_gpr,
    log_marginal_likelihood,
    save_gpr,
)
from oracles import krr_dense_predictions, linear_kernel_direct, lml_dense


class TestLinearKernel:
    def test_worked_example(self):
        X = np.array([[1.0, 2.0], [3.0, 4.0]])
        np.testing.assert_allclose(
            linear_kernel(X, X), 0.5 * np.array([[5.0, 11.0], [11.0, 25.0]])
        )

    def test_matches_pairwise_oracle(self, rng):
        X = rng.standard_normal((6, 9))
        Z = rng.standard_normal((4, 9))
        np.testing.assert_allclose(
            linear_kernel(X, Z), linear_kernel_direct(X, Z), atol=1e-12
        )

    def test_self_kernel_symmetric_psd(self, rng):
        X = rng.standard_normal((8, 5))
        K = linear_kernel(X, X)
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        assert np.linalg.eigvalsh(K).min() > -1e-10

    def test_feature_width_mismatch_rejected(self, rng):
        with pytest.raises(ValidationError):
            linear_kernel(rng.standard_normal((3, 4)), rng.standard_normal((3, 5)))


class TestGprEqualsKernelRidge:
    def test_training_alpha_matches_dense_solve(self, rng):
        X = rng.standard_normal((20, 7))
        y = rng.uniform(20, 80, 20)
        s, sigma2 = 1.3, 0.4
        model = gpr_fit(X, y, signal_scale=s, noise_variance=sigma2)
        K = linear_kernel_direct(X, X)
        alpha_oracle = np.linalg.solve(
            s * K + sigma2 * np.eye(20), y - y.mean()
        )
        np.testing.assert_allclose(model.alpha, alpha_oracle, atol=1e-8)

    def test_predictions_match_dense_oracle(self, rng):
        X = rng.standard_normal((50, 12))
        y = rng.uniform(20, 80, 50)
        Xn = rng.standard_normal((10, 12))
        s, sigma2 = 0.8, 1.7
        model = gpr_fit(X, y, signal_scale=s, noise_variance=sigma2)
        preds = gpr_predict(model, X, Xn)
        oracle = krr_dense_predictions(X, y, Xn, s, sigma2)
        np.testing.assert_allclose(preds, oracle, atol=1e-8)

    def test_near_interpolation_with_tiny_noise(self):
        # centered 1-D features, so the centered ages lie in the kernel span
        # and tiny noise variance drives the fit to interpolation
        X = np.array([[-1.0], [0.0], [1.0]])
        y = np.array([30.0, 40.0, 50.0])
        model = gpr_fit(X, y, signal_scale=10.0, noise_variance=1e-8)
        preds = gpr_predict(model, X, X)
        np.testing.assert_allclose(preds, y, atol=1e-3)


class TestLogMarginalLikelihood:
    def test_scalar_gaussian_example(self):
        # N=1, K=[[1]], s=1, sigma2=1, y=[0]: density of N(0, 2) at 0
        lml = log_marginal_likelihood(np.array([[1.0]]), np.array([0.0]), 1.0, 1.0)
        assert lml == pytest.approx(-0.5 * np.log(2 * np.pi * 2.0), abs=1e-12)
        assert lml == pytest.approx(-1.2655, abs=1e-4)

    def test_matches_dense_oracle(self, rng):
        for trial in range(5):
            A = rng.standard_normal((5, 5))
            K = A @ A.T / 5
            y = rng.standard_normal(5)
            s = float(rng.uniform(0.3, 3.0))
            sigma2 = float(rng.uniform(0.1, 2.0))
            assert log_marginal_likelihood(K, y, s, sigma2) == pytest.approx(
                lml_dense(K, y, s, sigma2), abs=1e-8
            )

    def test_invariant_under_joint_permutation(self, rng):
        A = rng.standard_normal((6, 3))
        K = A @ A.T
        y = rng.standard_normal(6)
        perm = rng.permutation(6)
        assert log_marginal_likelihood(K, y, 1.1, 0.7) == pytest.approx(
            log_marginal_likelihood(K[np.ix_(perm, perm)], y[perm], 1.1, 0.7),
            abs=1e-10,
        )

    def test_bad_hyperparameters_rejected(self):
        with pytest.raises(ValidationError):
            log_marginal_likelihood(np.eye(2), np.zeros(2), 0.0, 1.0)
        with pytest.raises(ValidationError):
            log_marginal_likelihood(np.eye(2), np.zeros(2), 1.0, -1.0)


class TestHyperparameterSearch:
    def test_search_beats_probed_corners(self, rng):
        X = rng.standard_normal((25, 6))
        y = rng.uniform(20, 80, 25) + X[:, 0] * 5
        model = gpr_fit(X, y)
        K = linear_kernel(X, X)
        yc = y - y.mean()
        best = log_marginal_likelihood(K, yc, model.signal_scale,
                                       model.noise_variance)
        assert best == pytest.approx(model.log_marginal_likelihood, abs=1e-9)
        for s in (0.01, 1.0, 100.0):
            for sig in (0.01, 1.0, 100.0):
                assert best >= log_marginal_likelihood(K, yc, s, sig) - 1e-9

    def test_explicit_hyperparameters_skip_search(self, rng):
        X = rng.standard_normal((10, 4))
        y = rng.uniform(20, 80, 10)
        model = gpr_fit(X, y, signal_scale=2.0, noise_variance=3.0)
        assert model.signal_scale == 2.0
        assert model.noise_variance == 3.0


class TestTargetShiftContract:
    @given(st.floats(-50, 50))
    @settings(max_examples=20, deadline=None)
    def test_adding_constant_to_targets_shifts_predictions(self, c):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((15, 5))
        y = rng.uniform(20, 80, 15)
        Xn = rng.standard_normal((6, 5))
        m1 = gpr_fit(X, y, signal_scale=1.0, noise_variance=0.5)
        m2 = gpr_fit(X, y + c, signal_scale=1.0, noise_variance=0.5)
        p1 = gpr_predict(m1, X, Xn)
        p2 = gpr_predict(m2, X, Xn)
        np.testing.assert_allclose(p2, p1 + c, atol=1e-8)


class TestValidation:
    def test_single_subject_rejected(self):
        with pytest.raises(ValidationError):
            gpr_fit(np.ones((1, 3)), np.array([50.0]))

    def test_non_finite_features_rejected(self):
        X = np.ones((3, 2))
        X[0, 0] = np.inf
        with pytest.raises(ValidationError):
            gpr_fit(X, np.array([40.0, 50.0, 60.0]))

    def test_row_count_mismatch_rejected(self, rng):
        with pytest.raises(ValidationError):
            gpr_fit(rng.standard_normal((4, 2)), np.array([1.0, 2.0, 3.0]))


class TestPersistence:
    def test_round_trip_preserves_model_and_features(self, rng, tmp_path):
        # features ride along as float32 (the dtype of flattened volumes)
        X = rng.standard_normal((12, 5)).astype(np.float32)
        y = rng.uniform(20, 80, 12)
        model = gpr_fit(X, y, signal_scale=1.5, noise_variance=0.9)
        p = tmp_path / "model.npz"
        save_gpr(model, X, p)
        loaded, X_loaded = load_gpr(p)
        assert np.array_equal(X_loaded, X)
        assert loaded.signal_scale == model.signal_scale
        assert loaded.noise_variance == model.noise_variance
        assert np.array_equal(loaded.alpha, model.alpha)
        assert loaded.y_mean == model.y_mean
        Xn = rng.standard_normal((3, 5))
        np.testing.assert_array_equal(
            gpr_predict(loaded, X_loaded, Xn), gpr_predict(model, X, Xn)
        )

    def test_corrupt_file_rejected(self, tmp_path):
        p = tmp_path / "junk.npz"
        p.write_bytes(b"PK\x03\x04 not really a zip")
        with pytest.raises(FormatError):
            load_gpr(p)
