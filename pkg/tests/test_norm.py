import os
import sys
import unittest

import numpy as np

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.norm import (
    NormState,
    ResidualAffine,
    denorm_with_stats,
    disentangle_normalize,
    generative_denorm,
    instance_normalize,
)
from functions.numerics import EPS_VAR, DiffTensor, Tape, numeric_gradient, relative_error, sum_


class TestDisentangleNormalize(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(0)
        self.X = rng.normal(loc=3.0, scale=2.0, size=(2, 16, 3))
        self.A = rng.normal(size=(2, 16, 3))

    def test_zero_anchor_is_instance_norm(self):
        """Test that a zero anchor reduces to plain instance normalisation"""
        x_tilde, state = disentangle_normalize(DiffTensor(self.X), DiffTensor(np.zeros_like(self.X)))
        mu = self.X.mean(axis=1, keepdims=True)
        sigma = np.sqrt(((self.X - mu) ** 2).mean(axis=1, keepdims=True) + EPS_VAR)
        np.testing.assert_allclose(x_tilde.values, (self.X - mu) / sigma, rtol=0, atol=1e-12)
        np.testing.assert_allclose(state.sigma_R.values, sigma, rtol=0, atol=1e-12)
        reference, _ = instance_normalize(DiffTensor(self.X))
        np.testing.assert_array_equal(x_tilde.values, reference.values)

    def test_input_equals_anchor(self):
        x_tilde, state = disentangle_normalize(DiffTensor(self.A), DiffTensor(self.A))
        np.testing.assert_array_equal(x_tilde.values, self.A)
        np.testing.assert_allclose(state.sigma_R.values, np.sqrt(EPS_VAR))

    def test_alternating_residual(self):
        """Test that the normalised residual has zero mean and unit std"""
        pattern = np.tile([1.0, -1.0], 8)[None, :, None] * np.ones((2, 16, 3))
        x_tilde, _ = disentangle_normalize(DiffTensor(self.A + pattern), DiffTensor(self.A))
        residual = x_tilde.values - self.A
        np.testing.assert_allclose(residual.mean(axis=1), 0.0, atol=1e-12)
        np.testing.assert_allclose(residual.std(axis=1), 1.0, atol=1e-8)

    def test_shape_mismatch(self):
        with self.assertRaises(ValueError):
            disentangle_normalize(DiffTensor(self.X), DiffTensor(self.A[:, :8]))

    def test_gradient_through_both_branches(self):
        X = DiffTensor(self.X[:1, :8, :2].copy(), requires_grad=True)
        A = DiffTensor(self.A[:1, :8, :2].copy(), requires_grad=True)
        weights = np.random.default_rng(1).normal(size=X.shape)
        with Tape() as tape:
            x_tilde, _ = disentangle_normalize(X, A)
            loss = sum_(x_tilde * weights)
        tape.backward(loss)

        def value():
            return float(np.sum(disentangle_normalize(X, A)[0].values * weights))

        for tensor in (X, A):
            self.assertLess(relative_error(tensor.grad, numeric_gradient(value, tensor)), 1e-5)


class TestGenerativeDenorm(unittest.TestCase):
    def setUp(self):
        rng = np.random.default_rng(2)
        self.Y0 = rng.normal(size=(2, 12, 3))
        self.A_y = rng.normal(size=(2, 12, 3))
        self.mu = rng.normal(size=(2, 1, 3))
        self.sigma = rng.uniform(0.5, 3.0, size=(2, 1, 3))
        self.state = NormState(mu_R=DiffTensor(self.mu), sigma_R=DiffTensor(self.sigma))

    def test_identity_statistics(self):
        state = NormState(mu_R=DiffTensor(np.zeros((2, 1, 3))), sigma_R=DiffTensor(np.ones((2, 1, 3))))
        out = generative_denorm(DiffTensor(self.Y0), DiffTensor(self.A_y), state)
        np.testing.assert_allclose(out.values, self.Y0, rtol=0, atol=1e-13)

    def test_pure_mean_restoration(self):
        out = generative_denorm(DiffTensor(self.A_y), DiffTensor(self.A_y), self.state)
        np.testing.assert_array_equal(out.values, self.mu + self.A_y)

    def test_round_trip(self):
        """Test that decoding the encoded target recovers it"""
        Y_true = np.random.default_rng(3).normal(loc=5.0, scale=4.0, size=(2, 12, 3))
        Y0 = (Y_true - self.A_y - self.mu) / self.sigma + self.A_y
        out = generative_denorm(DiffTensor(Y0), DiffTensor(self.A_y), self.state)
        np.testing.assert_allclose(out.values, Y_true, rtol=0, atol=1e-12)

    def test_normalize_then_decode(self):
        """Test that decoding the normalised input with its own state reproduces the input"""
        rng = np.random.default_rng(4)
        X = rng.normal(loc=-2.0, scale=3.0, size=(2, 12, 3))
        A = rng.normal(size=(2, 12, 3))
        x_tilde, state = disentangle_normalize(DiffTensor(X), DiffTensor(A))
        out = generative_denorm(x_tilde, DiffTensor(A), state)
        np.testing.assert_allclose(out.values, X, rtol=0, atol=1e-12)

    def test_matches_denorm_with_stats(self):
        a = generative_denorm(DiffTensor(self.Y0), DiffTensor(self.A_y), self.state)
        b = denorm_with_stats(DiffTensor(self.Y0), DiffTensor(self.A_y), DiffTensor(self.mu), DiffTensor(self.sigma))
        np.testing.assert_array_equal(a.values, b.values)

    def test_sigma_doubles_residual_part(self):
        Y0, A_y, mu = DiffTensor(self.Y0), DiffTensor(self.A_y), DiffTensor(self.mu)
        once = denorm_with_stats(Y0, A_y, mu, DiffTensor(self.sigma)).values - self.mu - self.A_y
        twice = denorm_with_stats(Y0, A_y, mu, DiffTensor(2.0 * self.sigma)).values - self.mu - self.A_y
        np.testing.assert_allclose(twice, 2.0 * once, rtol=1e-12, atol=1e-12)

    def test_non_positive_sigma(self):
        with self.assertRaises(ValueError):
            denorm_with_stats(
                DiffTensor(self.Y0), DiffTensor(self.A_y), DiffTensor(self.mu), DiffTensor(np.zeros((2, 1, 3)))
            )

    def test_anchor_transparency(self):
        """Test that dY/dA_y at fixed Y0 equals 1 - sigma per element"""
        A_y = DiffTensor(self.A_y.copy(), requires_grad=True)
        with Tape() as tape:
            loss = sum_(generative_denorm(DiffTensor(self.Y0), A_y, self.state))
        tape.backward(loss)
        np.testing.assert_allclose(A_y.grad, np.broadcast_to(1.0 - self.sigma, A_y.shape), rtol=0, atol=1e-12)

    def test_affine_round_trip(self):
        """Test that the optional residual affine inverts exactly"""
        affine = ResidualAffine(3)
        affine.gamma.values[...] = [0.5, 2.0, 1.5]
        affine.beta.values[...] = [0.1, -0.3, 0.0]
        rng = np.random.default_rng(5)
        X = rng.normal(size=(2, 12, 3))
        A = rng.normal(size=(2, 12, 3))
        x_tilde, state = disentangle_normalize(DiffTensor(X), DiffTensor(A), affine=affine)
        out = generative_denorm(x_tilde, DiffTensor(A), state, affine=affine)
        np.testing.assert_allclose(out.values, X, rtol=0, atol=1e-12)


if __name__ == "__main__":
    unittest.main()
