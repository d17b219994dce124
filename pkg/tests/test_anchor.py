import math
import os
import sys
import unittest

import numpy as np

# Add parent directory to path so we can import modules
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from functions.anchor import (
    Codebook,
    TimeEncoder,
    build_future_anchor_lookup,
    build_history_anchor,
    future_indices,
    history_indices,
    phase_index,
    time_encode,
)
from functions.numerics import DiffTensor, Rng, Tape, mul, numeric_gradient, relative_error, sum_


def _zero_encoder(F, C, d_t=4):
    encoder = TimeEncoder(F, C, d_t, Rng(0))
    for p in encoder.parameters():
        p.values[...] = 0.0
    return encoder


class TestPhaseIndex(unittest.TestCase):
    def test_examples(self):
        self.assertEqual(phase_index(5, 0, 24, 24), 5)
        self.assertEqual(phase_index(5, 7, 24, 24), 22)
        self.assertEqual(phase_index(100, 0, 24, 12), 4)

    def test_range_and_periodicity(self):
        """Test that the index stays in [0, L) and repeats with period lcm(W, L)"""
        for W, L in ((24, 24), (24, 12), (7, 5), (96, 48)):
            period = W * L // math.gcd(W, L)
            t_end = np.arange(300)
            for h in (0, 3, 50):
                index = phase_index(t_end, h, W, L)
                self.assertTrue(np.all((index >= 0) & (index < L)))
                np.testing.assert_array_equal(index, phase_index(t_end + period, h, W, L))

    def test_invalid_period(self):
        with self.assertRaises(ValueError):
            phase_index(3, 0, 0, 24)

    def test_history_indices_ramp(self):
        """Test that with t_end mod W = T-1 and W = L = T, row h uses codebook row h"""
        index = history_indices(np.array([7, 15]), T=8, W=8, L=8)
        np.testing.assert_array_equal(index, [list(range(8)), list(range(8))])

    def test_future_indices_consecutive(self):
        index = future_indices(np.array([5, 22]), H=4, W=24, L=24)
        np.testing.assert_array_equal(index, [[6, 7, 8, 9], [23, 0, 1, 2]])


class TestAnchors(unittest.TestCase):
    def test_zero_codebook_and_marks(self):
        """Test that a fresh codebook with zero marks gives a zero anchor"""
        codebook = Codebook(24, 3)
        encoder = TimeEncoder(2, 3, 8, Rng(1))
        t_end = np.array([30, 31])
        marks = DiffTensor(np.zeros((2, 16, 2)))
        np.testing.assert_array_equal(build_history_anchor(codebook, encoder, t_end, marks, 24).values, 0.0)
        np.testing.assert_array_equal(build_future_anchor_lookup(codebook, encoder, t_end, marks, 24).values, 0.0)

    def test_ascending_ramp(self):
        codebook = Codebook(8, 1)
        codebook.M.values[:, 0] = np.arange(8.0)
        A_x = build_history_anchor(codebook, _zero_encoder(1, 1), np.array([7]), DiffTensor(np.zeros((1, 8, 1))), W=8)
        np.testing.assert_array_equal(A_x.values[0, :, 0], np.arange(8.0))

    def test_periodic_in_L(self):
        """Test that windows ending L steps apart select identical codebook rows"""
        codebook = Codebook(12, 2)
        codebook.M.values[...] = Rng(4).normal(size=(12, 2))
        encoder = _zero_encoder(1, 2)
        marks = DiffTensor(np.zeros((2, 10, 1)))
        t_end = np.array([40, 52])
        A_x = build_history_anchor(codebook, encoder, t_end, marks, W=12).values
        A_y = build_future_anchor_lookup(codebook, encoder, t_end, marks, W=12).values
        np.testing.assert_array_equal(A_x[0], A_x[1])
        np.testing.assert_array_equal(A_y[0], A_y[1])

    def test_lookup_continues_history(self):
        """Test that the copied future anchor continues the history phase"""
        codebook = Codebook(8, 1)
        codebook.M.values[:, 0] = np.arange(8.0)
        encoder = _zero_encoder(1, 1)
        A_y = build_future_anchor_lookup(codebook, encoder, np.array([7]), DiffTensor(np.zeros((1, 4, 1))), W=8)
        np.testing.assert_array_equal(A_y.values[0, :, 0], [0.0, 1.0, 2.0, 3.0])

    def test_codebook_scatter_gradient(self):
        """Test that codebook rows receive one gradient contribution per use"""
        codebook = Codebook(4, 1)
        encoder = _zero_encoder(1, 1)
        with Tape() as tape:
            A_x = build_history_anchor(codebook, encoder, np.array([3]), DiffTensor(np.zeros((1, 8, 1))), W=4)
            loss = sum_(A_x)
        tape.backward(loss)
        np.testing.assert_array_equal(codebook.M.grad[:, 0], [2.0, 2.0, 2.0, 2.0])

    def test_shape_mismatch(self):
        codebook = Codebook(4, 1)
        encoder = TimeEncoder(2, 1, 4, Rng(0))
        with self.assertRaises(ValueError):
            build_history_anchor(codebook, encoder, np.array([3, 4]), DiffTensor(np.zeros((1, 8, 2))), W=4)
        with self.assertRaises(ValueError):
            build_history_anchor(codebook, encoder, np.array([3]), DiffTensor(np.zeros((1, 8, 3))), W=4)


class TestTimeEncoder(unittest.TestCase):
    def test_zero_weights(self):
        encoder = _zero_encoder(2, 3)
        marks = DiffTensor(Rng(2).uniform(-0.5, 0.5, size=(1, 6, 2)))
        np.testing.assert_array_equal(time_encode(encoder, marks).values, 0.0)

    def test_single_step(self):
        encoder = TimeEncoder(2, 3, 4, Rng(3))
        out = time_encode(encoder, DiffTensor(np.full((1, 1, 2), 0.25)))
        self.assertEqual(out.shape, (1, 1, 3))

    def test_wrong_feature_count(self):
        encoder = TimeEncoder(2, 3, 4, Rng(3))
        with self.assertRaises(ValueError):
            time_encode(encoder, DiffTensor(np.zeros((1, 5, 3))))

    def test_gradient(self):
        """Test tape gradients against central differences on a 5x2 input"""
        encoder = TimeEncoder(2, 2, 4, Rng(5))
        marks = DiffTensor(Rng(6).uniform(-0.5, 0.5, size=(1, 5, 2)), requires_grad=True)
        weights = Rng(7).normal(size=(1, 5, 2))
        tensors = [marks] + encoder.parameters()
        with Tape() as tape:
            loss = sum_(mul(time_encode(encoder, marks), weights))
        tape.backward(loss)

        def value():
            return float(np.sum(time_encode(encoder, marks).values * weights))

        analytic = np.concatenate([t.grad.ravel() for t in tensors])
        numeric = np.concatenate([numeric_gradient(value, t).ravel() for t in tensors])
        self.assertLess(relative_error(analytic, numeric), 1e-5)


if __name__ == "__main__":
    unittest.main()
