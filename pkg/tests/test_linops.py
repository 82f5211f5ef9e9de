import os
import tempfile
import unittest

import numpy as np
import scipy.sparse as sp

from videosr.core import DimensionError, FlowDirection, FlowField, FlowSet
from videosr.linops import (
    LinearOperator,
    adjoint_mismatch,
    block_diag_data_operator,
    block_gradient,
    compose,
    decimate,
    gaussian_blur,
    gaussian_kernel,
    gradient,
    identity,
    motion_time_derivative,
    vstack,
    warp_matrix,
    zero,
)


def _random_flow(width, height, seed=0, scale=1.5):
    rng = np.random.default_rng(seed)
    return FlowField.from_arrays(rng.uniform(-scale, scale, (height, width)), rng.uniform(-scale, scale, (height, width)))


class TestLinearOperator(unittest.TestCase):
    def test_dimension_checks(self):
        op = identity(4)
        with self.assertRaises(DimensionError):
            op.apply(np.zeros(3))
        with self.assertRaises(DimensionError):
            op.apply_adjoint(np.zeros(5))
        with self.assertRaises(DimensionError):
            compose(identity(3), identity(4))
        with self.assertRaises(DimensionError):
            vstack([identity(3), identity(4)])

    def test_helpers(self):
        a = LinearOperator(np.array([[1.0, -2.0], [0.0, 3.0]]), name="a")
        np.testing.assert_array_equal(a.row_abs_sums(), [3.0, 3.0])
        np.testing.assert_array_equal(a.col_abs_sums(), [1.0, 5.0])
        np.testing.assert_array_equal(a.scaled(2.0).dense(), 2.0 * a.dense())
        np.testing.assert_array_equal(vstack([a, zero(1, 2)]).dense(), [[1, -2], [0, 3], [0, 0]])
        self.assertEqual(vstack([a, a]).output_dim, 4)

    def test_coo_export(self):
        a = LinearOperator(np.array([[0.0, 0.5], [0.25, 0.0]]))
        with tempfile.TemporaryDirectory() as td:
            path = os.path.join(td, "a.txt")
            a.to_coo_text(path)
            with open(path, encoding="utf-8") as f:
                lines = f.read().splitlines()
        self.assertEqual(lines, ["0 1 0.5", "1 0 0.25"])


class TestGradient(unittest.TestCase):
    def test_two_pixel_image(self):
        out = gradient((2, 1)).apply(np.array([3.0, 5.0]))
        np.testing.assert_array_equal(out, [2.0, 0.0, 0.0, 0.0])

    def test_constant_image(self):
        out = gradient((5, 4)).apply(np.full(20, 0.7))
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_neumann_rows(self):
        img = np.random.default_rng(0).random((4, 5))
        out = gradient((5, 4)).apply(img.reshape(-1))
        dx = out[:20].reshape(4, 5)
        dy = out[20:].reshape(4, 5)
        np.testing.assert_allclose(dx[:, :-1], np.diff(img, axis=1))
        np.testing.assert_array_equal(dx[:, -1], 0.0)
        np.testing.assert_allclose(dy[:-1], np.diff(img, axis=0))
        np.testing.assert_array_equal(dy[-1], 0.0)

    def test_single_pixel_rejected(self):
        with self.assertRaises(DimensionError):
            gradient((1, 1))
        with self.assertRaises(DimensionError):
            gradient((0, 4))

    def test_block_layout(self):
        rng = np.random.default_rng(1)
        frames = rng.random((3, 4, 5))
        out = block_gradient((5, 4), 3).apply(frames.reshape(-1))
        single = gradient((5, 4))
        per_frame = [single.apply(f.reshape(-1)) for f in frames]
        np.testing.assert_allclose(out[:60], np.concatenate([g[:20] for g in per_frame]))
        np.testing.assert_allclose(out[60:], np.concatenate([g[20:] for g in per_frame]))


class TestBlur(unittest.TestCase):
    def test_kernel_radius(self):
        self.assertEqual(gaussian_kernel(1.2).size, 9)
        self.assertAlmostEqual(gaussian_kernel(0.6).sum(), 1.0)
        with self.assertRaises(ValueError):
            gaussian_kernel(0.0)

    def test_constant_preserved(self):
        out = gaussian_blur(1.2, (9, 7)).apply(np.full(63, 0.4))
        np.testing.assert_allclose(out, 0.4, atol=1e-14)

    def test_impulse_response(self):
        impulse = np.zeros((11, 11))
        impulse[5, 5] = 1.0
        out = gaussian_blur(1.0, (11, 11)).apply(impulse.reshape(-1)).reshape(11, 11)
        taps = np.arange(-3, 4)
        k = np.exp(-0.5 * taps ** 2)
        k /= k.sum()
        expected = np.zeros((11, 11))
        expected[2:9, 2:9] = np.outer(k, k)
        np.testing.assert_allclose(out, expected, atol=1e-15)


class TestDecimate(unittest.TestCase):
    def test_point_sampling(self):
        out = decimate(2, (4, 4)).apply(np.arange(16.0))
        np.testing.assert_array_equal(out, [2.5, 4.5, 10.5, 12.5])

    def test_odd_factor_samples_pixel_centres(self):
        out = decimate(3, (6, 6)).apply(np.arange(36.0))
        np.testing.assert_array_equal(out, [7.0, 10.0, 25.0, 28.0])

    def test_ramp_sampled_at_area_centres(self):
        ramp = np.tile(np.arange(16.0), (16, 1))
        out = decimate(4, (16, 16)).apply(ramp.reshape(-1)).reshape(4, 4)
        np.testing.assert_allclose(out, np.tile([1.5, 5.5, 9.5, 13.5], (4, 1)), atol=1e-12)

    def test_fractional_factor_preserves_constants(self):
        op = decimate(1.5, (9, 6))
        self.assertEqual(op.output_dim, 6 * 4)
        np.testing.assert_allclose(op.apply(np.full(54, 0.3)), 0.3, atol=1e-15)

    def test_explicit_low_dims(self):
        op = decimate(2.5, (10, 5), lo_dims=(4, 2))
        self.assertEqual(op.output_dim, 8)

    def test_invalid(self):
        with self.assertRaises(ValueError):
            decimate(1.0, (4, 4))
        with self.assertRaises(DimensionError):
            decimate(8, (4, 4))


class TestWarp(unittest.TestCase):
    def test_zero_flow_is_identity(self):
        op = warp_matrix(FlowField.zeros(5, 4))
        np.testing.assert_array_equal(op.dense(), np.eye(20))

    def test_integer_shift_selects_neighbour(self):
        vx = np.ones((6, 6))
        op = warp_matrix(FlowField.from_arrays(vx, np.zeros((6, 6))))
        row = op.dense()[2 * 6 + 3]
        expected = np.zeros(36)
        expected[2 * 6 + 4] = 1.0
        np.testing.assert_allclose(row, expected, atol=1e-15)

    def test_half_pixel_weights(self):
        vx = np.full((8, 8), 0.5)
        op = warp_matrix(FlowField.from_arrays(vx, np.zeros((8, 8))))
        row = op.matrix.getrow(3 * 8 + 3)
        self.assertEqual(row.nnz, 4)
        np.testing.assert_array_equal(np.sort(row.indices), 3 * 8 + np.array([2, 3, 4, 5]))
        dense = row.toarray().ravel()
        np.testing.assert_allclose(dense[3 * 8 + 2:3 * 8 + 6], [-0.0625, 0.5625, 0.5625, -0.0625], atol=1e-15)

    def test_rows_sum_to_one(self):
        op = warp_matrix(_random_flow(7, 6, seed=3, scale=4.0))
        np.testing.assert_allclose(np.asarray(op.matrix.sum(axis=1)).ravel(), 1.0, atol=1e-12)


class TestTimeDerivative(unittest.TestCase):
    def test_equal_frames_zero_flow(self):
        flows = FlowSet.zeros(2, 4, 3)
        frame = np.random.default_rng(0).random(12)
        out = motion_time_derivative(flows, 1.0).apply(np.concatenate([frame, frame]))
        np.testing.assert_allclose(out, 0.0, atol=1e-15)

    def test_single_frame_is_zero_block(self):
        op = motion_time_derivative(FlowSet((), ()), 1.0, dims=(4, 3), n=1)
        self.assertEqual((op.output_dim, op.input_dim), (12, 12))
        self.assertEqual(op.matrix.nnz, 0)

    def test_block_structure(self):
        dims = (3, 2)
        p = 6
        flows = FlowSet.zeros(3, *dims)
        self.assertEqual(flows.directions, (FlowDirection.BACKWARD, FlowDirection.FORWARD))
        dense = motion_time_derivative(flows, 2.0).dense()
        eye = np.eye(p)
        expected = np.block([
            [eye, -eye, np.zeros((p, p))],
            [np.zeros((p, p)), eye, -eye],
            [np.zeros((p, p))] * 3,
        ]) / 2.0
        np.testing.assert_allclose(dense, expected, atol=1e-15)

    def test_forward_rows_warp_the_earlier_frame(self):
        flow = _random_flow(5, 4, seed=4)
        flows = FlowSet((FlowField.zeros(5, 4), flow), (FlowDirection.BACKWARD, FlowDirection.FORWARD))
        dense = motion_time_derivative(flows, 1.0).dense()
        p = 20
        np.testing.assert_allclose(dense[p:2 * p, p:2 * p], warp_matrix(flow).dense(), atol=1e-15)
        np.testing.assert_allclose(dense[p:2 * p, 2 * p:], -np.eye(p), atol=1e-15)

    def test_invalid(self):
        flows = FlowSet.zeros(3, 4, 4)
        with self.assertRaises(ValueError):
            motion_time_derivative(flows, 0.0)
        with self.assertRaises(DimensionError):
            motion_time_derivative(flows, 1.0, n=5)


class TestDataOperator(unittest.TestCase):
    def test_single_frame_equals_composition(self):
        blur = gaussian_blur(0.6, (8, 8))
        dec = decimate(2, (8, 8))
        op = block_diag_data_operator(blur, dec, 1)
        np.testing.assert_allclose(op.dense(), dec.dense() @ blur.dense(), atol=1e-15)

    def test_constant_sequence(self):
        op = block_diag_data_operator(gaussian_blur(0.6, (8, 8)), decimate(2, (8, 8)), 3)
        np.testing.assert_allclose(op.apply(np.full(3 * 64, 0.25)), 0.25, atol=1e-14)


class TestAdjoints(unittest.TestCase):
    def test_inner_product_identity(self):
        rng = np.random.default_rng(7)
        flows = FlowSet.for_parity([_random_flow(8, 8, seed=s) for s in range(2)])
        ops = [
            gradient((8, 8)),
            block_gradient((8, 8), 3),
            gaussian_blur(1.2, (8, 8)),
            decimate(2, (8, 8)),
            warp_matrix(_random_flow(8, 8, seed=5)),
            motion_time_derivative(flows, 0.7),
            block_diag_data_operator(gaussian_blur(0.6, (8, 8)), decimate(2, (8, 8)), 2),
        ]
        for op in ops:
            with self.subTest(op=op.name):
                self.assertLess(adjoint_mismatch(op, rng, trials=20), 1e-10)

    def test_random_sizes_and_sequences(self):
        rng = np.random.default_rng(11)
        for trial in range(100):
            width, height = (int(v) for v in rng.integers(4, 13, 2))
            n = int(rng.integers(1, 5))
            dims = (width, height)
            flows = FlowSet.for_parity([_random_flow(width, height, seed=100 * trial + k) for k in range(n - 1)])
            factor = float(rng.choice([2.0, 2.5, 3.0]))
            lo_dims = (max(1, int(width / factor)), max(1, int(height / factor)))
            ops = [
                block_gradient(dims, n),
                decimate(factor, dims, lo_dims=lo_dims),
                block_diag_data_operator(gaussian_blur(0.8, dims), decimate(factor, dims, lo_dims=lo_dims), n),
            ]
            if n > 1:
                ops.append(motion_time_derivative(flows, 0.9, dims, n))
            for op in ops:
                self.assertLess(adjoint_mismatch(op, rng, trials=1), 1e-10, msg=f"{op.name} {dims} n={n}")

    def test_abs_sums_match_dense(self):
        flows = FlowSet.for_parity([_random_flow(7, 6, seed=s) for s in range(2)])
        ops = [
            block_gradient((7, 6), 3),
            decimate(2.5, (7, 6), lo_dims=(2, 2)),
            motion_time_derivative(flows, 0.5, (7, 6), 3),
            block_diag_data_operator(gaussian_blur(1.0, (7, 6)), decimate(2, (7, 6)), 3),
        ]
        for op in ops:
            with self.subTest(op=op.name):
                dense = np.abs(op.dense())
                np.testing.assert_allclose(op.row_abs_sums(), dense.sum(axis=1), atol=1e-12)
                np.testing.assert_allclose(op.col_abs_sums(), dense.sum(axis=0), atol=1e-12)

    def test_adjoint_matches_dense_transpose(self):
        op = decimate(2, (8, 8))
        y = np.random.default_rng(8).random(op.output_dim)
        np.testing.assert_allclose(op.apply_adjoint(y), op.dense().T @ y, atol=1e-12)

    def test_bmat_of_sparse_blocks(self):
        a = LinearOperator(sp.identity(3))
        self.assertEqual(vstack([a, a.scaled(-1.0)]).matrix.nnz, 6)


if __name__ == "__main__":
    unittest.main()
