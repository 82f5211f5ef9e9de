import unittest
from dataclasses import replace

import numpy as np

from videosr.core import FlowConfig, FlowSet, FrameSequence, SuperResConfig, clip_sequence
from videosr.evaluate import (
    bicubic_upsample,
    evaluate_central,
    generate_lowres,
    psnr,
    synth_translation_sequence,
    text_like_base,
    textured_image,
)
from videosr.linops import block_diag_data_operator, decimate, gaussian_blur
from videosr.superres import (
    assemble,
    energy_value,
    estimate_temporal_stepsize,
    infconv_saddle_problem,
    initial_guess,
    solve_single_term,
    solve_superres,
    split_for_display,
    superresolve_color,
    superresolve_sequence,
)


def _lowres(n=2, size=6, seed=0, lo=0.2, hi=0.8):
    rng = np.random.default_rng(seed)
    return FrameSequence.from_array(lo + (hi - lo) * rng.random((n, size, size)))


def _zero_flows(seq, factor):
    height, width = int(round(seq.height * factor)), int(round(seq.width * factor))
    return FlowSet.zeros(len(seq), width, height)


def _fast_flow_cfg():
    return FlowConfig(inner_iterations=10, warps_per_level=1)


class TestTemporalStepsize(unittest.TestCase):
    def test_constant_sequence(self):
        seq = FrameSequence.from_array(np.full((3, 8, 8), 0.4))
        self.assertEqual(estimate_temporal_stepsize(seq, FlowSet.zeros(3, 8, 8)), 1.0)

    def test_static_scene(self):
        img = textured_image(8, 8, seed=1).data
        seq = FrameSequence.from_array(np.stack([img, img, img]))
        self.assertEqual(estimate_temporal_stepsize(seq, FlowSet.zeros(3, 8, 8)), 1.0)

    def test_direct_formula(self):
        rng = np.random.default_rng(2)
        frames = rng.random((2, 8, 8))
        seq = FrameSequence.from_array(frames)
        numerator = np.sum(np.abs(frames[0] - frames[1]))
        denominator = sum(
            np.sum(np.abs(np.diff(f, axis=1))) + np.sum(np.abs(np.diff(f, axis=0))) for f in frames
        )
        h = estimate_temporal_stepsize(seq, FlowSet.zeros(2, 8, 8))
        self.assertAlmostEqual(h, numerator / denominator, places=12)


class TestAssemble(unittest.TestCase):
    def test_single_frame_has_no_temporal_term(self):
        seq = _lowres(n=1)
        problem = assemble(seq, FlowSet((), ()), SuperResConfig(factor=2))
        self.assertEqual(problem.time_deriv.matrix.nnz, 0)
        self.assertEqual(problem.hi_shape, (12, 12))
        self.assertEqual(problem.h, 1.0)

    def test_dimensions(self):
        seq = _lowres(n=3, size=8)
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2))
        self.assertEqual(problem.data_op.output_dim, 3 * 64)
        self.assertEqual(problem.data_op.input_dim, 3 * 256)
        self.assertEqual(problem.time_deriv.input_dim, 3 * 256)

    def test_h_override(self):
        seq = _lowres(n=2)
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2, h=0.25))
        self.assertEqual(problem.h, 0.25)

    def test_flow_shape_mismatch(self):
        seq = _lowres(n=2)
        with self.assertRaises(ValueError):
            assemble(seq, FlowSet.zeros(2, 6, 6), SuperResConfig(factor=2))

    def test_saddle_structure(self):
        seq = _lowres(n=2)
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2))
        saddle = infconv_saddle_problem(problem)
        self.assertEqual([b.name for b in saddle.dual_blocks], ["data", "infconv_a", "infconv_b"])
        b = saddle.dual_blocks[2]
        np.testing.assert_array_equal(b.operators["w"].dense(), -b.operators["u"].dense())
        self.assertEqual(b.dim, 3 * problem.hi_pixels)


class TestEnergy(unittest.TestCase):
    def setUp(self):
        self.seq = _lowres(n=2)
        self.problem = assemble(self.seq, _zero_flows(self.seq, 2), SuperResConfig(factor=2))

    def test_zero_everything(self):
        zero_lo = FrameSequence.from_array(np.zeros((2, 6, 6)))
        problem = assemble(zero_lo, _zero_flows(zero_lo, 2), SuperResConfig(factor=2))
        zero_hi = FrameSequence.from_array(np.zeros((2, 12, 12)))
        self.assertEqual(energy_value(problem, zero_hi, zero_hi), 0.0)

    def test_data_term_only(self):
        zero_hi = FrameSequence.from_array(np.zeros((2, 12, 12)))
        self.assertAlmostEqual(energy_value(self.problem, zero_hi, zero_hi), float(np.sum(np.abs(self.seq.vector()))))

    def test_dense_oracle(self):
        rng = np.random.default_rng(3)
        u = FrameSequence.from_array(rng.random((2, 12, 12)))
        w = FrameSequence.from_array(rng.random((2, 12, 12)))
        p = self.problem
        cfg = p.config
        A = p.data_op.dense()
        G = p.grad.dense()
        T = p.time_deriv.dense()

        def group_norm(z):
            return np.sum(np.sqrt(np.sum(z.reshape(3, -1) ** 2, axis=0)))

        uv, wv = u.vector(), w.vector()
        expected = (
            np.sum(np.abs(A @ uv - p.f()))
            + cfg.alpha * group_norm(np.concatenate([G @ wv, cfg.kappa * (T @ wv)]))
            + cfg.alpha * group_norm(np.concatenate([cfg.kappa * (G @ (uv - wv)), T @ (uv - wv)]))
        )
        self.assertAlmostEqual(energy_value(p, u, w), expected, delta=1e-10)

    def test_wrong_size(self):
        small = FrameSequence.from_array(np.zeros((1, 12, 12)))
        with self.assertRaises(ValueError):
            energy_value(self.problem, small, small)


class TestSolve(unittest.TestCase):
    def test_data_term_alone_is_fitted(self):
        seq = _lowres(n=1)
        cfg = SuperResConfig(factor=2, alpha=0.0, max_iterations=3000, tolerance=0.0)
        problem = assemble(seq, FlowSet((), ()), cfg)
        solution = solve_superres(problem)
        residual = problem.data_op.apply(solution.u_unclipped.vector()) - problem.f()
        self.assertLess(float(np.sum(np.abs(residual))), 1e-3 * residual.size)

    def test_output_clipped_and_sized(self):
        seq = _lowres(n=2, lo=0.0, hi=1.0)
        cfg = SuperResConfig(factor=2, max_iterations=50)
        solution = solve_superres(assemble(seq, _zero_flows(seq, 2), cfg))
        self.assertEqual(solution.u.shape, (12, 12))
        self.assertTrue(np.all(solution.u.stack() >= 0.0) and np.all(solution.u.stack() <= 1.0))
        np.testing.assert_allclose(solution.z.stack(), solution.u_unclipped.stack() - solution.w.stack())

    def test_energy_trace_recorded(self):
        seq = _lowres(n=2)
        cfg = SuperResConfig(factor=2, max_iterations=40, tolerance=0.0)
        solution = solve_superres(assemble(seq, _zero_flows(seq, 2), cfg))
        self.assertEqual(len(solution.report.energy_trace), 40)
        self.assertTrue(np.all(np.isfinite(solution.report.energy_trace)))
        self.assertEqual(solution.report.trace_iterations[-1], 40)

    def test_static_scene(self):
        for truth_frame in (textured_image(32, 32, seed=4, smooth=1.0).data, textured_image(32, 32, seed=9).data):
            truth = FrameSequence.from_array(np.stack([truth_frame] * 5))
            lowres = generate_lowres(truth, 2)
            cfg = SuperResConfig(factor=2)
            joint = solve_superres(assemble(lowres, _zero_flows(lowres, 2), cfg))
            stack = joint.u.stack()
            for k in range(1, 5):
                np.testing.assert_allclose(stack[k], stack[0], atol=1e-3)

        single_lo = FrameSequence((lowres[2],))
        single = solve_superres(assemble(single_lo, FlowSet((), ()), cfg))
        self.assertGreaterEqual(psnr(joint.u[2], truth[2]), psnr(single.u[0], truth[2]) - 0.5)

    def test_kappa_limit_matches_single_term(self):
        seq = _lowres(n=3, size=8, seed=5)
        cfg = SuperResConfig(factor=2, kappa=1.0 - 1e-6, h=1.0, max_iterations=20000, tolerance=0.0)
        problem = assemble(seq, _zero_flows(seq, 2), cfg)
        joint = solve_superres(problem).u_unclipped.vector()
        single = solve_single_term(problem).u_unclipped.vector()
        self.assertLessEqual(np.linalg.norm(joint - single) / np.linalg.norm(single), 2e-5)

    def test_energy_moving_average_settles(self):
        seq = FrameSequence.from_array(np.stack([textured_image(16, 16, seed=s).data for s in range(5)]))
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2, trace_every=1))
        report = solve_superres(problem).report
        trace = np.asarray(report.energy_trace)
        average = np.convolve(trace, np.ones(10) / 10.0, mode="valid")
        # average[i] covers iterations i+1 .. i+10
        rises = np.diff(average[20:])
        self.assertLessEqual(float(rises.max(initial=0.0)), 1e-3 * report.final_energy)

    def test_energy_below_bicubic_start(self):
        seq = FrameSequence.from_array(np.stack([textured_image(16, 16, seed=s).data for s in range(5)]))
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2))
        u0, w0 = initial_guess(problem)
        solution = solve_superres(problem)
        self.assertLess(energy_value(problem, solution.u_unclipped, solution.w), energy_value(problem, u0, w0))

    def test_swapped_roles_solve(self):
        seq = _lowres(n=2)
        problem = assemble(seq, _zero_flows(seq, 2), SuperResConfig(factor=2, max_iterations=3000, tolerance=0.0))
        plain = solve_superres(problem).u_unclipped.vector()
        swapped = solve_superres(problem, swap_roles=True).u_unclipped.vector()
        self.assertLessEqual(np.linalg.norm(swapped - plain) / np.linalg.norm(plain), 2e-6)


class TestPipelines(unittest.TestCase):
    def test_sequence_pipeline(self):
        seq = FrameSequence.from_array(np.stack([textured_image(12, 12, seed=s).data for s in range(3)]))
        cfg = SuperResConfig(factor=2, max_iterations=30)
        solution = superresolve_sequence(seq, cfg, _fast_flow_cfg())
        self.assertEqual(solution.u.shape, (24, 24))
        self.assertEqual(len(solution.flows), 2)
        self.assertEqual(solution.flows[0].shape, (24, 24))

    def test_single_frame_pipeline(self):
        solution = superresolve_sequence(_lowres(n=1), SuperResConfig(factor=2, max_iterations=20))
        self.assertEqual(len(solution.u), 1)
        self.assertEqual(len(solution.flows), 0)

    def test_grayscale_colour_input(self):
        seq = FrameSequence.from_array(np.stack([textured_image(12, 12, seed=s).data for s in range(2)]))
        cfg = SuperResConfig(factor=2, max_iterations=20)
        (r, g, b), _ = superresolve_color(seq, seq, seq, cfg, _fast_flow_cfg())
        np.testing.assert_allclose(r.stack(), g.stack(), atol=1e-6)
        np.testing.assert_allclose(g.stack(), b.stack(), atol=1e-6)

    def test_constant_colour(self):
        def const(v):
            return FrameSequence.from_array(np.full((2, 8, 8), v))

        cfg = SuperResConfig(factor=2, max_iterations=20)
        (r, g, b), _ = superresolve_color(const(0.8), const(0.3), const(0.1), cfg, _fast_flow_cfg())
        np.testing.assert_allclose(r.stack(), 0.8, atol=1e-3)
        np.testing.assert_allclose(g.stack(), 0.3, atol=1e-3)
        np.testing.assert_allclose(b.stack(), 0.1, atol=1e-3)

    def test_text_clip_beats_bicubic(self):
        for seed in (1, 3):
            base = text_like_base(96, 80, seed=seed, cell=16, stroke=4)
            truth = synth_translation_sequence(base, 5, (0.6, 0.3), size=(88, 76))
            lowres = generate_lowres(truth, 4)
            solution = superresolve_sequence(lowres, SuperResConfig(factor=4))
            bicubic = clip_sequence(bicubic_upsample(lowres, 4, truth.shape))
            gain = evaluate_central(solution.u, truth).psnr - evaluate_central(bicubic, truth).psnr
            self.assertGreaterEqual(gain, 1.0, msg=f"seed {seed}")

    def test_split_for_display(self):
        seq = FrameSequence.from_array(np.array([[[-1.0, 0.0]], [[2.0, 0.5]]]))
        out = split_for_display(seq).stack()
        self.assertEqual((out.min(), out.max()), (0.0, 1.0))
        flat = split_for_display(FrameSequence.from_array(np.full((2, 2, 2), 0.3))).stack()
        np.testing.assert_array_equal(flat, 0.0)

    def test_replace_keeps_defaults(self):
        cfg = replace(SuperResConfig(), factor=3)
        self.assertAlmostEqual(cfg.blur_sigma(), 0.9)
        op = block_diag_data_operator(gaussian_blur(cfg.blur_sigma(), (9, 9)), decimate(3, (9, 9)), 1)
        self.assertEqual(op.output_dim, 9)


if __name__ == "__main__":
    unittest.main()
