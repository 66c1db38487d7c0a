import math
import unittest

import numpy as np
import torch

from boundseg.common import config, exceptions
from boundseg.segment import losses


def _unit(*values):
    return torch.tensor(values, dtype=torch.float64)


class TestSegLoss(unittest.TestCase):
    def test_saturated_prediction(self):
        target = torch.tensor([[1., 0.], [0., 1.]])
        logits = torch.where(target > 0, torch.tensor(20.), torch.tensor(-20.))
        self.assertLess(float(losses.seg_loss(logits, target)), 1e-8)

    def test_zero_logits(self):
        target = torch.tensor([[1., 0., 1.], [0., 0., 1.]])
        loss = losses.seg_loss(torch.zeros(2, 3), target)
        self.assertAlmostEqual(math.log(2), float(loss), places=6)

    def test_weighted(self):
        target = np.array([[1, 0], [0, 0]], dtype=bool)
        weights = np.array([[0.2, 1.0], [1.0, 1.0]], dtype=np.float32)
        loss = losses.seg_loss(torch.zeros(2, 2), target, weights)
        self.assertAlmostEqual(0.8 * math.log(2), float(loss), places=6)

    def test_shape_mismatch(self):
        with self.assertRaises(exceptions.ShapeError):
            losses.seg_loss(torch.zeros(2, 2), torch.zeros(2, 3))
        with self.assertRaises(exceptions.ShapeError):
            losses.seg_loss(torch.zeros(2, 2), torch.zeros(2, 2),
                            torch.ones(3, 2))

    def test_empty(self):
        self.assertEqual(0.0, float(losses.seg_loss(torch.zeros(0, 28, 28),
                                                    torch.zeros(0, 28, 28))))

    def test_gradient(self):
        generator = torch.Generator().manual_seed(0)
        target = (torch.rand(5, 5, generator=generator) > 0.5).double()
        weights = torch.rand(5, 5, generator=generator, dtype=torch.float64)
        for _ in range(10):
            logits = torch.randn(5, 5, generator=generator,
                                 dtype=torch.float64, requires_grad=True)
            self.assertTrue(torch.autograd.gradcheck(
                lambda x: losses.seg_loss(x, target, weights), (logits,),
                eps=1e-4, atol=1e-8, rtol=1e-4))


class TestDetLoss(unittest.TestCase):
    anchors = torch.tensor([[0., 0., 12., 12.], [40., 40., 52., 52.],
                            [80., 80., 104., 104.]], dtype=torch.float64)

    def test_no_targets(self):
        logits = torch.full((3,), -20.0, dtype=torch.float64)
        loss = losses.det_loss(logits, torch.zeros(3, 4, dtype=torch.float64),
                               self.anchors, [])
        self.assertLess(float(loss), 1e-8)

    def test_smooth_l1_term(self):
        logits = torch.tensor([3.0, -3.0, -3.0], dtype=torch.float64)
        perfect = torch.zeros(3, 4, dtype=torch.float64)
        off = perfect.clone()
        off[0] = 0.5
        targets = [(0., 0., 12., 12.)]
        base = losses.det_loss(logits, perfect, self.anchors, targets)
        shifted = losses.det_loss(logits, off, self.anchors, targets)
        self.assertAlmostEqual(0.5, float(shifted - base), places=9)

    def test_perfect_offsets(self):
        logits = torch.tensor([20.0, -20.0, -20.0], dtype=torch.float64)
        loss = losses.det_loss(logits, torch.zeros(3, 4, dtype=torch.float64),
                               self.anchors, [(0., 0., 12., 12.)])
        self.assertLess(float(loss), 1e-8)

    def test_match_anchors(self):
        labels, matched = losses.match_anchors(
            self.anchors, torch.tensor([[1., 1., 12., 12.],
                                        [41., 44., 52., 56.]],
                                       dtype=torch.float64))
        self.assertEqual([1, 1, 0], labels.tolist())
        self.assertEqual([0, 1], matched[:2].tolist())

    def test_best_anchor_below_ignored_band_stays_negative(self):
        labels, _ = losses.match_anchors(
            torch.tensor([[0., 0., 10., 10.]]),
            torch.tensor([[5., 5., 20., 20.]]))
        self.assertEqual([0], labels.tolist())

    def test_best_anchor_in_ignored_band_is_promoted(self):
        # IoU 88 / 188
        labels, matched = losses.match_anchors(
            self.anchors[1:2], torch.tensor([[41., 44., 52., 56.]],
                                            dtype=torch.float64))
        self.assertEqual([1], labels.tolist())
        self.assertEqual([0], matched.tolist())

    def test_balanced_objectness(self):
        logits = torch.tensor([0.0, 2.0, 2.0], dtype=torch.float64)
        loss = losses.det_loss(logits, torch.zeros(3, 4, dtype=torch.float64),
                               self.anchors, [(0., 0., 12., 12.)])
        expected = 0.5 * (math.log(2) + math.log1p(math.exp(2)))
        self.assertAlmostEqual(expected, float(loss), places=9)

    def test_shape_mismatch(self):
        with self.assertRaises(exceptions.ShapeError):
            losses.det_loss(torch.zeros(2), torch.zeros(3, 4),
                            self.anchors.float(), [])

    def test_gradient(self):
        generator = torch.Generator().manual_seed(1)
        targets = [(1., 2., 13., 11.), (39., 41., 50., 53.)]
        for _ in range(10):
            logits = torch.randn(3, generator=generator, dtype=torch.float64,
                                 requires_grad=True)
            deltas = (0.3 * torch.randn(3, 4, generator=generator,
                                        dtype=torch.float64)) \
                .requires_grad_()
            self.assertTrue(torch.autograd.gradcheck(
                lambda x, y: losses.det_loss(x, y, self.anchors, targets),
                (logits, deltas), eps=1e-4, atol=1e-8, rtol=1e-4))


class TestClTerm(unittest.TestCase):
    def test_no_negatives(self):
        q = _unit(1., 0.)
        loss = losses.cl_term(q, [_unit(0.6, 0.8)], [], 0.1)
        self.assertEqual(0.0, float(loss))

    def test_opposite_negative(self):
        q = _unit(1., 0.)
        loss = losses.cl_term(q, [q], [_unit(-1., 0.)], 1.0)
        self.assertAlmostEqual(math.log1p(math.exp(-2)), float(loss),
                               places=6)
        self.assertAlmostEqual(0.126928, float(loss), places=6)

    def test_orthogonal_positive(self):
        loss = losses.cl_term(_unit(1., 0.), [_unit(0., 1.)], [_unit(0., 1.)],
                              1.0)
        self.assertAlmostEqual(math.log(2), float(loss), places=6)

    def test_raw_vectors_use_cosine(self):
        small = losses.cl_term(_unit(1., 0.), [_unit(1., 0.)],
                               [_unit(-1., 0.)], 1.0)
        scaled = losses.cl_term(_unit(3., 0.), [_unit(0.5, 0.)],
                                [_unit(-7., 0.)], 1.0)
        self.assertAlmostEqual(float(small), float(scaled), places=9)

    def test_mean_over_positives(self):
        q = _unit(1., 0.)
        negatives = [_unit(0., 1.)]
        both = losses.cl_term(q, [_unit(1., 0.), _unit(0., 1.)], negatives,
                              0.5)
        first = losses.cl_term(q, [_unit(1., 0.)], negatives, 0.5)
        second = losses.cl_term(q, [_unit(0., 1.)], negatives, 0.5)
        self.assertAlmostEqual(float(first + second) / 2, float(both),
                               places=9)

    def test_empty_positives(self):
        with self.assertRaises(exceptions.ContrastiveInputError):
            losses.cl_term(_unit(1., 0.), [], [_unit(0., 1.)], 0.1)

    def test_zero_norm(self):
        with self.assertRaises(exceptions.ContrastiveInputError):
            losses.cl_term(_unit(0., 0.), [_unit(1., 0.)], [], 0.1)
        with self.assertRaises(exceptions.ContrastiveInputError):
            losses.cl_term(_unit(1., 0.), [_unit(1., 0.)], [_unit(0., 0.)],
                           0.1)

    def test_negative_permutation(self):
        generator = torch.Generator().manual_seed(2)
        q = torch.randn(8, generator=generator, dtype=torch.float64)
        positives = torch.randn(3, 8, generator=generator, dtype=torch.float64)
        negatives = torch.randn(6, 8, generator=generator, dtype=torch.float64)
        reference = losses.cl_term(q, positives, negatives, 0.1)
        for _ in range(5):
            order = torch.randperm(6, generator=generator)
            self.assertAlmostEqual(
                float(reference),
                float(losses.cl_term(q, positives, negatives[order], 0.1)),
                places=9)

    def test_decreases_with_positive_similarity(self):
        q = _unit(1., 0.)
        negatives = [_unit(-0.2, 1.), _unit(0.3, -1.)]
        values = [float(losses.cl_term(
            q, [_unit(math.cos(angle), math.sin(angle))], negatives, 0.1))
            for angle in np.linspace(math.pi, 0.0, 12)]
        for before, after in zip(values, values[1:]):
            self.assertGreater(before, after)

    def test_gradient(self):
        generator = torch.Generator().manual_seed(3)
        for _ in range(10):
            inputs = tuple(
                torch.randn(*shape, generator=generator, dtype=torch.float64,
                            requires_grad=True)
                for shape in ((5,), (3, 5), (4, 5)))
            self.assertTrue(torch.autograd.gradcheck(
                lambda q, pos, neg: losses.cl_term(q, pos, neg, 0.5), inputs,
                eps=1e-4, atol=1e-8, rtol=1e-4))


class TestCrcLoss(unittest.TestCase):
    def test_orthogonal_classes(self):
        u, v = _unit(1., 0.), _unit(0., 1.)
        loss = losses.crc_loss(u, v, [u], [u], [v], [v], 1.0)
        self.assertAlmostEqual(4 * math.log1p(math.exp(-1)), float(loss),
                               places=6)

    def test_identical_keys(self):
        u = _unit(0.6, 0.8)
        keys = [u, u]
        loss = losses.crc_loss(_unit(1., 0.), _unit(0., 1.), keys, keys, keys,
                               keys, 0.1)
        self.assertAlmostEqual(4 * math.log(3), float(loss), places=6)

    def test_roi_order(self):
        generator = torch.Generator().manual_seed(4)
        sets = [(torch.randn(2, 6, generator=generator, dtype=torch.float64),
                 torch.randn(3, 6, generator=generator, dtype=torch.float64))
                for _ in range(4)]
        q_b = torch.randn(6, generator=generator, dtype=torch.float64)
        q_f = torch.randn(6, generator=generator, dtype=torch.float64)
        forward = losses.crc_loss(q_b, q_f, *[torch.cat((i, j))
                                              for i, j in sets], 0.1)
        backward = losses.crc_loss(q_b, q_f, *[torch.cat((j, i))
                                               for i, j in sets], 0.1)
        self.assertAlmostEqual(float(forward), float(backward), places=9)

    def test_empty_set(self):
        u, v = _unit(1., 0.), _unit(0., 1.)
        with self.assertRaises(exceptions.ContrastiveInputError):
            losses.crc_loss(u, v, [u], [], [v], [v], 1.0)
        loss = losses.crc_loss(u, v, [u], [], [v], [], 1.0, allow_empty=True)
        self.assertAlmostEqual(2 * math.log1p(math.exp(-1)), float(loss),
                               places=6)

    def test_gradient(self):
        generator = torch.Generator().manual_seed(5)
        for _ in range(10):
            inputs = tuple(
                torch.randn(*shape, generator=generator, dtype=torch.float64,
                            requires_grad=True)
                for shape in ((4,), (4,), (2, 4), (3, 4), (2, 4), (1, 4)))
            self.assertTrue(torch.autograd.gradcheck(
                lambda *args: losses.crc_loss(*args, 0.3), inputs,
                eps=1e-4, atol=1e-8, rtol=1e-4))


class TestTotals(unittest.TestCase):
    def test_teacher(self):
        self.assertEqual(0, losses.teacher_loss(0, 0))
        self.assertAlmostEqual(0.5, losses.teacher_loss(0.3, 0.2))

    def test_student(self):
        defaults = losses.LossWeights()
        self.assertEqual(0, losses.student_loss(0, 0, 0, 0, defaults))
        self.assertEqual(4, losses.student_loss(1, 1, 1, 1, defaults))
        weights = losses.LossWeights(w1=2, w2=0, w3=1)
        self.assertAlmostEqual(
            1.2, losses.student_loss(0.5, 0.2, 0.1, 0.3, weights))

    def test_validate(self):
        self.assertEqual(losses.LossWeights(),
                         losses.LossWeights().validate())
        with self.assertRaises(ValueError):
            losses.LossWeights(w2=-1.0).validate()
        with self.assertRaises(ValueError):
            losses.LossWeights(tau=0.0).validate()

    def test_from_config(self):
        config.load(config.DEFAULTS_FILE)
        self.assertEqual(losses.LossWeights(1.0, 1.0, 1.0, 0.1),
                         losses.LossWeights.from_config())


if __name__ == '__main__':
    unittest.main()
