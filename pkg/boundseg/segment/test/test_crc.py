import math
import unittest

import numpy as np
import torch
import torch.nn.functional as F

from boundseg.common import consts, exceptions
from boundseg.segment import crc, geometry


def _block_mask(lo=3, hi=11, size=14):
    mask = np.zeros((size, size), dtype=bool)
    mask[lo:hi, lo:hi] = True
    return mask


def _class_embeddings(mask):
    """ (1, 0) on background pixels, (0, 1) on foreground pixels """
    grid = torch.zeros(2, *mask.shape, dtype=torch.float64)
    grid[0][torch.from_numpy(~mask)] = 1.0
    grid[1][torch.from_numpy(mask)] = 1.0
    return grid


def _random_roi(rng, roi_id, dim=6):
    values = F.normalize(torch.from_numpy(rng.normal(size=(dim, 14, 14))),
                         dim=0)
    mask = np.zeros((14, 14), dtype=bool)
    rows, cols = np.mgrid[:14, :14]
    r, c = rng.uniform(0, 14, size=2)
    mask |= (rows - r) ** 2 + (cols - c) ** 2 <= rng.uniform(0, 6) ** 2
    return crc.CrcRoI(values, mask, roi_id)


class TestSampling(unittest.TestCase):
    grid = torch.arange(2 * 14 * 14, dtype=torch.float32).reshape(2, 14, 14)

    def _region(self, count):
        region = np.zeros((14, 14), dtype=bool)
        region.flat[:count] = True
        return region

    def test_counts(self):
        self.assertEqual((5, 2), tuple(crc.sample_region(
            self.grid, self._region(10), 0.5, 0).shape))
        self.assertEqual((7, 2), tuple(crc.sample_region(
            self.grid, self._region(10), 0.7, 0).shape))
        self.assertEqual((1, 2), tuple(crc.sample_region(
            self.grid, self._region(1), 0.1, 0).shape))
        self.assertEqual((0, 2), tuple(crc.sample_region(
            self.grid, self._region(0), 0.7, 0).shape))

    def test_vectors_come_from_region(self):
        region = self._region(10)
        samples = crc.sample_region(self.grid, region, 0.5, 3)
        allowed = {tuple(self.grid[:, r, c].tolist())
                   for r, c in geometry.coords(region)}
        for vector in samples:
            self.assertIn(tuple(vector.tolist()), allowed)
        self.assertEqual(5, len({tuple(v.tolist()) for v in samples}))

    def test_seeded(self):
        region = self._region(40)
        first = crc.sample_region(self.grid, region, 0.3, 11)
        self.assertTrue(torch.equal(
            first, crc.sample_region(self.grid, region, 0.3, 11)))
        self.assertTrue(torch.equal(
            first, crc.sample_region(self.grid, geometry.coords(region), 0.3,
                                     11)))

    def test_invalid(self):
        with self.assertRaises(ValueError):
            crc.sample_region(self.grid, self._region(4), 0.0, 0)
        with self.assertRaises(ValueError):
            crc.sample_region(self.grid, self._region(4), 1.5, 0)
        with self.assertRaises(exceptions.ShapeError):
            crc.sample_region(self.grid, np.zeros((28, 28), dtype=bool), 0.5,
                              0)


class TestQueries(unittest.TestCase):
    def test_identical_vectors(self):
        u = torch.tensor([[0.6, 0.8]])
        v = torch.tensor([[0.0, 1.0]])
        q_b, q_f = crc.make_queries([u, u], [u], [v], [v, v])
        self.assertTrue(torch.allclose(u[0], q_b))
        self.assertTrue(torch.allclose(v[0], q_f))

    def test_renormalised_mean(self):
        e1, e2 = torch.eye(2)
        q_b, _ = crc.make_queries([e1[None]], [e2[None]], [e1[None]], [])
        expected = torch.full((2,), 1 / math.sqrt(2))
        self.assertTrue(torch.allclose(expected, q_b))

    def test_roi_order(self):
        generator = torch.Generator().manual_seed(0)
        keys = [torch.randn(3, 4, generator=generator) for _ in range(8)]
        forward = crc.make_queries(keys[0:2], keys[2:4], keys[4:6], keys[6:8])
        backward = crc.make_queries(keys[1::-1], keys[3:1:-1], keys[5:3:-1],
                                    keys[7:5:-1])
        for a, b in zip(forward, backward):
            self.assertTrue(torch.allclose(a, b, atol=1e-6))

    def test_empty_side(self):
        empty = torch.zeros(0, 2)
        with self.assertRaises(exceptions.ContrastiveInputError):
            crc.make_queries([empty], [empty], [torch.eye(2)], [])


class TestPairing(unittest.TestCase):
    def test_even(self):
        pairs = crc.pair_rois(4, seed=0)
        self.assertEqual(2, len(pairs))
        self.assertEqual([0, 1, 2, 3], sorted(i for p in pairs for i in p))

    def test_single(self):
        self.assertEqual([(0, 0)], crc.pair_rois(["roi"], seed=5))

    def test_odd(self):
        pairs = crc.pair_rois(5, seed=1)
        self.assertEqual(3, len(pairs))
        self.assertEqual(pairs[-1][0], pairs[-1][1])
        self.assertEqual([0, 1, 2, 3, 4],
                         sorted({i for p in pairs for i in p}))

    def test_seeded(self):
        self.assertEqual(crc.pair_rois(10, seed=3), crc.pair_rois(10, seed=3))

    def test_empty(self):
        with self.assertRaises(ValueError):
            crc.pair_rois([], seed=0)


class TestRegionMasks(unittest.TestCase):
    def test_roi_scale_downsamples(self):
        mask = np.zeros((28, 28), dtype=bool)
        mask[6:22, 6:22] = True
        bands = crc.region_masks(mask, 1)
        self.assertEqual((14, 14), bands.p_inn.shape)
        expected = geometry.compute_bands(_block_mask(3, 11), 1)
        self.assertTrue(np.array_equal(expected.p_inn, bands.p_inn))

    def test_mask_scale(self):
        mask = np.zeros((28, 28), dtype=bool)
        mask[6:22, 6:22] = True
        bands = crc.region_masks(mask, 2, band_scale="mask")
        full = geometry.compute_bands(mask, 4)
        self.assertEqual((14, 14), bands.p_out.shape)
        self.assertEqual(2, bands.d)
        self.assertTrue(np.array_equal(full.p_out[::2, ::2], bands.p_out))
        self.assertTrue(np.array_equal(full.p_fore_inn[::2, ::2],
                                       bands.p_fore_inn))
        # The four regions still partition the grid
        total = sum(grid.astype(int) for grid in bands[:4])
        self.assertTrue((total == 1).all())

    def test_mask_scale_needs_full_mask(self):
        with self.assertRaises(exceptions.ShapeError):
            crc.region_masks(_block_mask(), 2, band_scale="mask")
        with self.assertRaises(ValueError):
            crc.region_masks(_block_mask(), 2, band_scale="image")


class TestCrcStep(unittest.TestCase):
    def test_both_empty(self):
        empty = np.zeros((14, 14), dtype=bool)
        values = torch.ones(2, 14, 14)
        result = crc.crc_step(crc.CrcRoI(values, empty, 0),
                              crc.CrcRoI(values, empty, 1), 4, 0.7, 0.1, 0)
        self.assertEqual(0.0, float(result.loss))
        self.assertEqual(1, result.skipped)
        self.assertIsNone(result.batch)

    def test_orthogonal_classes(self):
        mask = _block_mask()
        roi = crc.CrcRoI(_class_embeddings(mask), mask, 0)
        result = crc.crc_step(roi, roi, 1, 0.01, 1.0, seed=0)
        self.assertEqual(0, result.skipped)
        for name in ("k_back", "k_out", "k_fore", "k_inn"):
            self.assertEqual(1, len(result.batch.keys(name)))
        self.assertAlmostEqual(4 * math.log1p(math.exp(-1)),
                               float(result.loss), places=6)

    def test_zero_distance_drops_bands(self):
        mask = _block_mask()
        roi = crc.CrcRoI(_class_embeddings(mask), mask, 0)
        result = crc.crc_step(roi, roi, 0, 0.01, 1.0, seed=0)
        self.assertEqual(0, len(result.batch.keys("k_inn")))
        self.assertAlmostEqual(2 * math.log1p(math.exp(-1)),
                               float(result.loss), places=6)

    def test_sample_sizes(self):
        rng = np.random.default_rng(1)
        roi_i, roi_j = _random_roi(rng, 0), _random_roi(rng, 1)
        result = crc.crc_step(roi_i, roi_j, 2, 0.5, 0.1, seed=2)
        if result.skipped:
            return
        for roi, index in ((roi_i, 0), (roi_j, 1)):
            bands = crc.region_masks(roi.mask, 2)
            self.assertEqual(crc.sample_count(int(bands.p_inn.sum()), 0.5),
                             len(result.batch.k_inn[index]))
        for vector in result.batch.keys("k_back"):
            self.assertAlmostEqual(1.0, float(vector.norm()), places=6)

    def test_random_pairs(self):
        rng = np.random.default_rng(2)
        for step in range(100):
            roi_i = _random_roi(rng, 2 * step)
            roi_j = _random_roi(rng, 2 * step + 1)
            d = int(rng.choice([0, 2, 4, 6]))
            result = crc.crc_step(roi_i, roi_j, d, 0.7, 0.1, seed=step)
            loss = float(result.loss)
            self.assertTrue(math.isfinite(loss))
            self.assertGreaterEqual(loss, 0.0)

    def test_swap(self):
        rng = np.random.default_rng(3)
        for step in range(20):
            roi_i = _random_roi(rng, 5)
            roi_j = _random_roi(rng, 9)
            forward = crc.crc_step(roi_i, roi_j, 2, 0.5, 0.1, seed=step)
            backward = crc.crc_step(roi_j, roi_i, 2, 0.5, 0.1, seed=step)
            self.assertEqual(forward.skipped, backward.skipped)
            self.assertAlmostEqual(float(forward.loss), float(backward.loss),
                                   places=6)

    def test_seeded(self):
        rng = np.random.default_rng(4)
        roi_i, roi_j = _random_roi(rng, 0), _random_roi(rng, 1)
        first = crc.crc_step(roi_i, roi_j, 4, 0.3, 0.1, seed=8)
        second = crc.crc_step(roi_i, roi_j, 4, 0.3, 0.1, seed=8)
        self.assertEqual(float(first.loss), float(second.loss))

    def test_provenance(self):
        mask = _block_mask()
        good = crc.CrcRoI(_class_embeddings(mask), mask, 0,
                          consts.Provenance.PSEUDO, consts.Provenance.PSEUDO)
        bad = crc.CrcRoI(_class_embeddings(mask), mask, 1,
                         consts.Provenance.PSEUDO, consts.Provenance.HUMAN)
        crc.crc_step(good, good, 2, 0.5, 0.1, 0)
        with self.assertRaises(exceptions.ProvenanceError):
            crc.crc_step(good, bad, 2, 0.5, 0.1, 0)

    def test_margin_grows(self):
        torch.manual_seed(0)
        rng = np.random.default_rng(5)
        fore, back = rng.normal(size=(2, 8, 1, 1))
        rois = []
        for roi_id in range(4):
            mask = _random_roi(rng, roi_id).mask | _block_mask(5, 9)
            values = np.where(mask[None], fore, back) \
                + 0.5 * rng.normal(size=(8, 14, 14))
            rois.append(crc.CrcRoI(torch.tensor(values, dtype=torch.float32),
                                   mask, roi_id))

        projection = torch.nn.Conv2d(8, 4, kernel_size=1)
        optimizer = torch.optim.SGD(projection.parameters(), lr=0.2)

        def embed(x):
            return F.normalize(projection(x), dim=1)

        def margin():
            with torch.no_grad():
                values = []
                for i, j in ((0, 1), (2, 3)):
                    batch = crc.crc_step(rois[i], rois[j], 2, 0.7, 0.1, 0,
                                         embed=embed).batch
                    q_f = batch.q_f
                    values.append(
                        float((batch.keys("k_fore") @ q_f).mean()
                              - (batch.keys("k_back") @ q_f).mean()))
                return np.mean(values)

        before = margin()
        for _ in range(50):
            optimizer.zero_grad()
            loss = sum(crc.crc_step(rois[i], rois[j], 2, 0.7, 0.1, 0,
                                    embed=embed).loss
                       for i, j in ((0, 1), (2, 3)))
            loss.backward()
            optimizer.step()
        self.assertGreater(margin(), before)


if __name__ == '__main__':
    unittest.main()
