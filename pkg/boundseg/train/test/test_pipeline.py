import configparser
import glob
import hashlib
import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import torch
from torchvision import ops

from boundseg.common import config, consts, data_io, exceptions, file
from boundseg.datagen import main as datagen
from boundseg.datagen import scene as scenes
from boundseg.evaluate import metrics
from boundseg.segment import losses
from boundseg.segment.model import ModelOptions, NucleusNet
from boundseg.train import pipeline, pseudolabel

_SMALL = """
[Data]
    height: 64
    width: 64
    nuclei: 3
    min_radius: 5
    max_radius: 7
    texture_noise: 0.02
    contrast: 0.15
    max_overlap: 0.0
    patch: 64
    overlap: 32
"""

TINY = pipeline.TrainConfig(
    epochs_teacher=1, epochs_student=1, batch_size=2, t_box=0.0, max_rois=4,
    model=ModelOptions(channels=4, embed_dim=3, top_k=5))


def make_dataset(directory, seed=0):
    """ 8 one-patch scenes of 64 x 64: 1 labeled, 4 unlabeled, 2 val, 1 test """
    parser = configparser.ConfigParser()
    parser.read_string(_SMALL)
    with mock.patch("boundseg.datagen.main.config.get_section",
                    return_value=parser["Data"]):
        return datagen.generate_dataset(directory, 8, "1/4", seed)


def _state(net):
    return {name: value.clone() for name, value in net.state_dict().items()}


def _assert_same_state(test, first, second):
    test.assertEqual(first.keys(), second.keys())
    for name in first:
        test.assertTrue(torch.equal(first[name], second[name]), name)


class TestHeadFlags(unittest.TestCase):
    def test_parse(self):
        self.assertEqual(pipeline.HeadFlags(True, True, False),
                         pipeline.HeadFlags.parse("nmh+lrd"))
        self.assertEqual(pipeline.HeadFlags(False, True, True),
                         pipeline.HeadFlags.parse("lrd, crc"))

    def test_label(self):
        for text in ("nmh", "lrd", "nmh+lrd", "nmh+lrd+crc"):
            self.assertEqual(text, pipeline.HeadFlags.parse(text).label())

    def test_unknown_head(self):
        with self.assertRaises(ValueError):
            pipeline.HeadFlags.parse("nmh+fpn")

    def test_needs_a_mask_head(self):
        with self.assertRaises(ValueError):
            pipeline.HeadFlags(False, False, True).validate()
        pipeline.HeadFlags(False, True, False).validate()


class TestTrainConfig(unittest.TestCase):
    def test_defaults_match_config_file(self):
        config.load(config.DEFAULTS_FILE)
        self.assertEqual(pipeline.TrainConfig(),
                         pipeline.TrainConfig.from_config())

    def test_dict_round_trip(self):
        cfg = TINY._replace(head_flags=pipeline.HeadFlags(True, False, True),
                            ratio="1/2")
        self.assertEqual(cfg, pipeline.TrainConfig.from_dict(cfg.to_dict()))

    def test_digests(self):
        base = pipeline.TrainConfig()
        student_only = base._replace(alpha=0.1, d=2,
                                     head_flags=pipeline.HeadFlags.parse(
                                         "nmh"))
        self.assertNotEqual(base.digest(), student_only.digest())
        self.assertEqual(base.teacher_digest(), student_only.teacher_digest())
        self.assertNotEqual(base.teacher_digest(),
                            base._replace(seed=1).teacher_digest())
        self.assertEqual(base.digest(), pipeline.TrainConfig().digest())

    def test_validate(self):
        for change in ({"alpha": 0.0}, {"alpha": 1.5}, {"d": -1},
                       {"t_box": 1.2}, {"batch_size": 0},
                       {"band_scale": "image"}, {"aggregate": "median"},
                       {"loss_weights": losses.LossWeights(tau=0.0)},
                       {"head_flags": pipeline.HeadFlags(False, False,
                                                         True)}):
            with self.assertRaises(ValueError):
                pipeline.TrainConfig()._replace(**change).validate()


class TestTargets(unittest.TestCase):
    def test_instance_boxes(self):
        labels = np.zeros((16, 16), dtype=np.int32)
        labels[2:5, 3:9] = 1
        labels[10:16, 0:2] = 3
        ids, boxes = pipeline.instance_boxes(labels)
        np.testing.assert_array_equal([1, 3], ids)
        np.testing.assert_array_equal([[3, 2, 9, 5], [0, 10, 2, 16]], boxes)

    def test_no_instances(self):
        ids, boxes = pipeline.instance_boxes(np.zeros((4, 4), dtype=int))
        self.assertEqual((0,), ids.shape)
        self.assertEqual((0, 4), boxes.shape)

    def test_fit_boxes(self):
        fitted = pipeline.fit_boxes([[0, 10, 2, 16], [9, 9, 7, 8],
                                     [-3, 20, 10, 40]], (32, 32))
        np.testing.assert_allclose([[0, 10, 4, 16], [6, 6.5, 10, 10.5],
                                    [0, 12, 13, 32]], fitted)

    def test_jitter_bounds(self):
        rng = np.random.default_rng(0)
        boxes = np.array([[10.0, 10.0, 30.0, 20.0]] * 50)
        jittered = pipeline.jitter_boxes(boxes, 0.1, rng, (64, 64))
        np.testing.assert_array_less(np.abs(jittered - boxes),
                                     np.tile([2.0, 1.0], 2) + 1e-9)
        np.testing.assert_allclose(
            pipeline.fit_boxes(boxes, (64, 64)),
            pipeline.jitter_boxes(boxes, 0.0, rng, (64, 64)))

    def test_mask_targets(self):
        labels = np.zeros((32, 32), dtype=np.int32)
        labels[8:16, 8:16] = 2
        mask28, mask14 = pipeline.mask_targets(labels, [2],
                                               [[4.0, 4.0, 20.0, 20.0]])
        self.assertEqual((1, 28, 28), mask28.shape)
        self.assertEqual((1, 14, 14), mask14.shape)
        self.assertTrue(mask28[0, 10:18, 10:18].all())
        self.assertFalse(mask28[0, :5].any())
        self.assertFalse(mask28[0, :, 23:].any())
        self.assertTrue(mask14[0, 7, 7])

    def test_mask_targets_empty(self):
        mask28, mask14 = pipeline.mask_targets(np.zeros((8, 8)), [],
                                               np.zeros((0, 4)))
        self.assertEqual((0, 28, 28), mask28.shape)
        self.assertEqual((0, 14, 14), mask14.shape)


class _DatasetTest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls._tmp = tempfile.TemporaryDirectory()
        cls.data = os.path.join(cls._tmp.name, "data")
        cls.split = make_dataset(cls.data)
        cls.labeled = pipeline.load_records(cls.data, cls.split.labeled)

    @classmethod
    def tearDownClass(cls):
        cls._tmp.cleanup()

    def setUp(self):
        self.runs = tempfile.TemporaryDirectory()

    def tearDown(self):
        self.runs.cleanup()


class TestData(_DatasetTest):
    def test_load_records(self):
        self.assertEqual(1, len(self.labeled))
        record = self.labeled[0]
        self.assertEqual((64, 64, 3), record.image.shape)
        self.assertIs(consts.Provenance.HUMAN, record.provenance)
        self.assertIs(consts.Provenance.HUMAN, record.mask_source)
        self.assertEqual(3, len(np.unique(record.labels[record.labels > 0])))

    def test_resolve_split(self):
        self.assertEqual(self.split, pipeline.resolve_split(self.data))
        self.assertEqual(self.split, pipeline.resolve_split(self.data,
                                                            "1/4"))
        half = pipeline.resolve_split(self.data, "1/2")
        self.assertEqual(3, len(half.labeled))
        self.assertEqual((self.split.val, self.split.test),
                         (half.val, half.test))
        self.assertEqual(sorted(self.split.labeled + self.split.unlabeled),
                         sorted(half.labeled + half.unlabeled))


class TestTeacher(_DatasetTest):
    def test_deterministic(self):
        first, first_history = pipeline.train_teacher(TINY, self.labeled)
        second, second_history = pipeline.train_teacher(TINY, self.labeled)
        self.assertEqual(first_history, second_history)
        _assert_same_state(self, _state(first), _state(second))

    def test_losses(self):
        cfg = TINY._replace(epochs_teacher=2)
        _, history = pipeline.train_teacher(cfg, self.labeled)
        self.assertEqual(2, len(history))
        for epoch in history:
            self.assertEqual("teacher", epoch.stage)
            self.assertEqual((0.0, 0.0), (epoch.lrd, epoch.cl))
            self.assertAlmostEqual(epoch.det + epoch.nmh, epoch.total,
                                   places=5)
            self.assertGreater(epoch.nmh, 0.0)

    def test_checkpoint(self):
        path = os.path.join(self.runs.name, "teacher.ckpt")
        teacher, _ = pipeline.train_teacher(TINY, self.labeled, path)
        self.assertTrue(os.path.isfile(path))
        self.assertFalse(teacher.training)

    def test_needs_records(self):
        with self.assertRaises(ValueError):
            pipeline.train_teacher(TINY, [])

    def test_divergence_guard(self):
        nan = torch.tensor(float("nan"))
        broken = pipeline._StepLosses(nan, nan, nan, nan, nan, 0)
        records = self.labeled * 4
        with mock.patch("boundseg.train.pipeline._batch_losses",
                        return_value=broken), \
                self.assertLogs("boundseg.train.pipeline", "WARNING"):
            with self.assertRaises(exceptions.DivergenceError) as caught:
                pipeline.train_teacher(TINY._replace(batch_size=1), records)
        self.assertEqual(2, caught.exception.step)


class TestStudent(_DatasetTest):
    def _student_set(self):
        teacher, _ = pipeline.train_teacher(TINY, self.labeled)
        images = [(r.image_id, r.image) for r in pipeline.load_records(
            self.data, self.split.unlabeled)]
        pseudo = pipeline.generate_pseudo(TINY, teacher, images)
        return pseudolabel.assemble_student_set(
            ((r.image_id, r.image, r.labels) for r in self.labeled), pseudo)

    def setUp(self):
        super().setUp()
        self.records = self._student_set()

    def test_student_set(self):
        self.assertEqual(5, len(self.records))
        self.assertEqual(4, sum(r.provenance is consts.Provenance.PSEUDO
                                for r in self.records))

    def test_disabled_heads_are_zero(self):
        cfg = TINY._replace(epochs_student=2,
                            head_flags=pipeline.HeadFlags.parse("nmh"))
        _, history, _ = pipeline.train_student(cfg, self.records)
        for epoch in history:
            self.assertEqual("student", epoch.stage)
            self.assertEqual(0.0, epoch.lrd)
            self.assertEqual(0.0, epoch.cl)
            self.assertEqual(0, epoch.skipped_pairs)

    def test_zero_weight_matches_disabled_crc(self):
        weighted = TINY._replace(
            loss_weights=losses.LossWeights(w3=0.0), epochs_student=2)
        disabled = weighted._replace(
            head_flags=pipeline.HeadFlags(True, True, False))
        first, _, _ = pipeline.train_student(weighted, self.records)
        second, _, _ = pipeline.train_student(disabled, self.records)
        _assert_same_state(self, _state(first), _state(second))

    def test_deterministic(self):
        first, first_history, _ = pipeline.train_student(TINY, self.records)
        second, second_history, _ = pipeline.train_student(TINY,
                                                           self.records)
        self.assertEqual(first_history, second_history)
        _assert_same_state(self, _state(first), _state(second))

    def test_validation_per_epoch(self):
        cfg = TINY._replace(epochs_student=2)
        val = pipeline.load_records(self.data, self.split.val)
        _, _, val_dice = pipeline.train_student(cfg, self.records,
                                                val_records=val)
        self.assertEqual(2, len(val_dice))
        for dice in val_dice:
            self.assertTrue(0.0 <= dice <= 100.0)

    def test_teacher_left_untouched(self):
        path = os.path.join(self.runs.name, "teacher.ckpt")
        pipeline.train_teacher(TINY, self.labeled, path)
        with open(path, "rb") as archive:
            before = hashlib.sha256(archive.read()).hexdigest()
        cfg = TINY._replace(init_from_teacher=True)
        pipeline.train_student(cfg, self.records, path)
        with open(path, "rb") as archive:
            self.assertEqual(before, hashlib.sha256(archive.read())
                             .hexdigest())

    def test_init_needs_teacher(self):
        with self.assertRaises(exceptions.MissingArtifactError):
            pipeline.train_student(TINY._replace(init_from_teacher=True),
                                   self.records)

    def test_labeled_warmup(self):
        cfg = TINY._replace(labeled_warmup=1, epochs_student=1)
        _, history, _ = pipeline.train_student(cfg, self.records)
        self.assertEqual(1, len(history))
        self.assertTrue(np.isfinite(history[0].total))


class TestEvaluate(_DatasetTest):
    def test_blank_image(self):
        net = NucleusNet(TINY.model)
        torch.nn.init.constant_(net.det_objectness.bias, -20.0)
        blank = pseudolabel.TrainingRecord(
            "blank", np.zeros((64, 64, 3), np.float32),
            np.zeros((64, 64), np.int32), consts.Provenance.HUMAN,
            consts.Provenance.HUMAN)
        report, scores = pipeline.evaluate(net, [blank], TINY)
        self.assertEqual(100.0, report.dice)
        self.assertEqual(["blank"], list(scores))

    def test_order_invariant(self):
        teacher, _ = pipeline.train_teacher(TINY, self.labeled)
        records = pipeline.load_records(self.data, self.split.val
                                        + self.split.test)
        forward, _ = pipeline.evaluate(teacher, records, TINY, True, False)
        backward, _ = pipeline.evaluate(teacher, records[::-1], TINY, True,
                                        False)
        self.assertEqual(forward, backward)

    def test_predict_labels(self):
        net = NucleusNet(TINY.model)
        labels = pipeline.predict_labels(net, self.labeled[0].image, TINY)
        self.assertEqual((64, 64), labels.shape)
        self.assertEqual(np.int32, labels.dtype)


class TestRunStages(_DatasetTest):
    def test_stage_needs_teacher(self):
        for stage in (consts.Stage.PSEUDO, consts.Stage.STUDENT):
            with self.assertRaises(exceptions.MissingArtifactError):
                pipeline.run_stages(TINY, self.data, [stage],
                                    root=self.runs.name)

    def test_full_run(self):
        record = pipeline.run_stages(TINY, self.data, root=self.runs.name)
        self.assertEqual(["test", "val"], sorted(record.metrics))
        self.assertEqual(1, len(record.val_dice))
        self.assertEqual(["teacher", "student"],
                         [epoch.stage for epoch in record.epochs])
        self.assertTrue(record.check_bookkeeping(TINY.loss_weights))
        self.assertEqual(1, len(glob.glob(os.path.join(
            self.runs.name, "*", "run_record.json"))))
        self.assertEqual(2, len(glob.glob(os.path.join(
            self.runs.name, "*", "metrics_student_*.json"))))
        report = metrics.MetricsReport.from_dict(record.metrics["test"])
        self.assertAlmostEqual(report.pq, report.sq * report.rq / 100.0,
                               delta=1e-6)

    def test_resumes(self):
        first = pipeline.run_stages(TINY, self.data, root=self.runs.name)
        with mock.patch("boundseg.train.pipeline.train_teacher") as teacher, \
                mock.patch("boundseg.train.pipeline.train_student") as student:
            second = pipeline.run_stages(TINY, self.data,
                                         root=self.runs.name)
        teacher.assert_not_called()
        student.assert_not_called()
        self.assertEqual(first, second)

    def test_reproducible(self):
        first = pipeline.run_stages(TINY, self.data, root=self.runs.name)
        with tempfile.TemporaryDirectory() as other:
            second = pipeline.run_stages(TINY, self.data, root=other)
        self.assertEqual(first.metrics, second.metrics)
        self.assertEqual(first.epochs, second.epochs)

    def test_stage_by_stage(self):
        for stage in consts.Stage:
            result = pipeline.run_stages(TINY, self.data, [stage],
                                         root=self.runs.name)
        self.assertEqual(["test", "val"], sorted(result.metrics))
        self.assertEqual(["student"],
                         [epoch.stage for epoch in result.epochs])

    def test_shares_teacher_across_heads(self):
        pipeline.run_stages(TINY, self.data, root=self.runs.name)
        with mock.patch("boundseg.train.pipeline.train_teacher") as teacher:
            pipeline.run_stages(
                TINY._replace(head_flags=pipeline.HeadFlags.parse("nmh")),
                self.data, root=self.runs.name)
        teacher.assert_not_called()

    def test_regenerates_missing_pseudo_labels(self):
        pipeline.run_stages(TINY, self.data, root=self.runs.name)
        store = file.RunDirectory(TINY.teacher_digest(),
                                  root=self.runs.name).pseudo_dir
        with data_io.DatasetReader(self.data) as reader:
            unlabeled = reader.get_patch_ids(*self.split.unlabeled)
        held = pseudolabel.stored_ids(store)
        self.assertEqual(sorted(unlabeled), held)
        os.remove(os.path.join(store, held[0] + ".json"))
        self.assertFalse(pipeline._pseudo_ready(store, held, TINY))
        pipeline.run_stages(TINY, self.data, root=self.runs.name)
        self.assertTrue(pipeline._pseudo_ready(store, held, TINY))


class TestTrainedTeacher(_DatasetTest):
    """ A teacher overfit on a labeled patch and a one-nucleus scene """
    cfg = pipeline.TrainConfig(epochs_teacher=120, batch_size=1, flip=False,
                               t_box=0.5)

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        single = scenes.generate_scene(7, 64, 64, 1, 0.02, min_radius=6,
                                       max_radius=7)
        cls.single = pseudolabel.TrainingRecord(
            "single", single.image, single.labels, consts.Provenance.HUMAN,
            consts.Provenance.HUMAN)
        cls.teacher, cls.history = pipeline.train_teacher(
            cls.cfg, cls.labeled + [cls.single])

    def test_loss_decreases(self):
        self.assertLess(self.history[-1].total, self.history[0].total)

    def test_fits_labeled_patch(self):
        report, _ = pipeline.evaluate(self.teacher, self.labeled, self.cfg,
                                      True, False)
        self.assertGreater(report.tp, 0)
        self.assertGreater(report.dice, 90.0)

    def test_single_nucleus_single_detection(self):
        raw = pseudolabel.infer_teacher(self.teacher, self.single.image)
        self.assertEqual(1, len(raw))
        detection, _ = raw[0]
        self.assertGreaterEqual(detection.score, 0.5)
        _, boxes = pipeline.instance_boxes(self.single.labels)
        iou = ops.box_iou(torch.tensor([detection.box]),
                          torch.as_tensor(boxes, dtype=torch.float32))
        self.assertGreater(float(iou[0, 0]), 0.5)

    def test_blank_background_has_no_detection(self):
        blank = scenes.generate_scene(11, 64, 64, 0, 0.02)
        self.assertEqual([], pseudolabel.infer_teacher(self.teacher,
                                                       blank.image))


if __name__ == "__main__":
    unittest.main()
