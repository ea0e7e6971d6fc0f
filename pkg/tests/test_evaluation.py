import statistics

import numpy as np
import pytest

from anchorloc import data, evaluation, model, optim
from anchorloc.errors import (DegenerateOrientationError, InvalidInputError,
                              UndefinedRateError)
from anchorloc.evaluation import (co_located_anchors, discovery_rate,
                                  discovery_stats, evaluate, median, reconstruct_pose,
                                  report_from_poses, sweep_anchor_interval,
                                  sweep_csv_text)
from anchorloc.geometry import AnchorMap, yaw_quat
from anchorloc.loss import LossWeights
from anchorloc.model import NetworkSpec, PosePrediction
from anchorloc.optim import TrainConfig

from conftest import make_pose


def pred_with(logits, offsets, z=0.0, orient=(1, 0, 0, 0)):
    return PosePrediction(logits=np.asarray(logits, dtype=float),
                          offsets=np.asarray(offsets, dtype=float),
                          z_hat=float(z), orient_raw=np.asarray(orient, dtype=float))


class TestMedian:
    def test_even_count_rule(self):
        assert median([1, 3, 2, 10]) == 2.5

    def test_matches_statistics_median(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 3, 8, 9, 50, 51):
            v = list(rng.uniform(-10, 10, n))
            assert median(v) == pytest.approx(statistics.median(v), abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(InvalidInputError):
            median([])


class TestReconstructPose:
    def test_one_hot_perfect(self):
        amap = AnchorMap(anchors=np.array([[0.0, 0.0], [10.0, 0.0]]), frame_interval=1)
        pred = pred_with([40.0, 0.0], [[3.0, 4.0], [0.0, 0.0]], z=1.5)
        pose = reconstruct_pose(pred, amap)
        np.testing.assert_allclose(pose.position, [3.0, 4.0, 1.5])

    def test_argmax_tie_takes_lowest_index(self):
        amap = AnchorMap(anchors=np.array([[0.0, 0.0], [10.0, 0.0]]), frame_interval=1)
        pred = pred_with([2.0, 2.0], [[1.0, 0.0], [1.0, 0.0]])
        pose = reconstruct_pose(pred, amap)
        assert pose.position[0] == pytest.approx(1.0)

    def test_matches_direct_reimplementation(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            n = int(rng.integers(2, 9))
            amap = AnchorMap(anchors=rng.uniform(-5, 5, (n, 2)), frame_interval=1)
            pred = pred_with(rng.standard_normal(n), rng.standard_normal((n, 2)),
                             z=rng.standard_normal(), orient=rng.standard_normal(4) + 0.2)
            pose = reconstruct_pose(pred, amap)
            j = max(range(n), key=lambda i: pred.logits[i])
            expected = amap.anchors[j] + pred.offsets[j]
            np.testing.assert_allclose(pose.position[:2], expected, atol=1e-12)

    def test_weighted_equals_argmax_for_one_hot(self):
        rng = np.random.default_rng(2)
        amap = AnchorMap(anchors=rng.uniform(-5, 5, (4, 2)), frame_interval=1)
        logits = np.array([0.0, 50.0, 0.0, 0.0])
        pred = pred_with(logits, rng.standard_normal((4, 2)))
        a = reconstruct_pose(pred, amap, mode="argmax")
        b = reconstruct_pose(pred, amap, mode="weighted")
        np.testing.assert_allclose(a.position, b.position, atol=1e-12)

    def test_degenerate_orientation_raises(self):
        amap = AnchorMap(anchors=np.zeros((1, 2)), frame_interval=1)
        pred = pred_with([1.0], [[0.0, 0.0]], orient=np.zeros(4))
        with pytest.raises(DegenerateOrientationError):
            reconstruct_pose(pred, amap)


def batch_from_poses(poses, anchor_map, features=None, visible=None):
    n = len(poses)
    feats = features if features is not None else np.zeros((n, 3))
    return data.SampleBatch.build([f"s{i}" for i in range(n)], poses, feats,
                                  anchor_map, visible_sets=visible)


class TestReportFromPoses:
    def test_all_perfect(self):
        amap = AnchorMap(anchors=np.array([[0.0, 0.0], [4.0, 0.0]]), frame_interval=1)
        poses = [make_pose(0.5, 0.2, z=0.1, yaw=0.3), make_pose(3.0, -0.5, z=0.0, yaw=2.0)]
        batch = batch_from_poses(poses, amap)
        report = report_from_poses(batch.positions.copy(), batch.orientations.copy(),
                                   batch, np.zeros(2, dtype=int))
        assert report.median_translation_m == 0.0
        assert report.median_rotation_deg == pytest.approx(0.0, abs=1e-5)
        assert report.accuracy_2m_5deg == 1.0

    def test_threshold_edges(self):
        # 1.9 m / 4.9 deg counts; 2.1 m / 4.0 deg does not
        amap = AnchorMap(anchors=np.zeros((1, 2)), frame_interval=1)
        poses = [make_pose(0.0, 0.0, yaw=0.0), make_pose(0.0, 0.0, yaw=0.0)]
        batch = batch_from_poses(poses, amap)
        pred_xyz = np.array([[1.9, 0.0, 0.0], [2.1, 0.0, 0.0]])
        pred_q = np.stack([yaw_quat(np.radians(4.9)), yaw_quat(np.radians(4.0))])
        report = report_from_poses(pred_xyz, pred_q, batch, np.zeros(2, dtype=int))
        flags = [(t < 2.0 and r < 5.0) for t, r, _, _ in report.per_sample]
        assert flags == [True, False]
        assert report.accuracy_2m_5deg == 0.5

    def test_exact_threshold_not_counted(self):
        amap = AnchorMap(anchors=np.zeros((1, 2)), frame_interval=1)
        batch = batch_from_poses([make_pose(0, 0)], amap)
        report = report_from_poses(np.array([[2.0, 0.0, 0.0]]),
                                   np.array([[1.0, 0, 0, 0.0]]),
                                   batch, np.zeros(1, dtype=int))
        assert report.accuracy_2m_5deg == 0.0

    def test_empty_rejected(self):
        amap = AnchorMap(anchors=np.zeros((1, 2)), frame_interval=1)
        batch = batch_from_poses([], amap)
        with pytest.raises(InvalidInputError):
            report_from_poses(np.zeros((0, 3)), np.zeros((0, 4)), batch, np.zeros(0))


class TestEvaluateNetwork:
    def test_evaluate_runs_and_is_deterministic(self, tiny_samples):
        train, test = tiny_samples
        scene = data.from_simworld(train, test, k=10)
        # tanh trunk: an untrained relu net can zero out for unlucky inputs
        spec = NetworkSpec(input_dim=scene.train.features.shape[1], hidden_layers=(8,),
                           num_anchors=scene.num_anchors, activation="tanh", seed=2)
        params = model.init(spec)
        a = evaluate(spec, params, scene.test, scene.anchor_map)
        b = evaluate(spec, params, scene.test, scene.anchor_map)
        assert a.per_sample == b.per_sample
        assert np.isfinite(a.median_translation_m)


class TestDiscovery:
    def make_world_batch(self):
        # anchors at x = 0, 1, 2, 3; landmarks on anchors 1 and 2
        amap = AnchorMap(anchors=np.array([[0.0, 0], [1.0, 0], [2.0, 0], [3.0, 0]]),
                         frame_interval=1)
        landmarks = (("L1", (1.0, 0.0)), ("L2", (2.0, 0.0)))
        poses = [make_pose(1.1, 0.0), make_pose(1.9, 0.0), make_pose(0.1, 0.0)]
        visible = [frozenset({"L2"}), frozenset({"L1", "L2"}), frozenset({"L1"})]
        batch = batch_from_poses(poses, amap, visible=visible)
        return amap, landmarks, batch

    def test_co_located_mapping(self):
        amap, landmarks, _ = self.make_world_batch()
        assert co_located_anchors(amap, landmarks) == {1: "L1", 2: "L2"}

    def test_oracle_predictor_scores_one(self):
        amap, landmarks, batch = self.make_world_batch()
        # sample 0 qualifies (nearest anchor 1, L1 not visible); an oracle that
        # picks an anchor with a visible landmark must score 1.0
        spec = NetworkSpec(input_dim=3, hidden_layers=(2,), num_anchors=4, seed=0)
        params = model.init(spec)
        views = model._Views(spec, params)
        views.W["logits"][:] = 0.0
        views.b["logits"][:] = np.array([0.0, 0.0, 50.0, 0.0])  # always picks anchor 2
        s, q = discovery_stats(spec, params, batch, amap, landmarks)
        assert (s, q) == (1, 1)
        assert discovery_rate(spec, params, batch, amap, landmarks) == 1.0

    def test_nearest_baseline_scores_zero(self):
        amap, landmarks, batch = self.make_world_batch()
        spec = NetworkSpec(input_dim=3, hidden_layers=(2,), num_anchors=4, seed=0)
        params = model.init(spec)
        views = model._Views(spec, params)
        views.W["logits"][:] = 0.0
        views.b["logits"][:] = np.array([0.0, 50.0, 0.0, 0.0])  # always picks anchor 1
        s, q = discovery_stats(spec, params, batch, amap, landmarks)
        assert (s, q) == (0, 1)

    def test_no_qualifying_raises(self):
        amap, landmarks, batch = self.make_world_batch()
        all_visible = [frozenset({"L1", "L2"})] * 3
        batch2 = data.SampleBatch(frame_ids=batch.frame_ids, features=batch.features,
                                  positions=batch.positions,
                                  orientations=batch.orientations,
                                  offsets=batch.offsets, nearest=batch.nearest,
                                  visible_sets=all_visible)
        spec = NetworkSpec(input_dim=3, hidden_layers=(2,), num_anchors=4, seed=0)
        with pytest.raises(UndefinedRateError):
            discovery_rate(spec, model.init(spec), batch2, amap, landmarks)

    def test_requires_visibility_ground_truth(self):
        amap, landmarks, batch = self.make_world_batch()
        batch.visible_sets = None
        spec = NetworkSpec(input_dim=3, hidden_layers=(2,), num_anchors=4, seed=0)
        with pytest.raises(InvalidInputError):
            discovery_stats(spec, model.init(spec), batch, amap, landmarks)


@pytest.fixture(scope="module")
def raw(tiny_samples):
    train, test = tiny_samples
    train_poses = [(f"t{i}", s.pose) for i, s in enumerate(train)]
    test_poses = [(f"e{i}", s.pose) for i, s in enumerate(test)]
    tf = np.array([s.feature for s in train])
    ef = np.array([s.feature for s in test])
    return train_poses, tf, test_poses, ef


class TestSweep:
    def test_single_k_matches_standalone_run(self, raw, tiny_samples):
        train_poses, tf, test_poses, ef = raw
        tpl = NetworkSpec(input_dim=tf.shape[1], hidden_layers=(8,), num_anchors=1, seed=3)
        cfg = TrainConfig(epochs=2, shuffle_seed=5, weights=LossWeights())
        rows = sweep_anchor_interval(train_poses, tf, test_poses, ef, [10], tpl, cfg)

        train_s, test_s = tiny_samples
        scene = data.from_simworld(train_s, test_s, k=10)
        spec = NetworkSpec(input_dim=tf.shape[1], hidden_layers=(8,),
                           num_anchors=scene.num_anchors, seed=3)
        report = optim.train(scene.train, spec, cfg)
        ev = evaluate(spec, report.params, scene.test, scene.anchor_map)
        assert rows[0].median_m == ev.median_translation_m
        assert rows[0].accuracy == ev.accuracy_2m_5deg
        assert rows[0].num_anchors == scene.num_anchors

    def test_deterministic_csv_bytes(self, raw):
        train_poses, tf, test_poses, ef = raw
        tpl = NetworkSpec(input_dim=tf.shape[1], hidden_layers=(8,), num_anchors=1, seed=3)
        cfg = TrainConfig(epochs=2, shuffle_seed=5, weights=LossWeights())
        a = sweep_csv_text(sweep_anchor_interval(train_poses, tf, test_poses, ef,
                                                 [5, 10], tpl, cfg))
        b = sweep_csv_text(sweep_anchor_interval(train_poses, tf, test_poses, ef,
                                                 [5, 10], tpl, cfg))
        assert a == b

    def test_empty_k_list_rejected(self, raw):
        train_poses, tf, test_poses, ef = raw
        tpl = NetworkSpec(input_dim=tf.shape[1], hidden_layers=(8,), num_anchors=1, seed=3)
        with pytest.raises(InvalidInputError):
            sweep_anchor_interval(train_poses, tf, test_poses, ef, [],
                                  tpl, TrainConfig(epochs=1))

    def test_artifacts_written(self, raw, tmp_path):
        train_poses, tf, test_poses, ef = raw
        tpl = NetworkSpec(input_dim=tf.shape[1], hidden_layers=(8,), num_anchors=1, seed=3)
        cfg = TrainConfig(epochs=1, shuffle_seed=5)
        rows = sweep_anchor_interval(train_poses, tf, test_poses, ef, [8, 16], tpl, cfg)
        evaluation.write_sweep_csv(tmp_path / "sweep.csv", rows)
        evaluation.write_sweep_svg(tmp_path / "sweep.svg", rows)
        text = (tmp_path / "sweep.csv").read_text()
        assert text.splitlines()[0] == "k,N,median_m,median_deg,accuracy"
        assert len(text.splitlines()) == 3
        assert (tmp_path / "sweep.svg").read_text().startswith("<svg")
