import math

import numpy as np
import pytest

from advbench3d import metrics
from advbench3d.metrics import EvalBox, TPErrors

from .oracles import naive_ap, naive_nds, naive_tp, random_instance


def _box(center, label="Car", sid=0, score=1.0, **kw):
    return EvalBox(sid, label, tuple(center), score=score, **kw)


class TestAP:
    def test_perfect(self):
        gts = [_box((i * 5.0, 0, 0)) for i in range(4)]
        for th in metrics.DIST_THRESHOLDS:
            assert metrics.average_precision(list(gts), gts, "Car", th) == 1.0

    def test_no_detections(self):
        assert metrics.average_precision([], [_box((0, 0, 0))], "Car", 2.0) == 0.0

    def test_distance_threshold(self):
        gts, dets = [_box((0, 0, 0))], [_box((3, 0, 0))]
        assert metrics.average_precision(dets, gts, "Car", 2.0) == 0.0
        assert metrics.average_precision(dets, gts, "Car", 4.0) == 1.0

    def test_threshold_is_strict(self):
        gts, dets = [_box((0, 0, 0))], [_box((2, 0, 0))]
        assert metrics.average_precision(dets, gts, "Car", 2.0) == 0.0

    def test_other_sample_never_matches(self):
        assert metrics.average_precision([_box((0, 0, 0), sid=1)], [_box((0, 0, 0))], "Car", 4.0) == 0.0

    def test_absent_class_skipped(self):
        m, per = metrics.mean_ap([_box((0, 0, 0))], [_box((0, 0, 0))], ("Car", "Barrier"))
        assert m == 1.0 and list(per) == ["Car"]

    def test_against_oracle(self, rng):
        for _ in range(100):
            dets, gts, labels = random_instance(rng)
            for lab in labels:
                for th in metrics.DIST_THRESHOLDS:
                    got = metrics.average_precision(dets, gts, lab, th)
                    if got is None:
                        continue
                    assert got == pytest.approx(naive_ap(dets, gts, lab, th), abs=1e-9)


class TestTP:
    def test_identical(self):
        g = [_box((0, 0, 0), size=(1, 2, 3), yaw=0.3, velocity=(1, 1))]
        tp = metrics.tp_errors(g, g)
        assert tp.as_dict() == {"mATE": 0.0, "mASE": 0.0, "mAOE": 0.0, "mAVE": 0.0, "mAAE": None}

    def test_scale_error(self):
        tp = metrics.tp_errors([_box((0, 0, 0), size=(2, 4, 1))], [_box((0, 0, 0), size=(1, 4, 1))])
        assert tp.mASE == pytest.approx(0.5)

    def test_orientation_wraps(self):
        tp = metrics.tp_errors([_box((0, 0, 0), yaw=math.pi - 0.1)], [_box((0, 0, 0), yaw=-math.pi + 0.1)])
        assert tp.mAOE == pytest.approx(0.2)

    def test_unmatched_class_scores_one(self):
        tp = metrics.tp_errors([], [_box((0, 0, 0))])
        assert (tp.mATE, tp.mASE, tp.mAOE, tp.mAVE) == (1.0, 1.0, 1.0, 1.0)

    def test_attribute_error(self):
        tp = metrics.tp_errors([_box((0, 0, 0), attribute="a")], [_box((0, 0, 0), attribute="b")])
        assert tp.mAAE == 1.0

    def test_against_oracle(self, rng):
        for k in range(100):
            dets, gts, labels = random_instance(rng, attributes=bool(k % 2))
            got = metrics.tp_errors(dets, gts, classes=labels)
            ref = naive_tp(dets, gts, labels)
            for name, r in zip(metrics.TP_NAMES, ref):
                v = getattr(got, name)
                assert (v is None) == (r is None)
                if r is not None:
                    assert v == pytest.approx(r, abs=1e-9)


class TestNDS:
    def test_ceiling_and_floor(self):
        assert metrics.nds(1.0, TPErrors(0, 0, 0, 0, 0)) == 1.0
        assert metrics.nds(1.0, TPErrors(0, 0, 0, 0, None)) == 1.0
        assert metrics.nds(0.0, TPErrors(1, 2, 3, 1, 1)) == 0.0
        assert metrics.nds(0.0, TPErrors(1, 1, 1, 1, None)) == 0.0

    def test_hand_value(self):
        assert metrics.nds(0.3, TPErrors(1, 1, 1, 1, 1)) == pytest.approx(0.15)

    def test_against_oracle(self, rng):
        for _ in range(100):
            m = float(rng.uniform())
            errs = [float(v) for v in rng.uniform(0, 2, 5)]
            if rng.uniform() < 0.5:
                errs[4] = None
            assert metrics.nds(m, TPErrors(*errs)) == pytest.approx(naive_nds(m, errs), abs=1e-12)


class TestSummaries:
    def test_severity_average(self):
        assert metrics.severity_average({"pgd": {1: 0.4}}) == 0.4
        assert metrics.severity_average({"pgd": {1: 0.1, 5: 0.3}}) == pytest.approx(0.2)
        a = metrics.severity_average({"pgd": {1: 0.1, 5: 0.3}, "patch": {0.1: 0.7}})
        b = metrics.severity_average({"patch": {0.1: 0.7}, "pgd": {5: 0.3, 1: 0.1}})
        assert a == pytest.approx(b)

    def test_severity_average_excludes_blackbox(self):
        assert metrics.severity_average({"pgd": {1: 0.2}, "blackbox": {1: 0.9}}) == 0.2

    def test_ragged(self):
        with pytest.raises(ValueError, match="pgd@10"):
            metrics.severity_average({"pgd": {1: 0.1}}, expected={"pgd": [1, 10]})

    def test_relative_drop(self):
        assert metrics.relative_drop(0.3, 0.3) == 0.0
        assert metrics.relative_drop(0.3, 0.0) == 1.0
        assert metrics.relative_drop(0.2546, 0.0893) == pytest.approx(0.6493, abs=5e-4)
        with pytest.raises(ValueError):
            metrics.relative_drop(0.0, 0.1)

    def test_transfer_matrix(self):
        base = {"a": 0.5, "b": 0.4}
        adv = {("a", "a"): 0.5, ("a", "b"): 0.4, ("b", "a"): 0.25, ("b", "b"): 0.2}
        tm = metrics.transfer_matrix(adv, base, ["a", "b"], ["a", "b"])
        assert tm["values"][0] == [0.0, 0.0]
        assert tm["values"][1] == pytest.approx([0.5, 0.5])
        assert np.array(tm["values"]).shape == (2, 2)

    def test_bev_error(self):
        a = [np.ones((3, 4)), np.full((3, 4), 2.0)]
        assert metrics.bev_feature_error(a, a) == [0.0, 0.0]
        b = [np.ones((3, 4)) * 1.5, np.full((3, 4), 2.0)]
        e1 = metrics.bev_feature_error(b, a)
        e2 = metrics.bev_feature_error([x * 7 for x in b], [x * 7 for x in a])
        assert e1[0] == pytest.approx(0.5) and e1 == pytest.approx(e2)
        with pytest.raises(ValueError):
            metrics.bev_feature_error(a, a[:1])
