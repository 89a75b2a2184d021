"""
IoU, mean IoU and FB-IoU scorers
"""
import numpy as np
import pytest

from protoconv.core.errors import ShapeMismatch
from protoconv.core.tensor import Tensor
from protoconv.eval.scorers import FBIoUScorer, MeanIoUScorer, create_default_scorers, iou

HALF = np.array([[1.0, 1.0], [0.0, 0.0]])
CORNER = np.array([[1.0, 0.0], [0.0, 0.0]])


@pytest.mark.unit
class TestIoU:
    def test_identical(self):
        assert iou(HALF, HALF) == 1.0

    def test_partial(self):
        assert iou(HALF, CORNER) == pytest.approx(0.5)

    def test_disjoint(self):
        assert iou(CORNER, np.rot90(CORNER, 2)) == 0.0

    def test_both_empty(self):
        assert iou(np.zeros((3, 3)), np.zeros((3, 3))) == 1.0

    def test_accepts_tensors_and_soft_values(self):
        assert iou(Tensor(HALF * 0.9), Tensor(HALF)) == 1.0
        assert iou(HALF * 0.4, HALF) == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            iou(HALF, np.zeros((3, 3)))


@pytest.mark.unit
def test_mean_iou_sums_per_class_before_dividing():
    scorer = MeanIoUScorer()
    scorer.feed(HALF, CORNER, class_id=3)   # 1 / 2
    scorer.feed(CORNER, CORNER, class_id=3)  # 1 / 1
    scorer.feed(HALF, HALF, class_id=7)
    assert scorer.per_class() == {3: pytest.approx(2 / 3), 7: 1.0}
    assert scorer.getval() == pytest.approx((2 / 3 + 1.0) / 2)


@pytest.mark.unit
def test_mean_iou_empty_and_reset():
    scorer = MeanIoUScorer()
    assert scorer.getval() == 0.0
    scorer.feed(HALF, HALF, 0)
    scorer.reset()
    assert scorer.per_class() == {}


@pytest.mark.unit
def test_fb_iou():
    scorer = FBIoUScorer()
    scorer.feed(HALF, CORNER, class_id=0)
    assert scorer.iou_fg == pytest.approx(0.5)
    assert scorer.iou_bg == pytest.approx(2 / 3)
    assert scorer.getval() == pytest.approx((0.5 + 2 / 3) / 2)


@pytest.mark.unit
def test_fb_iou_all_background_prediction():
    scorer = FBIoUScorer()
    scorer.feed(np.zeros((2, 2)), CORNER, class_id=0)
    assert scorer.iou_fg == 0.0
    assert scorer.iou_bg == pytest.approx(0.75)


@pytest.mark.unit
def test_default_scorers():
    assert [s.name for s in create_default_scorers()] == ["miou", "fb_iou"]
