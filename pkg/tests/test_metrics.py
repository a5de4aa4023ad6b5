import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import loop_metrics
from atlseg.metrics import ConfusionCounts, MetricsReport, accumulate, compute_metrics, format_table


def test_worked_example():
    pred = np.array([1, 1, 1, 1, 0, 0, 0, 0, 0, 0])
    truth = np.array([1, 1, 1, 0, 1, 0, 0, 0, 0, 0])
    counts = accumulate(pred, truth)
    assert counts == ConfusionCounts(tp=3, fp=1, tn=5, fn=1)
    rep = compute_metrics(counts)
    assert rep.precision == pytest.approx(0.75, abs=1e-12)
    assert rep.recall == pytest.approx(0.75, abs=1e-12)
    assert rep.f1 == pytest.approx(0.75, abs=1e-12)
    assert rep.oa == pytest.approx(0.8, abs=1e-12)
    assert rep.landslide_iou == pytest.approx(0.6, abs=1e-12)
    assert rep.background_iou == pytest.approx(5 / 7, abs=1e-12)
    assert rep.miou == pytest.approx(0.657143, abs=1e-6)


def test_matches_loop_oracle_on_random_pairs():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        shape = tuple(rng.integers(1, 9, size=2))
        p_fg = rng.uniform()
        pred = (rng.uniform(size=shape) < p_fg).astype(np.uint8)
        truth = (rng.uniform(size=shape) < rng.uniform()).astype(np.uint8)
        ours = compute_metrics(accumulate(pred, truth)).as_dict()
        ref = loop_metrics(pred, truth)
        for k, v in ref.items():
            assert abs(ours[k] - v) <= 1e-12, k


def test_zero_denominators_report_zero():
    rep = compute_metrics(ConfusionCounts(tn=10))
    assert rep.precision == rep.recall == rep.f1 == rep.landslide_iou == 0.0
    assert rep.oa == 1.0 and rep.background_iou == 1.0 and rep.miou == 0.5
    with pytest.raises(ValueError):
        compute_metrics(ConfusionCounts())


def test_perfect_prediction():
    truth = np.array([[0, 1], [1, 1]])
    rep = compute_metrics(accumulate(truth, truth))
    assert rep.miou == rep.oa == rep.f1 == 1.0


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        accumulate(np.zeros((2, 2)), np.zeros((2, 3)))
    with pytest.raises(ValueError):
        ConfusionCounts(tp=-1)


masks = st.integers(0, 2**30).map(lambda s: np.random.default_rng(s).integers(0, 2, size=(5, 7)))


@settings(max_examples=100, deadline=None)
@given(masks, masks)
def test_label_swap_symmetry(pred, truth):
    a = compute_metrics(accumulate(pred, truth))
    b = compute_metrics(accumulate(1 - pred, 1 - truth))
    assert a.miou == pytest.approx(b.miou, abs=1e-15)
    assert a.oa == b.oa
    assert a.landslide_iou == b.background_iou


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(masks, masks), min_size=1, max_size=5))
def test_single_pass_accumulation_matches_concatenation(pairs):
    counts = None
    for p, t in pairs:
        counts = accumulate(p, t, counts)
    whole = accumulate(np.concatenate([p for p, _ in pairs]), np.concatenate([t for _, t in pairs]))
    assert counts == whole


@settings(max_examples=100, deadline=None)
@given(masks, masks)
def test_bounds(pred, truth):
    for v in compute_metrics(accumulate(pred, truth)).as_dict().values():
        assert 0.0 <= v <= 1.0


def test_csv_order_and_table():
    rep = compute_metrics(ConfusionCounts(3, 1, 5, 1))
    assert MetricsReport.CSV_HEADER == ("P", "REC", "F1", "OA", "MIoU", "Landslide-IoU")
    assert rep.csv_values()[4] == rep.miou and rep.csv_values()[5] == rep.landslide_iou
    table = format_table([("TransLandSeg", rep), ("TransLandSeg-7", rep)])
    lines = table.splitlines()
    assert len(lines) == 3 and "MIoU(%)" in lines[0] and "65.71" in lines[1]
    assert len({len(line) for line in lines}) == 1
