import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nvsurv.boxes import BoundingBox, iou
from nvsurv.frames import Frame, Representation
from nvsurv.proposals import (
    Proposal,
    ProposalSource,
    ccl_label,
    ccl_rp,
    component_boxes,
    downsample_or,
    hist_rp,
    proposals_from_csv,
    proposals_to_csv,
)

from oracles import downsample_loop, flood_fill_labels, same_partition


def where_frame(img, index=0):
    return Frame(index, 0, np.asarray(img, np.uint8)[..., None], Representation.ONE_BIT_1CH)


def blank():
    return np.zeros((180, 240), np.uint8)


def test_downsample_all_zero():
    out = downsample_or(where_frame(blank()))
    assert out.shape == (60, 40)
    assert out.sum() == 0


@pytest.mark.parametrize("x, y", [(0, 0), (5, 2), (3, 1)])
def test_downsample_first_block(x, y):
    img = blank()
    img[y, x] = 1
    out = downsample_or(where_frame(img))
    assert out[0, 0] == 1 and out.sum() == 1


def test_downsample_full_frame():
    out = downsample_or(where_frame(np.ones((180, 240))))
    assert out.shape == (60, 40)
    assert out.sum() == 2400


def test_downsample_matches_loop(rng):
    for density in (0.001, 0.02, 0.3):
        img = (rng.random((180, 240)) < density).astype(np.uint8)
        assert np.array_equal(downsample_or(img), downsample_loop(img))


def test_downsample_rejects_partial_blocks():
    with pytest.raises(ValueError, match="divisible"):
        downsample_or(np.zeros((10, 10)))


def test_diagonal_pair_connectivity():
    img = np.array([[1, 0], [0, 1]])
    assert ccl_label(img, 8).component_count == 1
    assert ccl_label(img, 4).component_count == 2


def test_empty_image_has_no_components():
    lm = ccl_label(np.zeros((60, 40)))
    assert lm.component_count == 0
    assert lm.labels.max() == 0


def test_labels_are_dense_raster_order():
    img = np.array([
        [0, 1, 0, 0, 1],
        [0, 0, 0, 0, 1],
        [1, 1, 0, 0, 0],
    ])
    lm = ccl_label(img, 4)
    assert lm.component_count == 3
    assert lm.labels.tolist() == [[0, 1, 0, 0, 2], [0, 0, 0, 0, 2], [3, 3, 0, 0, 0]]


def test_u_shape_merges_late():
    img = np.array([
        [1, 0, 1],
        [1, 0, 1],
        [1, 1, 1],
    ])
    for conn in (4, 8):
        lm = ccl_label(img, conn)
        assert lm.component_count == 1
        assert set(lm.labels[img == 1].tolist()) == {1}


def test_invalid_connectivity():
    with pytest.raises(ValueError):
        ccl_label(np.zeros((3, 3)), 6)


def test_matches_flood_fill_on_random_images(rng):
    for _ in range(100):
        img = (rng.random((60, 40)) < rng.uniform(0.05, 0.5)).astype(np.uint8)
        for conn in (4, 8):
            ref, n = flood_fill_labels(img, conn)
            lm = ccl_label(img, conn)
            assert lm.component_count == n
            # both label in raster order of first encounter, so the maps coincide
            assert np.array_equal(lm.labels, ref)


@settings(max_examples=150, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 1)),
       st.sampled_from([4, 8]))
def test_ccl_partition_property(img, conn):
    ref, n = flood_fill_labels(img, conn)
    lm = ccl_label(img, conn)
    assert lm.component_count == n
    assert same_partition(lm.labels, ref)
    assert sorted(set(lm.labels[lm.labels > 0].tolist())) == list(range(1, n + 1))


def test_component_boxes():
    img = np.zeros((10, 10), np.uint8)
    img[2:4, 3:8] = 1
    img[7, 0] = 1
    (b1, a1), (b2, a2) = component_boxes(ccl_label(img))
    assert (b1, a1) == (BoundingBox(3, 2, 5, 2), 10)
    assert (b2, a2) == (BoundingBox(0, 7, 1, 1), 1)


def test_ccl_rp_single_car_blob():
    img = blank()
    img[90:109, 60:104] = 1
    (p,) = ccl_rp(where_frame(img))
    truth = BoundingBox(60, 90, 44, 19)
    assert iou(p.box, truth) >= 0.5
    assert p.box == BoundingBox(60, 90, 48, 21)
    assert p.source is ProposalSource.CCL_RP


def test_ccl_rp_refine_is_tight():
    img = blank()
    img[90:109, 60:104] = 1
    (p,) = ccl_rp(where_frame(img), refine=True)
    assert p.box == BoundingBox(60, 90, 44, 19)


def test_ccl_rp_two_separated_blobs():
    img = blank()
    img[0:9, 0:12] = 1
    img[18:30, 30:60] = 1  # 18 px right and 9 px below the first blob
    props = ccl_rp(where_frame(img))
    assert len(props) == 2


def test_ccl_rp_empty_and_min_area():
    assert ccl_rp(where_frame(blank())) == []
    img = blank()
    img[100, 100] = 1  # one downsized pixel
    assert ccl_rp(where_frame(img)) == []
    assert len(ccl_rp(where_frame(img), min_area=1)) == 1


def test_ccl_rp_back_mapping_contains_component(rng):
    for _ in range(20):
        img = (rng.random((180, 240)) < 0.01).astype(np.uint8)
        props = ccl_rp(where_frame(img), min_area=1)
        small = ccl_label(downsample_or(img))
        assert len(props) <= small.component_count
        covered = np.zeros_like(img, bool)
        for p in props:
            covered[p.box.y0:p.box.y1, p.box.x0:p.box.x1] = True
        assert covered[img == 1].all()


def test_ccl_rp_frame_index_propagates():
    img = blank()
    img[10:20, 10:20] = 1
    (p,) = ccl_rp(where_frame(img, index=7))
    assert p.frame_index == 7


def test_hist_single_blob_is_tight():
    img = blank()
    img[40:60, 100:130] = 1
    (p,) = hist_rp(where_frame(img))
    assert p.box == BoundingBox(100, 40, 30, 20)
    assert p.source is ProposalSource.HIST_RP


def test_hist_two_blobs_share_rows():
    img = blank()
    img[50:90, 20:120] = 1   # large object, 100x40
    img[60:75, 170:190] = 1  # small object, 20x15, inside the large one's rows
    props = hist_rp(where_frame(img))
    assert len(props) == 2
    small = next(p for p in props if p.box.x0 == 170)
    # the small object's box inherits the large object's vertical extent
    assert (small.box.y0, small.box.h) == (50, 40)
    assert iou(small.box, BoundingBox(170, 60, 20, 15)) < 0.5
    # CCL keeps them apart with their own extents
    ccl = ccl_rp(where_frame(img), refine=True)
    assert sorted(p.box for p in ccl) == [BoundingBox(20, 50, 100, 40), BoundingBox(170, 60, 20, 15)]


def test_hist_cross_product_can_exceed_objects():
    img = blank()
    img[10:20, 10:20] = 1
    img[100:110, 100:110] = 1
    img[10:20, 100:110] = 1  # three blobs, 2x2 grid of runs, one empty cell dropped
    assert len(hist_rp(where_frame(img))) == 3
    img[100:110, 10:20] = 1
    assert len(hist_rp(where_frame(img))) == 4


def test_hist_empty():
    assert hist_rp(where_frame(blank())) == []


def test_hist_min_run_filters_thin_runs():
    img = blank()
    img[10:12, 10:40] = 1  # two rows tall
    assert hist_rp(where_frame(img), threshold=1, min_run=3) == []
    assert len(hist_rp(where_frame(img), threshold=1, min_run=2)) == 1


def test_proposal_csv_round_trip():
    props = [Proposal(0, BoundingBox(1, 2, 3, 4), ProposalSource.CCL_RP),
             Proposal(5, BoundingBox(10, 20, 30, 40), ProposalSource.HIST_RP)]
    text = proposals_to_csv(props)
    assert text.splitlines() == ["frame,x0,y0,w,h,source", "0,1,2,3,4,ccl", "5,10,20,30,40,hist"]
    assert proposals_from_csv(text) == props
    with pytest.raises(ValueError):
        proposals_from_csv("bad\n")
