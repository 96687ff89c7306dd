import numpy as np
import pytest
from hypothesis import given, strategies as st

from lvseg.morphology import centroid_mm, connected_components, erode_slicewise, fill_holes, make_disk
from lvseg.volume import BinaryMask, Spacing

from conftest import random_mask
from oracles import dilate_bruteforce, erode_bruteforce, fill_bruteforce, flood_labels, same_partition

ISO = Spacing(1.0, 1.0, 1.0)


def test_disk_sizes():
    assert make_disk(0, ISO).offsets == ((0, 0),)
    assert len(make_disk(1.0, ISO).offsets) == 5
    d = make_disk(12.5, Spacing(2.0, 2.0, 5.0))
    assert d.radius_px == 6 and len(d.offsets) == 113


def test_disk_symmetry_and_centre():
    offs = set(make_disk(4.0, ISO).offsets)
    assert (0, 0) in offs
    assert all((-dx, dy) in offs and (dx, -dy) in offs and (dy, dx) in offs for dx, dy in offs)


def test_disk_rejects_bad_input():
    with pytest.raises(ValueError):
        make_disk(-1.0, ISO)
    with pytest.raises(ValueError):
        make_disk(3.0, Spacing(1.0, 1.05, 1.0))


def test_erode_identity_and_square():
    m = BinaryMask(np.random.default_rng(0).random((6, 6, 2)) < 0.5, ISO)
    assert erode_slicewise(m, make_disk(0, ISO)) == m
    bits = np.zeros((7, 7, 1), dtype=bool)
    bits[1:6, 1:6] = True
    out = erode_slicewise(BinaryMask(bits, ISO), make_disk(1, ISO)).bits
    expected = np.zeros_like(bits)
    expected[2:5, 2:5] = True
    assert np.array_equal(out, expected)


def test_erosion_border_is_background():
    out = erode_slicewise(BinaryMask(np.ones((5, 5, 1), dtype=bool), ISO), make_disk(1, ISO)).bits
    assert not out[0].any() and not out[-1].any() and out[1:4, 1:4].all()


@pytest.mark.parametrize("radius", [1, 2, 3])
def test_erosion_matches_oracle(radius):
    rng = np.random.default_rng(radius)
    se = make_disk(radius, ISO)
    for _ in range(30):
        m = random_mask(rng, p=0.8)
        assert np.array_equal(erode_slicewise(m, se).bits, erode_bruteforce(m.bits, se.offsets))


@given(st.integers(0, 2 ** 32 - 1), st.integers(0, 3))
def test_erosion_properties(seed, radius):
    rng = np.random.default_rng(seed)
    se = make_disk(radius, ISO)
    m1 = random_mask(rng, (12, 12, 2), p=0.7)
    m2 = m1.with_bits(m1.bits | (rng.random(m1.dims) < 0.5))
    e1, e2 = erode_slicewise(m1, se).bits, erode_slicewise(m2, se).bits
    assert not (e1 & ~m1.bits).any()          # anti-extensive
    assert not (e1 & ~e2).any()               # monotone
    # duality away from the borders
    dual = ~dilate_bruteforce(~m1.bits, se.offsets)
    r = radius
    inner = (slice(r, 12 - r), slice(r, 12 - r))
    assert np.array_equal(e1[inner], dual[inner])


def test_components_examples():
    empty = connected_components(BinaryMask(np.zeros((4, 4, 2)), ISO))
    assert empty.count == 0
    bits = np.zeros((6, 6, 1), dtype=bool)
    bits[0:2, 0:2] = True
    bits[4:6, 4:6] = True
    comps = connected_components(BinaryMask(bits, ISO))
    assert comps.count == 2 and sorted(comps.sizes.values()) == [4, 4]


def test_components_connectivity_differs():
    bits = np.zeros((3, 3, 3), dtype=bool)
    bits[0, 0, 0] = bits[1, 1, 1] = True
    assert connected_components(BinaryMask(bits, ISO), "twenty_six").count == 1
    assert connected_components(BinaryMask(bits, ISO), "six").count == 2
    with pytest.raises(ValueError):
        connected_components(BinaryMask(bits, ISO), "eight")


@pytest.mark.parametrize("connectivity", ["six", "twenty_six"])
def test_components_match_flood_fill(connectivity):
    rng = np.random.default_rng(7)
    for _ in range(30):
        m = random_mask(rng, p=0.35)
        comps = connected_components(m, connectivity)
        ref, n = flood_labels(m.bits, connectivity)
        assert comps.count == n
        assert same_partition(comps.labels, ref)


@given(st.integers(0, 2 ** 32 - 1))
def test_component_sizes_and_centroids(seed):
    rng = np.random.default_rng(seed)
    sp = Spacing(2.0, 2.0, 5.0)
    m = random_mask(rng, (10, 10, 3), p=0.3, spacing=sp)
    comps = connected_components(m)
    assert sum(comps.sizes.values()) == m.count()
    for lab, size in comps.sizes.items():
        assert size == (comps.labels == lab).sum() > 0
        assert comps.centroids_mm[lab] == pytest.approx(centroid_mm(m.with_bits(comps.mask_of(lab))))
    sizes = [comps.sizes[l] for l in comps.ranked()]
    assert sizes == sorted(sizes, reverse=True)


def test_fill_holes_donut_becomes_disk():
    x, y = np.mgrid[:15, :15] - 7
    r2 = x ** 2 + y ** 2
    donut = np.repeat(((r2 <= 36) & (r2 >= 9))[:, :, None], 3, axis=2)
    disk = np.repeat((r2 <= 36)[:, :, None], 3, axis=2)
    # each slice's hole is open towards the neighbouring slices only through the donut itself
    donut[:, :, 0] = disk[:, :, 0]
    donut[:, :, 2] = disk[:, :, 2]
    out = fill_holes(BinaryMask(donut, ISO)).bits
    assert np.array_equal(out, disk)


def test_fill_holes_fixed_points():
    bits = np.zeros((5, 5, 5), dtype=bool)
    bits[1:4, 1:4, 1:4] = True
    m = BinaryMask(bits, ISO)
    assert fill_holes(m) == m
    empty = BinaryMask(np.zeros((4, 4, 4)), ISO)
    assert fill_holes(empty) == empty


def test_fill_holes_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(30):
        m = random_mask(rng, p=0.6)
        assert np.array_equal(fill_holes(m).bits, fill_bruteforce(m.bits))


@given(st.integers(0, 2 ** 32 - 1))
def test_fill_holes_extensive_idempotent(seed):
    m = random_mask(np.random.default_rng(seed), (8, 8, 4), p=0.6)
    f = fill_holes(m)
    assert not (m.bits & ~f.bits).any()
    assert fill_holes(f) == f


def test_centroid_examples():
    sp = Spacing(2.0, 3.0, 5.0)
    bits = np.zeros((4, 4, 4), dtype=bool)
    bits[1, 2, 3] = True
    assert centroid_mm(BinaryMask(bits, sp)) == pytest.approx((3.0, 7.5, 17.5))
    bits = np.zeros((6, 4, 2), dtype=bool)
    bits[1, 1, 0] = bits[4, 1, 0] = True   # symmetric about x = 3 voxels
    assert centroid_mm(BinaryMask(bits, ISO))[0] == pytest.approx(3.0)
    with pytest.raises(ValueError):
        centroid_mm(BinaryMask(np.zeros((2, 2, 2)), ISO))


@given(st.integers(0, 2 ** 32 - 1))
def test_centroid_direct_sum(seed):
    rng = np.random.default_rng(seed)
    m = random_mask(rng, (7, 5, 3), p=0.4, spacing=Spacing(1.5, 1.5, 4.0))
    if m.count() == 0:
        return
    pts = [((i + 0.5) * 1.5, (j + 0.5) * 1.5, (k + 0.5) * 4.0) for i, j, k in zip(*np.nonzero(m.bits))]
    assert centroid_mm(m) == pytest.approx(tuple(np.mean(pts, axis=0)))
