import numpy as np
import pytest

import oracles
from voxsplat import (GridFormatError, GridHierarchy, GridMeta, LabeledPointCloud,
                      SparseVoxelGrid, coarsen, deserialize, raymarch_first_hit,
                      serialize, voxelize)
from voxsplat.grid import SEMANTIC_CHANNEL


def make_meta(size=0.1, origin=(0, 0, 0)):
    return GridMeta(np.asarray(origin, dtype=float), size)


class TestVoxelize:
    def test_single_point_floor_division(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 0.05]])),
                        make_meta())
        assert grid.coords.tolist() == [[0, 0, 0]]

    def test_half_open_convention_negative(self):
        grid = voxelize(LabeledPointCloud(np.array([[-0.01, 0.0, 0.0]])),
                        make_meta())
        assert grid.coords.tolist() == [[-1, 0, 0]]

    def test_point_on_voxel_boundary_goes_up(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.1, 0.0, 0.0]])),
                        make_meta())
        assert grid.coords.tolist() == [[1, 0, 0]]

    def test_empty_cloud_gives_empty_grid(self):
        grid = voxelize(LabeledPointCloud.empty(), make_meta())
        assert len(grid) == 0

    def test_matches_bruteforce_bucketing(self):
        rng = np.random.default_rng(7)
        pts = rng.uniform(0, 1, (1000, 3))
        grid = voxelize(LabeledPointCloud(pts), make_meta(0.5))
        expected = oracles.bucket_voxelize(pts, np.zeros(3), 0.5)
        assert set(map(tuple, grid.coords.tolist())) == expected

    def test_majority_label_with_smallest_id_tiebreak(self):
        pts = np.array([[0.01, 0.01, 0.01], [0.02, 0.02, 0.02],
                        [0.03, 0.03, 0.03], [0.04, 0.04, 0.04]])
        grid = voxelize(LabeledPointCloud(pts, np.array([5, 2, 5, 2])),
                        make_meta())
        logits = grid.query((0, 0, 0))[SEMANTIC_CHANNEL]
        assert logits.argmax() == 2  # tie between 2 and 5 goes to 2

    def test_majority_matches_oracle(self):
        rng = np.random.default_rng(11)
        pts = rng.uniform(-1, 1, (400, 3))
        labels = rng.integers(0, 6, 400)
        grid = voxelize(LabeledPointCloud(pts, labels), make_meta(0.4))
        expected = oracles.majority_labels(pts, labels, np.zeros(3), 0.4)
        for coord, want in expected.items():
            got = grid.query(coord)[SEMANTIC_CHANNEL]
            assert got.argmax() == want


class TestCoarsen:
    def test_floor_division_example(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.75, 0.25, 0.95]])),
                        make_meta())
        assert grid.coords.tolist() == [[7, 2, 9]]
        parent = coarsen(grid, 4)
        assert parent.coords.tolist() == [[1, 0, 2]]
        assert parent.meta.voxel_size == pytest.approx(0.4)

    def test_factor_one_is_identity(self):
        rng = np.random.default_rng(2)
        grid = voxelize(LabeledPointCloud(rng.uniform(-1, 1, (100, 3)),
                                          rng.integers(0, 3, 100)), make_meta())
        assert coarsen(grid, 1).equals(grid)

    def test_containment_exhaustive(self):
        rng = np.random.default_rng(5)
        grid = voxelize(LabeledPointCloud(rng.uniform(-2, 2, (500, 3))),
                        make_meta(0.1))
        parent = coarsen(grid, 4)
        for c in grid.coords:
            assert tuple(c // 4) in parent
        GridHierarchy(parent, grid)  # validates the same invariant

    def test_semantic_majority_over_children(self):
        pts = np.array([[0.05, 0.05, 0.05], [0.15, 0.05, 0.05],
                        [0.25, 0.05, 0.05]])
        grid = voxelize(LabeledPointCloud(pts, np.array([1, 1, 0])), make_meta())
        parent = coarsen(grid, 4)
        assert parent.query((0, 0, 0))[SEMANTIC_CHANNEL].argmax() == 1

    def test_invalid_factor_rejected(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0]])),
                        make_meta())
        with pytest.raises(ValueError):
            coarsen(grid, 0)


class TestQuery:
    def test_present_after_voxelize(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 0.05]])),
                        make_meta())
        assert grid.query((0, 0, 0)) is not None

    def test_absent_on_empty_grid(self):
        grid = voxelize(LabeledPointCloud.empty(), make_meta())
        assert grid.query((5, 5, 5)) is None

    def test_fuzz_against_shadow_map(self):
        rng = np.random.default_rng(13)
        coords = rng.integers(-20, 20, (200, 3))
        coords = np.unique(coords, axis=0)
        feats = rng.normal(0, 1, (len(coords), 5))
        grid = SparseVoxelGrid(make_meta(), coords, {"feature": feats})
        shadow = {tuple(c): f for c, f in zip(coords.tolist(), feats)}
        for key, want in shadow.items():
            got = grid.query(key)
            assert got is not None
            np.testing.assert_array_equal(got["feature"], want)
        for _ in range(50):
            probe = tuple(rng.integers(-25, 25, 3).tolist())
            assert (grid.query(probe) is not None) == (probe in shadow)


class TestRaymarch:
    def test_axis_ray_entry_distance(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 5.05]])),
                        make_meta())
        hit = raymarch_first_hit(grid, np.array([0.05, 0.05, 0.0]),
                                 np.array([0.0, 0.0, 1.0]))
        assert hit is not None
        coord, t = hit
        assert (coord.i, coord.j, coord.k) == (0, 0, 50)
        assert t == pytest.approx(5.0, abs=1e-12)

    def test_ray_pointing_away_misses(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 5.05]])),
                        make_meta())
        assert raymarch_first_hit(grid, np.array([0.05, 0.05, 0.0]),
                                  np.array([0.0, 0.0, -1.0])) is None

    def test_non_unit_direction_rejected(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0]])),
                        make_meta())
        with pytest.raises(ValueError):
            raymarch_first_hit(grid, np.zeros(3), np.array([0.0, 0.0, 2.0]))

    def test_matches_bruteforce_on_random_rays(self):
        rng = np.random.default_rng(21)
        grid = voxelize(LabeledPointCloud(rng.uniform(-2, 2, (80, 3))),
                        make_meta(0.25))
        for _ in range(100):
            origin = rng.uniform(-4, 4, 3)
            d = rng.normal(0, 1, 3)
            d /= np.linalg.norm(d)
            got = raymarch_first_hit(grid, origin, d)
            want = oracles.first_hit(grid, origin, d)
            if want is None:
                assert got is None
            else:
                assert got is not None
                assert (got[0].i, got[0].j, got[0].k) == want[0]
                assert got[1] == pytest.approx(want[1], abs=1e-9)

    def test_origin_inside_voxel_enters_at_zero(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 0.05]])),
                        make_meta())
        hit = raymarch_first_hit(grid, np.array([0.05, 0.05, 0.05]),
                                 np.array([1.0, 0.0, 0.0]))
        assert hit is not None and hit[1] == 0.0


class TestSerialization:
    def test_empty_grid_roundtrip(self):
        grid = voxelize(LabeledPointCloud.empty(), make_meta())
        assert deserialize(serialize(grid)).equals(grid)

    def test_fuzzed_roundtrip_bit_exact(self):
        rng = np.random.default_rng(31)
        for _ in range(5):
            pts = rng.uniform(-8, 8, (rng.integers(1, 400), 3))
            labels = rng.integers(0, 9, len(pts))
            grid = voxelize(LabeledPointCloud(pts, labels),
                            make_meta(0.3, origin=rng.uniform(-1, 1, 3)))
            grid = grid.with_channel("feature",
                                     rng.normal(0, 10, (len(grid), 6)))
            again = deserialize(serialize(grid))
            assert again.equals(grid)

    def test_corrupted_magic_raises_parse_error(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0]])),
                        make_meta())
        blob = bytearray(serialize(grid))
        blob[:4] = b"NOPE"
        with pytest.raises(GridFormatError):
            deserialize(bytes(blob))

    def test_truncated_payload_names_offset(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0],
                                                    [1.0, 1.0, 1.0]])),
                        make_meta())
        blob = serialize(grid)
        with pytest.raises(GridFormatError) as err:
            deserialize(blob[:-4])
        assert "offset" in str(err.value)

    def test_bad_channel_width_rejected(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0]])),
                        make_meta())
        grid = grid.with_channel("feature", np.ones((1, 2)))
        blob = bytearray(serialize(grid))
        # Channel table begins after magic/version/voxel_size/origin (40
        # bytes) + count field; "feature" goes first in sorted order, width
        # sits right after the 2-byte length and 7-byte name.
        width_offset = 4 + 4 + 8 + 24 + 4 + 2 + len(b"feature")
        blob[width_offset:width_offset + 4] = (0).to_bytes(4, "little")
        with pytest.raises(GridFormatError):
            deserialize(bytes(blob))

    def test_trailing_garbage_rejected(self):
        grid = voxelize(LabeledPointCloud(np.array([[0.0, 0.0, 0.0]])),
                        make_meta())
        with pytest.raises(GridFormatError):
            deserialize(serialize(grid) + b"extra")


class TestGridProperties:
    def test_every_point_lands_in_an_occupied_voxel(self):
        rng = np.random.default_rng(41)
        pts = rng.uniform(-3, 3, (2000, 3))
        meta = make_meta(0.2, origin=(-0.05, 0.1, 0.0))
        grid = voxelize(LabeledPointCloud(pts), meta)
        idx = np.floor((pts - meta.origin) / meta.voxel_size).astype(int)
        for c in np.unique(idx, axis=0):
            assert tuple(c) in grid

    def test_duplicate_coordinates_rejected(self):
        with pytest.raises(ValueError):
            SparseVoxelGrid(make_meta(), np.array([[0, 0, 0], [0, 0, 0]]))

    def test_hierarchy_violation_detected(self):
        fine = voxelize(LabeledPointCloud(np.array([[0.05, 0.05, 0.05]])),
                        make_meta(0.1))
        wrong = SparseVoxelGrid(make_meta(0.4), np.array([[5, 5, 5]]))
        with pytest.raises(ValueError):
            GridHierarchy(wrong, fine)
