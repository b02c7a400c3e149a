"""Occupancy relations against two independent radius-search oracles."""

import math

import numpy as np
import pytest
from scipy.spatial import cKDTree

from mpswarm.occupancy import (
    GridIndex,
    SampleTable,
    agent_query_distance,
    build_occupancy_relations,
    discretize_primitives,
    obstacle_query_distance,
    split_coverage_space,
)
from mpswarm.topp import sample_primitive


class TestDiscretize:
    def test_bins_tile_each_duration(self, tiny_library):
        t_res = 0.05
        table = discretize_primitives(tiny_library, t_res)
        assert table.t_res == t_res
        assert table.n_prims == len(tiny_library.primitives)
        for prim in tiny_library.primitives:
            rows = np.flatnonzero(table.prim_ids == prim.prim_id)
            t0 = table.t_start[rows]
            t1 = table.t_end[rows]
            assert t0[0] == 0.0
            assert t1[-1] == pytest.approx(prim.duration, abs=1e-12)
            np.testing.assert_allclose(t0[1:], t1[:-1], atol=1e-12)  # contiguous
            np.testing.assert_allclose(np.diff(t0), t_res, atol=1e-12)
            assert np.all(t1 - t0 <= t_res + 1e-12)
            assert np.all(t1 > t0)
            expect = math.ceil(prim.duration / t_res - 1e-9)
            assert len(rows) == max(1, expect)

    def test_positions_are_interval_midpoints(self, tiny_library):
        table = discretize_primitives(tiny_library, 0.05)
        for prim in tiny_library.primitives[:4]:
            rows = np.flatnonzero(table.prim_ids == prim.prim_id)
            mid = 0.5 * (table.t_start[rows] + table.t_end[rows])
            pos, _, _ = sample_primitive(prim, mid)
            np.testing.assert_array_equal(table.positions[rows], pos)

    def test_short_primitive_gets_one_bin(self, tiny_library):
        long_res = 2.0 * max(p.duration for p in tiny_library.primitives)
        table = discretize_primitives(tiny_library, long_res)
        assert len(table) == len(tiny_library.primitives)
        np.testing.assert_array_equal(table.t_start, 0.0)

    def test_rejects_nonpositive_resolution(self, tiny_library):
        with pytest.raises(ValueError):
            discretize_primitives(tiny_library, 0.0)


class TestGridIndex:
    def _grid(self):
        return GridIndex(
            min_corner=np.array([-1.0, 0.0, 2.0]),
            dims=np.array([4, 3, 5], dtype=np.int64),
            resolution=0.5,
        )

    def test_roundtrip_center_cell(self, rng):
        g = self._grid()
        cells = rng.integers(0, g.n_cells, size=200)
        centers = g.center_of(cells)
        np.testing.assert_array_equal(g.cell_of(centers), cells)

    def test_points_map_to_containing_cell(self, rng):
        g = self._grid()
        pts = rng.uniform(g.min_corner, g.max_corner, size=(500, 3))
        cells = g.cell_of(pts)
        assert np.all(cells >= 0)
        centers = g.center_of(cells)
        assert np.max(np.abs(pts - centers)) <= g.resolution / 2 + 1e-12

    def test_outside_is_minus_one(self):
        g = self._grid()
        out = np.array(
            [
                [-1.0001, 0.5, 2.5],
                [10.0, 0.5, 2.5],
                [0.0, -0.1, 2.5],
                [0.0, 0.5, 10.0],
            ]
        )
        np.testing.assert_array_equal(g.cell_of(out), -1)

    def test_half_open_boundaries(self):
        g = GridIndex(
            min_corner=np.zeros(3), dims=np.array([2, 2, 2]), resolution=1.0
        )
        assert g.cell_of(np.zeros((1, 3)))[0] == 0
        # the max corner belongs to no cell
        assert g.cell_of(np.array([[2.0, 2.0, 2.0]]))[0] == -1
        assert g.cell_of(np.array([[1.0, 1.0, 1.0]]))[0] == 7

    def test_counts(self):
        g = self._grid()
        assert g.n_cells == 4 * 3 * 5
        np.testing.assert_allclose(
            g.max_corner, g.min_corner + g.dims * g.resolution
        )


class TestSplitCoverage:
    def test_covers_expanded_aabb(self, rng):
        pos = rng.normal(size=(300, 3)) * 2.0
        d = 0.7
        g = split_coverage_space(pos, d, 0.25)
        assert np.all(g.min_corner <= pos.min(axis=0) - d + 1e-9)
        assert np.all(g.max_corner >= pos.max(axis=0) + d - 1e-9)
        # corners snap to whole cells
        snapped = np.round(g.min_corner / 0.25) * 0.25
        np.testing.assert_allclose(g.min_corner, snapped, atol=1e-9)

    def test_empty_input_raises(self):
        with pytest.raises(ValueError):
            split_coverage_space(np.empty((0, 3)), 1.0, 0.1)


class TestQueryDistances:
    def test_obstacle_distance_worked_example(self):
        # sqrt(3)/2 * 0.1 + 0.15
        assert obstacle_query_distance(0.1, 0.15) == pytest.approx(
            0.2366025403784439, abs=1e-15
        )

    def test_agent_distance_adds_two_radii_and_pad(self):
        d = agent_query_distance(0.1, 0.15, temporal_pad=0.0505)
        assert d == pytest.approx(math.sqrt(3) / 2 * 0.1 + 0.3 + 0.0505, abs=1e-15)
        assert agent_query_distance(0.1, 0.15) == pytest.approx(
            math.sqrt(3) / 2 * 0.1 + 0.3, abs=1e-15
        )


def _brute_force_cell(table, center, d1, d2):
    """Route 1: dense numpy distances, no spatial structure at all."""
    dd = np.einsum(
        "ij,ij->i", table.positions - center, table.positions - center
    )
    near = dd <= d1 * d1
    far = dd <= d2 * d2
    ro = np.unique(table.prim_ids[near])
    rt = {}
    for pid in np.unique(table.prim_ids[far]):
        rows = far & (table.prim_ids == pid)
        rt[int(pid)] = (table.t_start[rows].min(), table.t_end[rows].max())
    return ro, rt


@pytest.fixture(scope="module")
def built(tiny_library):
    t_res = 0.05
    s_res = 0.1
    d1 = obstacle_query_distance(s_res, 0.3)
    d2 = agent_query_distance(s_res, 0.15, 1.0 * t_res * 1.01)
    table = discretize_primitives(tiny_library, t_res)
    grid = split_coverage_space(table.positions, max(d1, d2), s_res)
    rel = build_occupancy_relations(table, grid, d1, d2)
    return table, grid, rel, d1, d2


class TestRelationsAgainstOracles:
    def test_matches_both_oracles(self, built, rng):
        table, grid, rel, d1, d2 = built
        tree = cKDTree(table.positions)  # route 2: independent structure
        cells = rng.choice(grid.n_cells, size=2000, replace=False)
        centers = grid.center_of(cells)
        hits_near = tree.query_ball_point(centers, d1)
        hits_far = tree.query_ball_point(centers, d2)
        for k, cell in enumerate(cells):
            ro_ref, rt_ref = _brute_force_cell(table, centers[k], d1, d2)
            kd_ro = np.unique(table.prim_ids[hits_near[k]])
            np.testing.assert_array_equal(kd_ro, ro_ref)
            np.testing.assert_array_equal(rel.ro_cell(int(cell)), ro_ref)
            ids, t0, t1 = rel.rt_cell(int(cell))
            kd_rt = np.unique(table.prim_ids[hits_far[k]])
            np.testing.assert_array_equal(ids, sorted(rt_ref))
            np.testing.assert_array_equal(ids, kd_rt)
            for j, pid in enumerate(ids):
                ref0, ref1 = rt_ref[int(pid)]
                assert t0[j] == ref0
                assert t1[j] == ref1

    def test_ro_subset_of_rt(self, built):
        _, grid, rel, _, _ = built
        for cell in range(grid.n_cells):
            ro = set(rel.ro_cell(cell).tolist())
            rt = set(rel.rt_cell(cell)[0].tolist())
            assert ro <= rt

    def test_ids_sorted_and_unique(self, built):
        _, grid, rel, _, _ = built
        for cell in range(0, grid.n_cells, 7):
            ro = rel.ro_cell(cell)
            assert np.all(np.diff(ro) > 0)
            ids = rel.rt_cell(cell)[0]
            assert np.all(np.diff(ids) > 0)


class TestWindowMerge:
    def test_reentry_merges_to_one_window(self):
        # one primitive visits the same spot twice; the stored window must
        # span from the first visit's start to the last visit's end
        pos = np.array([[0.0, 0.0, 0.0], [5.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
        table = SampleTable(
            prim_ids=np.zeros(3, dtype=np.int32),
            positions=pos,
            t_start=np.array([0.0, 1.0, 2.0]),
            t_end=np.array([1.0, 2.0, 3.0]),
            t_res=1.0,
            n_prims=1,
        )
        grid = split_coverage_space(pos, 0.5, 0.5)
        rel = build_occupancy_relations(table, grid, 0.3, 0.5)
        cell = int(grid.cell_of(np.zeros((1, 3)))[0])
        ids, t0, t1 = rel.rt_cell(cell)
        np.testing.assert_array_equal(ids, [0])
        assert t0[0] == 0.0 and t1[0] == 3.0

    def test_d1_greater_than_d2_rejected(self):
        pos = np.zeros((1, 3))
        table = SampleTable(
            prim_ids=np.zeros(1, dtype=np.int32),
            positions=pos,
            t_start=np.zeros(1),
            t_end=np.ones(1),
            t_res=1.0,
            n_prims=1,
        )
        grid = split_coverage_space(pos, 1.0, 0.5)
        with pytest.raises(ValueError):
            build_occupancy_relations(table, grid, 0.9, 0.5)


class TestPathBits:
    def test_identity_default_maps_each_prim_to_itself(self, built):
        _, _, rel, _, _ = built
        assert rel.n_paths == rel.n_prims
        np.testing.assert_array_equal(
            rel.path_of_prim, np.arange(rel.n_prims)
        )

    def test_bits_equal_path_union_of_ro(self, tiny_library, tiny_relations):
        rel = tiny_relations
        path_of = np.array([p.path_index for p in tiny_library.primitives])
        assert rel.n_paths == len(tiny_library.paths)
        np.testing.assert_array_equal(rel.path_of_prim, path_of)
        assert rel.ro_path_bits.shape[1] == max(8, -(-rel.n_paths // 64))
        assert not rel.ro_path_bits[0].any()  # shared all-zero row
        for cell in range(0, rel.grid.n_cells, 3):
            want = set(np.unique(path_of[rel.ro_cell(cell)]).tolist())
            row = rel.ro_path_bits[rel.ro_row[cell]]
            got = {
                p
                for p in range(rel.n_paths)
                if (int(row[p >> 6]) >> (p & 63)) & 1
            }
            assert got == want
            if not want:
                assert rel.ro_row[cell] == 0

    def test_row_zero_reserved_for_empty_cells(self, built):
        _, _, rel, _, _ = built
        counts = np.diff(rel.ro_indptr)
        assert np.all(rel.ro_row[counts == 0] == 0)
        occupied = rel.ro_row[counts > 0]
        assert np.all(occupied > 0)
        # every occupied cell owns a distinct row
        assert len(np.unique(occupied)) == len(occupied)
        assert rel.ro_path_bits.shape[0] == len(occupied) + 1

    def test_path_map_validation(self):
        pos = np.zeros((2, 3))
        pos[1, 0] = 1.0
        table = SampleTable(
            prim_ids=np.array([0, 1], dtype=np.int32),
            positions=pos,
            t_start=np.zeros(2),
            t_end=np.ones(2),
            t_res=1.0,
            n_prims=2,
        )
        grid = split_coverage_space(pos, 0.5, 0.5)
        with pytest.raises(ValueError, match="map every primitive"):
            build_occupancy_relations(
                table, grid, 0.3, 0.5, path_of_prim=np.zeros(1, np.int32)
            )
        with pytest.raises(ValueError, match="out of range"):
            build_occupancy_relations(
                table, grid, 0.3, 0.5,
                path_of_prim=np.array([0, 5], np.int32), n_paths=2,
            )


class TestPipeline:
    def test_build_for_library_defaults(self, tiny_library, tiny_relations):
        rel = tiny_relations
        assert rel.n_prims == len(tiny_library.primitives)
        assert rel.t_res == 0.05
        assert rel.d1 == pytest.approx(obstacle_query_distance(0.1, 0.3))
        pad = tiny_library.params.v_max * 0.05 * 1.01
        assert rel.d2 == pytest.approx(agent_query_distance(0.1, 0.15, pad))
        assert rel.r_robot == 0.15
        # grid covers every sample with the larger radius as margin
        table = discretize_primitives(tiny_library, 0.05)
        lo = table.positions.min(axis=0)
        hi = table.positions.max(axis=0)
        assert np.all(rel.grid.min_corner <= lo - rel.d2 + 1e-9)
        assert np.all(rel.grid.max_corner >= hi + rel.d2 - 1e-9)
