import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_cloud
from oracles import (
    bilinear_reference,
    bucket_means,
    central_difference,
    max_rel_error,
    nearest_lookup,
    trilinear_reference,
)
from triview.index import RangeIndex, spherical_project, unpack_pixel_keys, unpack_voxel_keys, voxelize
from triview.pcio import PointCloud
from triview.propagate import (
    bilinear_plan,
    gather,
    gather_backward,
    nearest_plan,
    scatter_average,
    scatter_average_backward,
    scatter_plan,
    trilinear_plan,
)

FOV = (np.radians(3.0), np.radians(-25.0))


def cloud_of(positions, channels=1):
    positions = np.asarray(positions, dtype=np.float64)
    return PointCloud(positions, np.zeros((len(positions), channels)))


def pixel_bucket_map(rindex):
    return {
        (int(r), int(c)): j
        for j, (r, c) in enumerate(unpack_pixel_keys(rindex.pixel_keys, rindex.width))
    }


def cell_bucket_map(vindex):
    return {
        tuple(int(v) for v in cell): j
        for j, cell in enumerate(unpack_voxel_keys(vindex.voxel_keys))
    }


class TestScatterAverage:
    def test_mean_of_two(self):
        plan = scatter_plan(voxelize(cloud_of([[0.01, 0, 0], [0.02, 0, 0]]), 0.1))
        np.testing.assert_array_equal(scatter_average(np.array([[1.0], [3.0]]), plan), [[2.0]])

    def test_singleton_buckets_reproduce_input(self, rng):
        positions = np.arange(30, dtype=np.float64).reshape(10, 3)
        plan = scatter_plan(voxelize(cloud_of(positions), 0.5))
        feats = rng.uniform(-1, 1, (10, 3))
        np.testing.assert_array_equal(scatter_average(feats, plan), feats)

    def test_matches_naive_means(self, rng):
        cloud = random_cloud(rng, 200, channels=3)
        index = voxelize(cloud, 0.5)
        plan = scatter_plan(index)
        feats = rng.uniform(-1, 1, (200, 3))
        expected = bucket_means(feats, [index.table.points_in(j) for j in range(index.num_voxels)])
        assert np.abs(scatter_average(feats, plan) - expected).max() < 1e-12
        got32 = scatter_average(feats.astype(np.float32), plan)
        assert got32.dtype == np.float32
        assert np.abs(got32 - expected).max() < 1e-6

    def test_shape_mismatch_rejected(self, rng):
        plan = scatter_plan(voxelize(cloud_of([[0, 0, 0]]), 0.1))
        with pytest.raises(ValueError):
            scatter_average(np.zeros((2, 1)), plan)

    def test_unindexed_points_do_not_contribute(self):
        # zero-range point is outside the range view; only the valid one counts
        index = spherical_project(cloud_of([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]), 8, 16, *FOV)
        plan = scatter_plan(index)
        out = scatter_average(np.array([[100.0], [3.0]]), plan)
        np.testing.assert_array_equal(out, [[3.0]])
        back = scatter_average_backward(np.array([[1.0]]), plan)
        np.testing.assert_array_equal(back, [[0.0], [1.0]])


class TestScatterBackward:
    def test_pair_bucket_splits_gradient(self):
        plan = scatter_plan(voxelize(cloud_of([[0.01, 0, 0], [0.02, 0, 0]]), 0.1))
        np.testing.assert_array_equal(
            scatter_average_backward(np.array([[1.0]]), plan), [[0.5], [0.5]]
        )

    def test_singletons_pass_gradient_through(self, rng):
        positions = np.arange(30, dtype=np.float64).reshape(10, 3)
        plan = scatter_plan(voxelize(cloud_of(positions), 0.5))
        grad = rng.uniform(-1, 1, (10, 2))
        np.testing.assert_array_equal(scatter_average_backward(grad, plan), grad)

    def test_matches_finite_differences(self, rng):
        cloud = random_cloud(rng, 24, channels=2)
        plan = scatter_plan(voxelize(cloud, 0.8))
        feats = rng.uniform(-1, 1, (24, 2))
        upstream = rng.uniform(-1, 1, (plan.num_buckets, 2))
        analytic = scatter_average_backward(upstream, plan)
        numeric = central_difference(
            lambda x: float((scatter_average(x, plan) * upstream).sum()), feats
        )
        assert max_rel_error(analytic, numeric) < 1e-6


class TestNearestGather:
    def test_constant_field_everywhere(self, rng):
        cloud = random_cloud(rng, 60)
        index = voxelize(cloud, 0.4)
        plan = nearest_plan(index)
        out = gather(np.full((index.num_voxels, 2), 3.25), plan)
        np.testing.assert_array_equal(out, np.full((60, 2), 3.25))

    def test_inverts_scatter_on_singletons(self, rng):
        positions = np.arange(36, dtype=np.float64).reshape(12, 3)
        index = voxelize(cloud_of(positions), 0.5)
        feats = rng.uniform(-1, 1, (12, 4))
        out = gather(scatter_average(feats, scatter_plan(index)), nearest_plan(index))
        np.testing.assert_array_equal(out, feats)

    def test_matches_direct_lookup(self, rng):
        cloud = random_cloud(rng, 150)
        index = spherical_project(cloud, 16, 64, *FOV)
        feats = rng.uniform(-1, 1, (index.num_pixels, 3))
        expected = nearest_lookup(feats, index.bucket_of_point)
        np.testing.assert_array_equal(gather(feats, nearest_plan(index)), expected)

    def test_invalid_points_get_zeros(self):
        cloud = cloud_of([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
        index = spherical_project(cloud, 8, 16, *FOV)
        out = gather(np.ones((index.num_pixels, 2)), nearest_plan(index))
        np.testing.assert_array_equal(out[0], [0.0, 0.0])
        np.testing.assert_array_equal(out[1], [1.0, 1.0])


def range_index_from_norm(norm, height=8, width=16):
    return RangeIndex.from_norm_coords(np.asarray(norm, dtype=np.float64), height, width)


class TestBilinearGather:
    def test_exact_pixel_center_copies_the_pixel(self):
        # point sits exactly at the center of pixel (2, 3)
        index = range_index_from_norm([[2.5, 3.5]])
        plan = bilinear_plan(index)
        out = gather(np.array([[7.0, -1.0]]), plan)
        np.testing.assert_allclose(out, [[7.0, -1.0]], atol=1e-12)

    def test_midpoint_of_four_centers_averages(self):
        corners = [[2.5, 3.5], [2.5, 4.5], [3.5, 3.5], [3.5, 4.5]]
        query = [[3.0, 4.0]]  # equidistant from all four centers
        index = range_index_from_norm(corners + query)
        assert index.num_pixels == 4  # the query shares pixel (3, 4) with a corner
        plan = bilinear_plan(index)
        feats = np.array([[1.0], [2.0], [3.0], [4.0]])
        out = gather(feats, plan)
        np.testing.assert_allclose(out[4], [2.5])

    def test_matches_reference_interpolation(self, rng):
        cloud = random_cloud(rng, 300)
        index = spherical_project(cloud, 16, 64, *FOV)
        plan = bilinear_plan(index)
        feats = rng.uniform(-1, 1, (index.num_pixels, 3))
        expected = bilinear_reference(
            index.norm_coords, index.valid, 16, 64,
            pixel_bucket_map(index), index.bucket_of_point, feats,
        )
        assert np.abs(gather(feats, plan) - expected).max() < 1e-6

    def test_weights_sum_to_one_before_renormalization(self, rng):
        cloud = random_cloud(rng, 400)
        index = spherical_project(cloud, 16, 64, *FOV)
        plan = bilinear_plan(index)
        sums = plan.weights.sum(axis=1)
        assert np.abs(sums - 1.0).max() < 1e-12
        assert plan.weights.min() >= 0.0

    def test_backward_single_pixel(self):
        # first point sits on its pixel center; the far pixel must stay zero
        index = range_index_from_norm([[2.5, 3.5], [6.5, 12.5]])
        plan = bilinear_plan(index)
        grad = gather_backward(np.array([[2.0, 5.0], [0.0, 0.0]]), plan)
        np.testing.assert_allclose(grad[0], [2.0, 5.0], atol=1e-12)
        np.testing.assert_array_equal(grad[1], [0.0, 0.0])

    def test_backward_zero_upstream(self, rng):
        cloud = random_cloud(rng, 50)
        index = spherical_project(cloud, 8, 32, *FOV)
        plan = bilinear_plan(index)
        out = gather_backward(np.zeros((50, 2)), plan)
        np.testing.assert_array_equal(out, np.zeros((index.num_pixels, 2)))

    def test_backward_matches_finite_differences(self, rng):
        cloud = random_cloud(rng, 40)
        index = spherical_project(cloud, 8, 32, *FOV)
        plan = bilinear_plan(index)
        feats = rng.uniform(-1, 1, (index.num_pixels, 2))
        upstream = rng.uniform(-1, 1, (40, 2))
        analytic = gather_backward(upstream, plan)
        numeric = central_difference(
            lambda x: float((gather(x, plan) * upstream).sum()), feats
        )
        assert max_rel_error(analytic, numeric) < 1e-6


class TestTrilinearGather:
    def test_voxel_center_copies_the_voxel(self):
        # with r=1 a point at (i+0.5, j+0.5, k+0.5) sits on the cell center
        index = voxelize(cloud_of([[1.5, 2.5, -0.5]]), 1.0)
        plan = trilinear_plan(index, [[1.5, 2.5, -0.5]])
        out = gather(np.array([[4.5, 2.0]]), plan)
        np.testing.assert_allclose(out, [[4.5, 2.0]], atol=1e-12)

    def test_constant_field_survives(self, rng):
        cloud = random_cloud(rng, 120)
        index = voxelize(cloud, 0.4)
        plan = trilinear_plan(index, cloud)
        out = gather(np.full((index.num_voxels, 3), -2.5), plan)
        np.testing.assert_allclose(out, np.full((120, 3), -2.5), atol=1e-9)

    def test_matches_reference_interpolation(self, rng):
        cloud = random_cloud(rng, 150)
        index = voxelize(cloud, 0.6)
        plan = trilinear_plan(index, cloud)
        feats = rng.uniform(-1, 1, (index.num_voxels, 2))
        expected = trilinear_reference(
            cloud.positions, 0.6, cell_bucket_map(index), index.bucket_of_point, feats
        )
        assert np.abs(gather(feats, plan) - expected).max() < 1e-6

    def test_backward_matches_finite_differences(self, rng):
        cloud = random_cloud(rng, 30)
        index = voxelize(cloud, 0.9)
        plan = trilinear_plan(index, cloud)
        feats = rng.uniform(-1, 1, (index.num_voxels, 2))
        upstream = rng.uniform(-1, 1, (30, 2))
        analytic = gather_backward(upstream, plan)
        numeric = central_difference(
            lambda x: float((gather(x, plan) * upstream).sum()), feats
        )
        assert max_rel_error(analytic, numeric) < 1e-6

    def test_position_count_must_match(self, rng):
        cloud = random_cloud(rng, 10)
        index = voxelize(cloud, 0.5)
        with pytest.raises(ValueError):
            trilinear_plan(index, np.zeros((3, 3)))


class TestSharedProperties:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 1 << 32), st.integers(2, 60))
    def test_constant_round_trip_all_modes(self, seed, n):
        rng = np.random.default_rng(seed)
        cloud = random_cloud(rng, n)
        vindex = voxelize(cloud, 0.5)
        rindex = spherical_project(cloud, 8, 32, *FOV)
        const = np.full((n, 2), 1.5, dtype=np.float32)
        for index, plan in (
            (vindex, nearest_plan(vindex)),
            (vindex, trilinear_plan(vindex, cloud)),
            (rindex, bilinear_plan(rindex)),
        ):
            through = gather(scatter_average(const, scatter_plan(index)), plan)
            assert np.abs(through - 1.5).max() <= 1e-6

    def test_linearity(self, rng):
        cloud = random_cloud(rng, 80)
        index = voxelize(cloud, 0.5)
        plan = scatter_plan(index)
        tri = trilinear_plan(index, cloud)
        a = rng.uniform(-1, 1, (80, 2))
        b = rng.uniform(-1, 1, (80, 2))
        mixed = scatter_average(2.0 * a + 3.0 * b, plan)
        parts = 2.0 * scatter_average(a, plan) + 3.0 * scatter_average(b, plan)
        assert max_rel_error(mixed, parts) < 1e-6
        fa = rng.uniform(-1, 1, (index.num_voxels, 2))
        fb = rng.uniform(-1, 1, (index.num_voxels, 2))
        assert max_rel_error(
            gather(2.0 * fa + 3.0 * fb, tri), 2.0 * gather(fa, tri) + 3.0 * gather(fb, tri)
        ) < 1e-6

    def test_adjointness(self, rng):
        cloud = random_cloud(rng, 70)
        vindex = voxelize(cloud, 0.5)
        rindex = spherical_project(cloud, 8, 32, *FOV)
        for plan in (
            trilinear_plan(vindex, cloud),
            bilinear_plan(rindex),
            nearest_plan(vindex),
        ):
            feats = rng.uniform(-1, 1, (plan.num_buckets, 3))
            probe = rng.uniform(-1, 1, (70, 3))
            lhs = float((gather(feats, plan) * probe).sum())
            rhs = float((feats * gather_backward(probe, plan)).sum())
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)
        plan = scatter_plan(vindex)
        feats = rng.uniform(-1, 1, (70, 3))
        probe = rng.uniform(-1, 1, (plan.num_buckets, 3))
        lhs = float((scatter_average(feats, plan) * probe).sum())
        rhs = float((feats * scatter_average_backward(probe, plan)).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)

    def test_effective_weights_partition_unity(self, rng):
        cloud = random_cloud(rng, 200)
        vindex = voxelize(cloud, 0.5)
        rindex = spherical_project(cloud, 8, 32, *FOV)
        for plan, mask in (
            (trilinear_plan(vindex, cloud), np.ones(200, dtype=bool)),
            (bilinear_plan(rindex), rindex.valid),
            (nearest_plan(vindex), np.ones(200, dtype=bool)),
        ):
            sums = plan.effective_weights.sum(axis=1)
            assert np.abs(sums[mask] - 1.0).max() < 1e-12
