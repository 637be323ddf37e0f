import itertools
import math

import numpy as np
import pytest

from rangefuse.decoder import (
    LOSS_WEIGHT_PRESETS,
    LossWeights,
    MaskEmbedParams,
    MatchResult,
    Mlp2Params,
    aggregate_point_feature,
    class_head,
    hungarian,
    init_mask_embed,
    init_mlp2,
    mask_embed,
    mask_logits,
    mask_logits_2d,
    match_costs,
    panoptic_loss,
    point_features,
    sample_points,
    select_3d_neighbors,
)


def brute_force_neighbors(ranges, valid, row, col, r_true, k, window):
    """Reference: python sort of all window candidates."""
    height, width = ranges.shape
    half = window // 2
    cands = []
    for rr in range(max(0, row - half), min(height, row + half + 1)):
        for cc in range(max(0, col - half), min(width, col + half + 1)):
            diff = abs(ranges[rr, cc] - r_true) if valid[rr, cc] else math.inf
            cands.append((diff, rr * width + cc, rr, cc))
    cands.sort()
    finite = [c for c in cands if math.isfinite(c[0])]
    if not finite:
        return None
    pool = finite[:k]
    return [(pool[i % len(pool)][2], pool[i % len(pool)][3]) for i in range(k)]


class TestNeighborSelection:
    def test_exact_range_match_wins(self):
        ranges = np.full((7, 7), 50.0)
        ranges[2, 4] = 10.0
        valid = np.ones((7, 7), bool)
        nbrs = select_3d_neighbors(ranges, valid, 3, 3, 10.0)
        assert tuple(nbrs[0]) == (2, 4)

    def test_tie_breaks_row_major(self):
        ranges = np.full((5, 5), 10.0)  # every diff equal -> pure pixel order
        valid = np.ones((5, 5), bool)
        nbrs = select_3d_neighbors(ranges, valid, 2, 2, 10.0)
        assert [tuple(p) for p in nbrs] == [(0, 0), (0, 1), (0, 2), (0, 3), (0, 4)]

    def test_single_valid_pixel_repeats(self):
        ranges = np.zeros((5, 5))
        valid = np.zeros((5, 5), bool)
        valid[1, 3] = True
        nbrs = select_3d_neighbors(ranges, valid, 2, 2, 1.0)
        assert [tuple(p) for p in nbrs] == [(1, 3)] * 5

    def test_cyclic_fill_with_two_valid(self):
        ranges = np.zeros((5, 5))
        ranges[0, 0] = 1.0
        ranges[4, 4] = 2.0
        valid = np.zeros((5, 5), bool)
        valid[0, 0] = valid[4, 4] = True
        nbrs = select_3d_neighbors(ranges, valid, 2, 2, 1.0)
        assert [tuple(p) for p in nbrs] == [(0, 0), (4, 4), (0, 0), (4, 4), (0, 0)]

    def test_no_valid_pixels_is_error(self):
        with pytest.raises(ValueError):
            select_3d_neighbors(np.zeros((5, 5)), np.zeros((5, 5), bool), 2, 2, 1.0)

    def test_out_of_bounds_pixel(self):
        with pytest.raises(IndexError):
            select_3d_neighbors(np.zeros((5, 5)), np.ones((5, 5), bool), 5, 0, 1.0)

    def test_border_windows_clip(self):
        ranges = np.arange(25, dtype=float).reshape(5, 5)
        valid = np.ones((5, 5), bool)
        nbrs = select_3d_neighbors(ranges, valid, 0, 0, 0.0)
        assert np.all(nbrs[:, 0] <= 2) and np.all(nbrs[:, 1] <= 2)

    def test_brute_force_oracle(self):
        # acceptance-scale sweep: 10^4 random windows against a python sort
        rng = np.random.default_rng(404)
        checked = 0
        while checked < 10_000:
            h = int(rng.integers(3, 12))
            w = int(rng.integers(3, 12))
            ranges = rng.uniform(1.0, 80.0, (h, w))
            if rng.random() < 0.3:  # duplicate ranges force tie-breaks
                ranges = np.round(ranges)
            valid = rng.random((h, w)) < rng.uniform(0.2, 1.0)
            row = int(rng.integers(0, h))
            col = int(rng.integers(0, w))
            r_true = float(rng.uniform(1.0, 80.0))
            expected = brute_force_neighbors(ranges, valid, row, col, r_true, 5, 5)
            if expected is None:
                with pytest.raises(ValueError):
                    select_3d_neighbors(ranges, valid, row, col, r_true)
            else:
                got = select_3d_neighbors(ranges, valid, row, col, r_true)
                assert [tuple(p) for p in got] == expected
            checked += 1


class TestAggregation:
    def test_block_average_matrix(self):
        # w1 averages the K slots into both hidden halves, w2 picks them back out
        k, dim = 5, 3
        w1 = np.zeros((k * dim, 2 * dim))
        for slot in range(k):
            for d in range(dim):
                w1[slot * dim + d, d] = 1.0 / k
                w1[slot * dim + d, dim + d] = 1.0 / k
        w2 = np.zeros((2 * dim, dim))
        w2[:dim, :] = np.eye(dim)
        mlp = Mlp2Params(w1=w1, b1=np.zeros(2 * dim), w2=w2, b2=np.zeros(dim))
        f_mask = np.zeros((4, 4, dim))
        f_mask[0, 0] = [4.0, 8.0, 0.0]
        f_mask[1, 1] = [0.0, 2.0, 10.0]
        neighbors = np.array([[0, 0], [0, 1], [4, 4], [5, 5], [6, 6]])  # stride-4 lookup
        out = aggregate_point_feature(f_mask, neighbors, mlp)
        # slots: (0,0),(0,0),(1,1),(1,1),(1,1) -> mean = (8+0*3)/5 etc
        np.testing.assert_allclose(out, [8.0 / 5, (16 + 6) / 5, 30.0 / 5], atol=1e-12)

    def test_zero_parameters_zero_output(self):
        mlp = Mlp2Params(
            w1=np.zeros((10, 4)), b1=np.zeros(4), w2=np.zeros((4, 2)), b2=np.zeros(2)
        )
        f_mask = np.ones((2, 2, 2))
        out = aggregate_point_feature(f_mask, np.array([[0, 0]] * 5), mlp)
        np.testing.assert_array_equal(out, np.zeros(2))

    def test_scalar_chain_oracle(self):
        # K=2, D=1: hand-computed relu chain
        mlp = Mlp2Params(
            w1=np.array([[1.0, -1.0], [1.0, -1.0]]),
            b1=np.array([0.5, 0.25]),
            w2=np.array([[2.0], [3.0]]),
            b2=np.array([-1.0]),
        )
        f_mask = np.zeros((1, 1, 1))
        f_mask[0, 0, 0] = 2.0
        out = aggregate_point_feature(f_mask, np.array([[0, 0], [0, 0]]), mlp)
        # concat = [2, 2]; z1 = [4.5, -3.75] -> h = [4.5, 0]; out = 9 - 1
        np.testing.assert_allclose(out, [8.0], atol=1e-12)

    def test_width_mismatch_error(self):
        mlp = init_mlp2(5, 4, seed=1)
        with pytest.raises(ValueError):
            aggregate_point_feature(np.ones((2, 2, 4)), np.array([[0, 0]] * 3), mlp)

    def test_init_shapes_and_determinism(self):
        a = init_mlp2(5, 16, seed=9)
        b = init_mlp2(5, 16, seed=9)
        assert a.k == 5 and a.dim == 16
        assert a.w1.shape == (80, 32) and a.w2.shape == (32, 16)
        np.testing.assert_array_equal(a.w1, b.w1)
        np.testing.assert_array_equal(a.b1, np.zeros(32))

    def test_point_features_matches_scalar_path(self):
        rng = np.random.default_rng(77)
        ranges = rng.uniform(1, 50, (8, 12))
        valid = rng.random((8, 12)) < 0.8
        valid[0, 0] = True
        f_mask = rng.normal(size=(2, 3, 6))
        mlp = init_mlp2(5, 6, seed=3)
        pts = np.array([[0, 0], [3, 7], [7, 11], [4, 4]])
        r_true = rng.uniform(1, 50, 4)
        batch = point_features(f_mask, ranges, valid, pts, r_true, mlp)
        assert batch.shape == (6, 4)
        for j in range(4):
            nbrs = select_3d_neighbors(
                ranges, valid, int(pts[j, 0]), int(pts[j, 1]), float(r_true[j])
            )
            single = aggregate_point_feature(f_mask, nbrs, mlp)
            np.testing.assert_allclose(batch[:, j], single, atol=1e-12)


class TestHeads:
    def test_class_head_affine(self):
        q = np.array([[1.0, 2.0], [0.0, -1.0]])
        w = np.array([[1.0, 0.0, 2.0], [0.0, 1.0, -1.0]])
        b = np.array([0.5, 0.0, 0.0])
        np.testing.assert_allclose(
            class_head(q, w, b), [[1.5, 2.0, 0.0], [0.5, -1.0, 1.0]], atol=1e-12
        )

    def test_class_head_shape_error(self):
        with pytest.raises(ValueError):
            class_head(np.ones((2, 3)), np.ones((4, 5)), np.ones(5))

    def test_mask_embed_manual_chain(self):
        p = MaskEmbedParams(
            w1=np.array([[2.0]]),
            b1=np.array([-1.0]),
            w2=np.array([[-3.0]]),
            b2=np.array([4.0]),
            w3=np.array([[1.0]]),
            b3=np.array([0.5]),
        )
        # x=1: h1=relu(1)=1, h2=relu(1)=1, out=1.5; x=0: h1=0, h2=4, out=4.5
        out = mask_embed(np.array([[1.0], [0.0]]), p)
        np.testing.assert_allclose(out, [[1.5], [4.5]], atol=1e-12)

    def test_mask_embed_init_and_shapes(self):
        p = init_mask_embed(8, seed=2)
        out = mask_embed(np.ones((3, 8)), p)
        assert out.shape == (3, 8)
        q = init_mask_embed(8, seed=2)
        np.testing.assert_array_equal(p.w3, q.w3)

    def test_mask_logit_matmul_oracle(self):
        rng = np.random.default_rng(11)
        e = rng.normal(size=(7, 5))
        f = rng.normal(size=(5, 13))
        got = mask_logits(e, f)
        expected = np.empty((7, 13))
        for q in range(7):
            for n in range(13):
                expected[q, n] = sum(e[q, d] * f[d, n] for d in range(5))
        assert np.max(np.abs(got - expected)) < 1e-10

    def test_mask_logits_bilinear(self):
        rng = np.random.default_rng(12)
        e1 = rng.normal(size=(4, 6))
        e2 = rng.normal(size=(4, 6))
        f = rng.normal(size=(6, 9))
        np.testing.assert_allclose(
            mask_logits(2.0 * e1 + e2, f),
            2.0 * mask_logits(e1, f) + mask_logits(e2, f),
            atol=1e-12,
        )

    def test_mask_logits_2d_matches_flattened(self):
        rng = np.random.default_rng(13)
        e = rng.normal(size=(4, 6))
        grid = rng.normal(size=(3, 5, 6))
        flat = mask_logits(e, grid.reshape(-1, 6).T)
        np.testing.assert_allclose(
            mask_logits_2d(e, grid), flat.reshape(4, 3, 5), atol=1e-12
        )

    def test_mask_logits_dim_error(self):
        with pytest.raises(ValueError):
            mask_logits(np.ones((2, 3)), np.ones((4, 5)))


class TestPointSampling:
    def test_full_importance_takes_smallest_abs_logits(self):
        m = np.array([[5.0, -0.1, 3.0, 0.2, -7.0, 0.05]])
        idx = sample_points(m, 3, 1.0, np.random.default_rng(0))
        assert sorted(idx.tolist()) == [1, 3, 5]

    def test_min_over_queries_drives_importance(self):
        # second query makes point 0 near-boundary despite the first query
        m = np.array([[9.0, 9.0, 9.0], [0.01, 8.0, 8.0]])
        idx = sample_points(m, 1, 1.0, np.random.default_rng(0))
        assert idx.tolist() == [0]

    def test_zero_ratio_is_uniform_and_seeded(self):
        m = np.random.default_rng(5).normal(size=(3, 50))
        a = sample_points(m, 20, 0.0, np.random.default_rng(42))
        b = sample_points(m, 20, 0.0, np.random.default_rng(42))
        np.testing.assert_array_equal(a, b)
        assert np.unique(a).size == 20

    def test_mixed_ratio_counts(self):
        closeness = np.arange(100, dtype=float) + 1.0
        m = closeness[None, :]
        idx = sample_points(m, 10, 0.75, np.random.default_rng(1))
        # ceil(7.5) = 8 importance picks -> indices 0..7, then 2 random others
        assert idx[:8].tolist() == list(range(8))
        assert np.all(idx[8:] >= 8) and np.unique(idx).size == 10

    def test_too_many_points_error(self):
        with pytest.raises(ValueError):
            sample_points(np.ones((2, 5)), 6, 0.5, np.random.default_rng(0))

    def test_bad_ratio_error(self):
        with pytest.raises(ValueError):
            sample_points(np.ones((2, 5)), 3, 1.5, np.random.default_rng(0))


def reference_costs(class_logits, m3d, gt_classes, gt_masks, weights):
    """Scalar-loop mirror of the cost matrix."""
    n_gt = len(gt_classes)
    n_q, _ = class_logits.shape
    out = np.zeros((n_gt, n_q))
    for g in range(n_gt):
        for q in range(n_q):
            z = class_logits[q] - class_logits[q].max()
            p = np.exp(z) / np.exp(z).sum()
            bce = 0.0
            inter = psum = tsum = 0.0
            for logit, t in zip(m3d[q], gt_masks[g]):
                s = 1.0 / (1.0 + math.exp(-logit))
                bce += -(t * math.log(s) + (1 - t) * math.log(1 - s))
                inter += s * t
                psum += s
                tsum += t
            bce /= m3d.shape[1]
            dice = 1.0 - (2 * inter + 1) / (psum + tsum + 1)
            out[g, q] = (
                weights.cls * (-p[gt_classes[g]])
                + weights.mask * bce
                + weights.dice * dice
            )
    return out


class TestMatchCosts:
    def test_matches_scalar_reference(self):
        rng = np.random.default_rng(21)
        cl = rng.normal(size=(6, 4))
        m3d = rng.normal(size=(6, 10))
        gt_c = np.array([0, 2, 1])
        gt_m = (rng.random((3, 10)) < 0.5).astype(float)
        w = LossWeights(cls=5.0, dice=5.0, mask=100.0)
        got = match_costs(cl, m3d, gt_c, gt_m, w)
        np.testing.assert_allclose(got, reference_costs(cl, m3d, gt_c, gt_m, w), atol=1e-10)

    def test_saturated_prediction_cost(self):
        # query 0 predicts gt 0 perfectly at +-20 logits: cost ~ -cls_w
        gt_m = np.array([[1.0, 1.0, 0.0, 0.0]])
        m3d = np.where(gt_m == 1.0, 20.0, -20.0)
        cl = np.array([[20.0, 0.0]])
        w = LossWeights(cls=5.0, dice=5.0, mask=100.0)
        cost = match_costs(cl, m3d, np.array([0]), gt_m, w)
        assert abs(cost[0, 0] + 5.0) < 1e-4

    def test_zero_logits_give_ln2_bce(self):
        gt_m = np.array([[1.0, 0.0]])
        cost = match_costs(
            np.array([[0.0, 0.0]]),
            np.zeros((1, 2)),
            np.array([0]),
            gt_m,
            LossWeights(cls=0.0, dice=0.0, mask=1.0),
        )
        assert abs(cost[0, 0] - math.log(2.0)) < 1e-12

    def test_zero_weights_zero_cost(self):
        rng = np.random.default_rng(3)
        cost = match_costs(
            rng.normal(size=(3, 4)),
            rng.normal(size=(3, 6)),
            np.array([1]),
            np.ones((1, 6)),
            LossWeights(cls=0.0, dice=0.0, mask=0.0),
        )
        np.testing.assert_array_equal(cost, np.zeros((1, 3)))

    def test_empty_ground_truth(self):
        cost = match_costs(
            np.zeros((4, 3)),
            np.zeros((4, 8)),
            np.empty(0, dtype=int),
            np.empty((0, 8)),
            LOSS_WEIGHT_PRESETS["nuscenes"],
        )
        assert cost.shape == (0, 4)

    def test_mask_shape_error(self):
        with pytest.raises(ValueError):
            match_costs(
                np.zeros((2, 3)),
                np.zeros((2, 5)),
                np.array([0]),
                np.ones((1, 4)),
                LOSS_WEIGHT_PRESETS["waymo"],
            )


def brute_force_assignment(costs):
    """Enumerate injective gt->query maps; minimal total cost."""
    n_gt, n_q = costs.shape
    best = None
    best_cols = None
    for cols in itertools.permutations(range(n_q), n_gt):
        total = sum(costs[g, c] for g, c in enumerate(cols))
        if best is None or total < best - 1e-12:
            best = total
            best_cols = cols
    return best, best_cols


class TestHungarian:
    def test_single_pair(self):
        res = hungarian(np.array([[3.5]]))
        assert res.gt_to_query.tolist() == [0]
        assert res.total_cost == pytest.approx(3.5)

    def test_two_by_two_diagonal(self):
        res = hungarian(np.array([[1.0, 2.0], [2.0, 1.0]]))
        assert res.gt_to_query.tolist() == [0, 1]
        assert res.total_cost == pytest.approx(2.0)

    def test_rectangular_skips_expensive_query(self):
        costs = np.array([[10.0, 1.0, 10.0], [10.0, 10.0, 1.0]])
        res = hungarian(costs)
        assert res.gt_to_query.tolist() == [1, 2]

    def test_empty_ground_truth(self):
        res = hungarian(np.zeros((0, 5)))
        assert res.gt_to_query.size == 0 and res.total_cost == 0.0

    def test_infeasible_error(self):
        with pytest.raises(ValueError):
            hungarian(np.zeros((4, 2)))

    def test_nonfinite_error(self):
        with pytest.raises(ValueError):
            hungarian(np.array([[1.0, np.inf]]))

    def test_brute_force_oracle(self):
        # acceptance-scale sweep: 1000 random matrices up to 6x6
        rng = np.random.default_rng(777)
        for _ in range(1000):
            n_q = int(rng.integers(1, 7))
            n_gt = int(rng.integers(1, n_q + 1))
            costs = rng.uniform(-5.0, 5.0, (n_gt, n_q))
            res = hungarian(costs)
            best, _ = brute_force_assignment(costs)
            assert res.total_cost == pytest.approx(best, abs=1e-9)
            assert np.unique(res.gt_to_query).size == n_gt
            recomputed = costs[np.arange(n_gt), res.gt_to_query].sum()
            assert res.total_cost == pytest.approx(recomputed, abs=1e-12)

    def test_row_constant_shift_preserves_assignment(self):
        rng = np.random.default_rng(31)
        costs = rng.uniform(0, 1, (4, 6))
        base = hungarian(costs)
        shifted = costs.copy()
        shifted[2] += 17.0  # every row is assigned once, so shifts cancel
        res = hungarian(shifted)
        np.testing.assert_array_equal(base.gt_to_query, res.gt_to_query)

    def test_injectivity_guard(self):
        with pytest.raises(ValueError):
            MatchResult(np.array([1, 1]), np.zeros(2), 0.0)


class TestPanopticLoss:
    def test_total_is_exact_weighted_sum(self):
        rng = np.random.default_rng(41)
        cl = rng.normal(size=(5, 4))
        m3d = rng.normal(size=(5, 12))
        gt_c = np.array([0, 2])
        gt_m = (rng.random((2, 12)) < 0.5).astype(float)
        w = LOSS_WEIGHT_PRESETS["nuscenes"]
        match = hungarian(match_costs(cl, m3d, gt_c, gt_m, w))
        total, parts = panoptic_loss(cl, m3d, gt_c, gt_m, match, w)
        assert total == w.cls * parts["cls"] + w.mask * parts["mask"] + w.dice * parts["dice"]

    def test_saturated_prediction_near_zero(self):
        # matched query nails class and mask at +-30 logits, unmatched queries
        # saturate on no-object -> every term collapses
        gt_m = np.array([[1.0, 0.0, 1.0, 0.0]])
        n_q, n_cls = 3, 3  # 2 real classes + no-object
        cl = np.full((n_q, n_cls), -30.0)
        cl[0, 0] = 30.0
        cl[1, 2] = 30.0
        cl[2, 2] = 30.0
        m3d = np.zeros((n_q, 4))
        m3d[0] = np.where(gt_m[0] == 1.0, 30.0, -30.0)
        match = MatchResult(np.array([0]), np.zeros(1), 0.0)
        total, _ = panoptic_loss(
            cl, m3d, np.array([0]), gt_m, match, LOSS_WEIGHT_PRESETS["nuscenes"]
        )
        assert total < 1e-4

    def test_uniform_logits_all_unmatched(self):
        n_cls = 5  # 4 real + no-object
        cl = np.zeros((6, n_cls))
        match = MatchResult(np.empty(0, dtype=np.int64), np.empty(0), 0.0)
        total, parts = panoptic_loss(
            cl,
            np.zeros((6, 4)),
            np.empty(0, dtype=int),
            np.empty((0, 4)),
            match,
            LossWeights(cls=1.0, dice=1.0, mask=1.0),
        )
        assert parts["mask"] == 0.0 and parts["dice"] == 0.0
        assert abs(parts["cls"] - math.log(n_cls)) < 1e-12
        assert abs(total - math.log(n_cls)) < 1e-12

    def test_matched_queries_use_gt_class(self):
        # matched query 1 must be supervised to class 0, others to no-object
        cl = np.zeros((2, 3))
        cl[1, 0] = 50.0  # certain of the right class
        cl[0, 2] = 50.0  # certain no-object
        match = MatchResult(np.array([1]), np.zeros(1), 0.0)
        _, parts = panoptic_loss(
            cl,
            np.full((2, 3), 10.0),
            np.array([0]),
            np.ones((1, 3)),
            match,
            LossWeights(cls=1.0, dice=0.0, mask=0.0),
        )
        assert parts["cls"] < 1e-12

    def test_mask_terms_average_over_matched_pairs(self):
        # two matched pairs, one perfect and one at ln2 -> mean bce = ln2 / 2
        m3d = np.array([[40.0, -40.0], [0.0, 0.0]])
        gt_m = np.array([[1.0, 0.0], [1.0, 0.0]])
        match = MatchResult(np.array([0, 1]), np.zeros(2), 0.0)
        _, parts = panoptic_loss(
            np.zeros((2, 3)),
            m3d,
            np.array([0, 1]),
            gt_m,
            match,
            LossWeights(cls=0.0, dice=0.0, mask=1.0),
        )
        assert abs(parts["mask"] - math.log(2.0) / 2.0) < 1e-10


class TestPresets:
    def test_weight_presets(self):
        nus = LOSS_WEIGHT_PRESETS["nuscenes"]
        assert (nus.cls, nus.dice, nus.mask) == (5.0, 5.0, 100.0)
        way = LOSS_WEIGHT_PRESETS["waymo"]
        assert (way.cls, way.dice, way.mask) == (2.0, 5.0, 50.0)
        assert LOSS_WEIGHT_PRESETS["semantickitti"] == way
