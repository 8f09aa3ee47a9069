import numpy as np
import pytest

from m3dm.evaluation import (
    CvReport,
    l2_cv,
    mahalanobis,
    mahalanobis_protocol,
    population_stats,
    source_target_split,
)
from m3dm.latent_world import (
    eval_swap_flags,
    fit_hyperplane,
    generate_pairs,
    make_world,
    sample_labeled,
)


@pytest.fixture(scope="module")
def dataset():
    world = make_world(seed=7, d=16, attributes=["attr0"], k=10)
    W, y = sample_labeled(world, "attr0", 600, np.random.default_rng(3), min_margin=0.4)
    h = fit_hyperplane((W, y))
    return generate_pairs(world, h, "attr0", 500, seed=77, k_dims=(4, 3, 3))


def test_l2cv_oracle_method_scores_zero(dataset):
    # an oracle that returns the exact target must measure zero

    def factory(train_ds):
        def transform(p_src, s_src, s_trg):
            # recover the matching targets by looking the sources up in the dataset
            p_src_all, s_src_all, p_trg_all, _ = source_target_split(dataset)
            idx = [int(np.argmin(np.linalg.norm(p_src_all - row, axis=1))) for row in p_src]
            return p_trg_all[idx]

        return transform

    report = l2_cv(dataset, factory, folds=5, seed=3, method_name="oracle")
    assert report.grand_mean == pytest.approx(0.0, abs=1e-12)
    assert all(m == pytest.approx(0.0, abs=1e-12) for m in report.fold_means)


def test_l2cv_identity_method_matches_direct_loop(dataset):
    def factory(train_ds):
        return lambda p_src, s_src, s_trg: p_src

    report = l2_cv(dataset, factory, folds=5, seed=3, method_name="identity")

    # independent recomputation: every sample appears in exactly one test fold,
    # so the mean over folds equals the plain dataset mean of ||p_trg - p_src||
    swapped = eval_swap_flags(dataset.seed, dataset.ids)
    total = 0.0
    for i in range(len(dataset)):
        if swapped[i]:
            src, trg = dataset.p_neg[i], dataset.p_pos[i]
        else:
            src, trg = dataset.p_pos[i], dataset.p_neg[i]
        total += float(np.linalg.norm(trg - src))
    assert report.grand_mean == pytest.approx(total / len(dataset), rel=1e-12)


def test_l2cv_fold_partition_disjoint_exhaustive(dataset):
    seen = []

    def factory(train_ds):
        def transform(p_src, s_src, s_trg):
            return p_src

        seen.append(set(train_ds.ids.tolist()))
        return transform

    l2_cv(dataset, factory, folds=5, seed=9)
    n = len(dataset)
    test_sets = [set(range(n)) - s for s in seen]
    union = set()
    for ts in test_sets:
        assert len(ts) == n // 5
        assert not (union & ts)
        union |= ts
    assert union == set(range(n))


def test_l2cv_requires_divisible_folds(dataset):
    with pytest.raises(ValueError, match="folds"):
        l2_cv(dataset.subset(np.arange(7)), lambda ds: (lambda a, b, c: a), folds=5)


def test_l2cv_training_failure_reports_fold():
    world = make_world(seed=7, d=16, attributes=["attr0"], k=10)
    W, y = sample_labeled(world, "attr0", 600, np.random.default_rng(3), min_margin=0.4)
    h = fit_hyperplane((W, y))
    ds = generate_pairs(world, h, "attr0", 50, seed=5, k_dims=(4, 3, 3))

    def factory(train_ds):
        raise ValueError("boom")

    with pytest.raises(RuntimeError, match="fold 0"):
        l2_cv(ds, factory, folds=5, seed=1)


def test_l2cv_deterministic_and_paper_protocol_shape(dataset):
    def factory(train_ds):
        return lambda p_src, s_src, s_trg: p_src

    r1 = l2_cv(dataset, factory, folds=5, seed=3)
    r2 = l2_cv(dataset, factory, folds=5, seed=3)
    assert r1.fold_means == r2.fold_means
    assert r1.fold_sizes == [100] * 5
    # the full-scale protocol splits 20000 samples into 16000 train / 4000 test
    n, folds = 20000, 5
    assert (n - n // folds, n // folds) == (16000, 4000)


def test_population_stats_identical_inputs():
    P = np.tile([1.0, 2.0, 3.0], (10, 1))
    stats = population_stats(P)
    assert np.allclose(stats.cov, 0.0)
    assert np.allclose(stats.mean, [1, 2, 3])
    # S_reg = eps * I still factorizes
    assert mahalanobis(np.array([1.0, 2.0, 3.0]), stats) == 0.0


def test_population_stats_axis_aligned():
    rng = np.random.default_rng(0)
    P = np.zeros((500, 2))
    P[:, 1] = rng.standard_normal(500)
    stats = population_stats(P)
    assert abs(stats.cov[0, 1]) < 1e-12
    assert abs(stats.cov[1, 0]) < 1e-12


def test_population_stats_matches_two_pass_oracle():
    rng = np.random.default_rng(1)
    P = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 6)) + rng.standard_normal(6)
    stats = population_stats(P, epsilon=0.0)
    mean = P.sum(axis=0) / len(P)
    cov = np.zeros((6, 6))
    for row in P:
        d = row - mean
        cov += np.outer(d, d)
    cov /= len(P) - 1
    assert np.abs(stats.mean - mean).max() < 1e-10
    assert np.abs(stats.cov - cov).max() < 1e-10


def test_population_stats_requires_two_rows():
    with pytest.raises(ValueError):
        population_stats(np.zeros((1, 3)))


def test_mahalanobis_at_mean_is_zero_and_positive_elsewhere():
    rng = np.random.default_rng(2)
    stats = population_stats(rng.standard_normal((100, 4)))
    assert mahalanobis(stats.mean, stats) == 0.0
    assert mahalanobis(stats.mean + 0.1, stats) > 0.0


def test_mahalanobis_identity_covariance():
    from m3dm.evaluation import PopulationStats

    stats = PopulationStats(mean=np.zeros(5), cov=np.eye(5), epsilon=0.0, count=2)
    p = np.array([3.0, 4.0, 0.0, 0.0, 0.0])
    assert mahalanobis(p, stats) == pytest.approx(5.0, abs=1e-12)


def test_mahalanobis_affine_invariance_oracle():
    rng = np.random.default_rng(4)
    P = rng.standard_normal((400, 5)) @ rng.standard_normal((5, 5)) + 2.0
    stats = population_stats(P, epsilon=0.0)
    p = rng.standard_normal(5) + 2.0
    base = mahalanobis(p, stats)
    for _ in range(10):
        M = rng.standard_normal((5, 5))
        while abs(np.linalg.det(M)) < 0.1:
            M = rng.standard_normal((5, 5))
        b = rng.standard_normal(5)
        stats_t = population_stats(P @ M.T + b, epsilon=0.0)
        assert mahalanobis(M @ p + b, stats_t) == pytest.approx(base, abs=1e-8)


def test_mahalanobis_scaling_monotonicity():
    rng = np.random.default_rng(5)
    stats = population_stats(rng.standard_normal((300, 4)))
    delta = rng.standard_normal(4)
    base = mahalanobis(stats.mean + delta, stats)
    for c in (0.0, 0.5, 2.0, 7.5):
        assert mahalanobis(stats.mean + c * delta, stats) == pytest.approx(c * base, rel=1e-12)


def test_mahalanobis_batch_matches_single():
    rng = np.random.default_rng(6)
    stats = population_stats(rng.standard_normal((300, 4)))
    P = rng.standard_normal((8, 4))
    batch = mahalanobis(P, stats)
    for i in range(8):
        assert batch[i] == pytest.approx(mahalanobis(P[i], stats), rel=1e-12)


def test_population_stats_not_positive_definite_error():
    # a negative epsilon can push the regularized covariance indefinite
    rng = np.random.default_rng(7)
    P = rng.standard_normal((50, 3))
    with pytest.raises(ValueError, match="epsilon"):
        population_stats(P, epsilon=-10.0)


def test_mahalanobis_protocol_oracle_method_scores_zero():
    rng = np.random.default_rng(8)
    pos = rng.standard_normal((200, 4)) + np.array([3.0, 0, 0, 0])
    neg = rng.standard_normal((200, 4)) - np.array([3.0, 0, 0, 0])
    stats_pos = population_stats(pos)
    stats_neg = population_stats(neg)

    def to_target_mean(p_src, s_src, s_trg):
        out = np.where(
            (s_trg > 0)[:, None], stats_pos.mean[None, :], stats_neg.mean[None, :]
        )
        return out

    test_params = np.concatenate([pos[:20], neg[:20]])
    test_scores = np.concatenate([np.abs(rng.standard_normal(20)) + 0.1, -np.abs(rng.standard_normal(20)) - 0.1])
    test_labels = np.concatenate([np.ones(20), -np.ones(20)])
    avg = mahalanobis_protocol(to_target_mean, test_params, test_scores, test_labels, stats_pos, stats_neg)
    assert avg == pytest.approx(0.0, abs=1e-12)


def test_mahalanobis_protocol_identity_worse_than_oracle():
    rng = np.random.default_rng(9)
    pos = rng.standard_normal((200, 4)) + np.array([3.0, 0, 0, 0])
    neg = rng.standard_normal((200, 4)) - np.array([3.0, 0, 0, 0])
    stats_pos = population_stats(pos)
    stats_neg = population_stats(neg)
    test_params = np.concatenate([pos[:20], neg[:20]])
    test_scores = np.concatenate([np.full(20, 1.0), np.full(20, -1.0)])
    test_labels = np.concatenate([np.ones(20), -np.ones(20)])
    identity = lambda p, s0, s1: p
    oracle = lambda p, s0, s1: np.where((s1 > 0)[:, None], stats_pos.mean[None, :], stats_neg.mean[None, :])
    d_id = mahalanobis_protocol(identity, test_params, test_scores, test_labels, stats_pos, stats_neg)
    d_or = mahalanobis_protocol(oracle, test_params, test_scores, test_labels, stats_pos, stats_neg)
    assert d_id > d_or
