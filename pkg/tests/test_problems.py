import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fedsketch.errors import DimensionError, ParameterError
from fedsketch.problems import (
    Dataset,
    LogisticProblem,
    Partition,
    gradient_variance,
    load_csv,
    make_logistic,
    make_quadratic,
    partition_heterogeneous,
    partition_homogeneous,
    stochastic_grad,
)


def fd_grad(problem, x, shard=None):
    g = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 * (1 + abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (problem.loss(x + e, shard) - problem.loss(x - e, shard)) / (2 * h)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12)


# -- quadratic ------------------------------------------------------------------------


def test_quadratic_identity_hessian_gradient():
    problem, part = make_quadratic(2, 5, 1, cond=1.0, heterogeneity=0.0, center=[3.0, -1.0])
    assert np.allclose(problem.full_grad(np.zeros(2)), [-3.0, 1.0])
    assert part.p == 1


def test_homogeneous_quadratic_optimum_is_center():
    problem, part = make_quadratic(6, 10, 4, cond=5.0, heterogeneity=0.0, seed=1)
    assert np.allclose(problem.optimum, problem.centers[0])
    assert problem.optimum_value == pytest.approx(0.0, abs=1e-20)
    for shard in part.shards:
        assert np.linalg.norm(problem.full_grad(problem.optimum, shard)) < 1e-12
    assert problem.smoothness_L == pytest.approx(5.0) and problem.pl_constant == pytest.approx(1.0)


def test_heterogeneous_quadratic_optimum_solves_weighted_system():
    problem, part = make_quadratic(5, 10, 8, cond=4.0, heterogeneity=1.0, seed=2)
    lam = problem.eigenvalues
    hessians = [Q @ np.diag(lam) @ Q.T for Q in problem.bases]
    lhs = sum(hessians) / 8
    rhs = sum(A @ b for A, b in zip(hessians, problem.centers)) / 8
    assert np.allclose(problem.optimum, np.linalg.solve(lhs, rhs))
    assert np.linalg.norm(problem.full_grad(problem.optimum)) < 1e-10
    spread = max(np.linalg.norm(problem.full_grad(problem.optimum, s)) for s in part.shards)
    assert spread > 0.1
    for j in range(8):
        assert np.allclose(problem.hessian(j), hessians[j])


def test_quadratic_per_sample_gradients_vanish_at_device_center():
    problem, part = make_quadratic(4, 6, 3, cond=3.0, heterogeneity=0.5, seed=3)
    for j, shard in enumerate(part.shards):
        grads = problem.sample_grads(problem.centers[j], shard)
        assert np.max(np.abs(grads)) < 1e-12


@pytest.mark.parametrize("cond,het", [(0.5, 0.0), (2.0, -1.0)])
def test_quadratic_invalid(cond, het):
    with pytest.raises(ParameterError):
        make_quadratic(3, 4, 2, cond, het)


@pytest.mark.parametrize("het", [0.0, 0.7])
def test_quadratic_finite_differences(het):
    problem, part = make_quadratic(6, 5, 3, cond=8.0, heterogeneity=het, seed=4)
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = rng.standard_normal(6) * 2
        assert rel_err(problem.full_grad(x), fd_grad(problem, x)) <= 1e-5
        idx = rng.integers(0, problem.n, size=3)
        sub = problem.batch_grad(x, idx)
        assert rel_err(sub, fd_grad(problem, x, idx)) <= 1e-5


# -- logistic -------------------------------------------------------------------------


def test_logistic_finite_differences():
    data = make_logistic(5, 200, 3, seed=1)
    problem = LogisticProblem(data)
    rng = np.random.default_rng(1)
    for _ in range(10):
        x = rng.standard_normal(problem.d)
        assert rel_err(problem.full_grad(x), fd_grad(problem, x)) <= 1e-5


def test_empty_logistic_rejected():
    with pytest.raises(ParameterError):
        make_logistic(5, 0, 3)
    with pytest.raises(ParameterError):
        make_logistic(5, 10, 1)


def test_separable_full_batch_gd_reaches_99_percent():
    data = make_logistic(10, 400, 2, seed=0, separation=8.0)
    problem = LogisticProblem(data)
    x = np.zeros(problem.d)
    step = 1.0 / problem.smoothness_L
    for _ in range(300):
        x -= step * problem.full_grad(x)
    assert problem.accuracy(x) >= 0.99


def test_logistic_smoothness_bounds_curvature():
    data = make_logistic(4, 300, 3, seed=2)
    problem = LogisticProblem(data)
    rng = np.random.default_rng(0)
    for _ in range(20):
        x, y = rng.standard_normal(problem.d), rng.standard_normal(problem.d)
        diff = np.linalg.norm(problem.full_grad(x) - problem.full_grad(y))
        assert diff <= problem.smoothness_L * np.linalg.norm(x - y) + 1e-12


# -- partitions -----------------------------------------------------------------------


@given(n=st.integers(1, 300), p=st.integers(1, 20), seed=st.integers(0, 1000))
def test_homogeneous_partition_covers_disjointly(n, p, seed):
    if p > n:
        with pytest.raises(ParameterError):
            partition_homogeneous(n, p, seed)
        return
    part = partition_homogeneous(n, p, seed)
    joined = np.concatenate(part.shards)
    assert np.array_equal(np.sort(joined), np.arange(n))
    assert part.weights.sum() == pytest.approx(1.0)
    sizes = [s.size for s in part.shards]
    assert max(sizes) - min(sizes) <= 1


def test_single_shard_partition():
    data = make_logistic(3, 50, 2)
    part = partition_homogeneous(data, 1)
    assert np.array_equal(part.shards[0], np.arange(50))
    assert part.weights.tolist() == [1.0]


def test_homogeneous_label_histograms():
    data = make_logistic(3, 1000, 4, seed=5)
    part = partition_homogeneous(data, 10, seed=5)
    share = np.bincount(data.y, minlength=4) / 1000
    for shard in part.shards:
        assert shard.size == 100
        counts = np.bincount(data.y[shard], minlength=4)
        sigma = np.sqrt(100 * share * (1 - share))
        assert np.all(np.abs(counts - 100 * share) <= 3 * sigma)


def test_heterogeneous_one_label_per_device():
    data = make_logistic(3, 1000, 10, seed=6)
    part = partition_heterogeneous(data, 10, 1, seed=6)
    for shard in part.shards:
        assert np.unique(data.y[shard]).size == 1
    assert np.array_equal(np.sort(np.concatenate(part.shards)), np.arange(1000))


@given(p=st.integers(1, 12), cpd=st.integers(1, 3), seed=st.integers(0, 100))
def test_heterogeneous_label_budget(p, cpd, seed):
    data = make_logistic(2, 240, 4, seed=seed)
    if p * cpd < 4:
        with pytest.raises(ParameterError):
            partition_heterogeneous(data, p, cpd, seed)
        return
    part = partition_heterogeneous(data, p, cpd, seed)
    for shard in part.shards:
        assert np.unique(data.y[shard]).size <= cpd
    assert np.array_equal(np.sort(np.concatenate(part.shards)), np.arange(240))


def test_partition_validation():
    with pytest.raises(ParameterError):
        partition_homogeneous(5, 6)
    with pytest.raises(ValueError):
        Partition([np.array([0, 1]), np.array([1, 2])], 3)
    with pytest.raises(ValueError):
        Partition([np.array([0, 1])], 3)


def test_heterogeneity_leaves_nonzero_shard_gradients():
    data = make_logistic(4, 800, 4, seed=7)
    problem = LogisticProblem(data)
    x = np.zeros(problem.d)
    for _ in range(200):
        x -= 0.5 / problem.smoothness_L * problem.full_grad(x)
    homo = partition_homogeneous(data, 4, seed=7)
    hetero = partition_heterogeneous(data, 4, 1, seed=7)
    spread = lambda part: max(np.linalg.norm(problem.full_grad(x, s)) for s in part.shards)  # noqa: E731
    assert spread(hetero) > 5 * spread(homo)


# -- gradient oracle ------------------------------------------------------------------


def test_full_pass_equals_full_grad():
    problem, part = make_quadratic(4, 20, 2, 3.0, 0.3, seed=1)
    x = np.ones(4)
    shard = part.shards[1]
    rng = np.random.default_rng(0)
    assert np.array_equal(stochastic_grad(problem, shard, x, shard.size, rng, full_pass=True), problem.full_grad(x, shard))
    assert np.array_equal(stochastic_grad(problem, shard, x, None, rng), problem.full_grad(x, shard))


def test_minibatch_is_unbiased():
    data = make_logistic(3, 120, 3, seed=8)
    problem = LogisticProblem(data)
    shard = np.arange(0, 120, 2)
    x = np.random.default_rng(1).standard_normal(problem.d)
    rng = np.random.default_rng(2)
    draws = np.array([stochastic_grad(problem, shard, x, 4, rng) for _ in range(10_000)])
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - problem.full_grad(x, shard)) <= 4 * se + 1e-15)


def test_batch_size_range():
    problem, part = make_quadratic(3, 5, 1, 2.0, 0.0)
    rng = np.random.default_rng(0)
    for b in (0, 6):
        with pytest.raises(ParameterError):
            stochastic_grad(problem, part.shards[0], np.zeros(3), b, rng)


def test_gradient_variance_matches_definition():
    problem, part = make_quadratic(3, 8, 1, 2.0, 0.0, seed=2)
    x = np.full(3, 2.0)
    grads = np.stack([problem.batch_grad(x, [i]) for i in part.shards[0]])
    expected = np.mean(np.sum((grads - grads.mean(axis=0)) ** 2, axis=1))
    assert gradient_variance(problem, part.shards[0], x) == pytest.approx(expected)
    assert np.isfinite(expected) and expected > 0


def test_model_dimension_checked():
    problem = LogisticProblem(make_logistic(3, 10, 2))
    with pytest.raises(DimensionError):
        problem.loss(np.zeros(5))


# -- CSV ------------------------------------------------------------------------------


def test_load_csv_with_and_without_header(tmp_path):
    body = "1.0,2.0,0\n3.0,4.5,1\n-1,0,2\n"
    plain = tmp_path / "plain.csv"
    plain.write_text(body)
    headed = tmp_path / "headed.csv"
    headed.write_text("a,b,label\n" + body)
    for path in (plain, headed):
        data = load_csv(path)
        assert data.X.shape == (3, 2) and data.y.tolist() == [0, 1, 2] and data.classes == 3


@pytest.mark.parametrize(
    "text,error",
    [
        ("1,2,0\n3,1\n", DimensionError),
        ("1,2,0.5\n", ParameterError),
        ("1,2,-1\n", ParameterError),
        ("1,x,0\n", ParameterError),
        ("a,b,c\n", ParameterError),
        ("", ParameterError),
    ],
)
def test_load_csv_rejects_bad_files(tmp_path, text, error):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(error):
        load_csv(path)


def test_load_csv_label_range(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("1,0\n2,3\n")
    with pytest.raises(ParameterError):
        load_csv(path, classes=3)
    assert load_csv(path, classes=4).classes == 4


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
